#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gridflow/checkpoint.hpp"
#include "gridflow/exact.hpp"
#include "gridflow/losses.hpp"
#include "gridflow/trainer.hpp"

namespace py = pybind11;
using namespace gridflow;

namespace {

LossSpec spec_from_kwargs(const std::string& kind, double delta, double lambda,
                          const std::string& entropy_mode, int entropy_rollouts,
                          int entropy_refresh) {
  LossSpec spec;
  spec.kind = loss_kind_from_name(kind);
  spec.delta = delta;
  spec.lambda = lambda;
  spec.entropy_mode =
      entropy_mode == "mc" ? EntropyMode::kMonteCarlo : EntropyMode::kExactDp;
  spec.entropy_rollouts = entropy_rollouts;
  spec.entropy_refresh = entropy_refresh;
  return spec;
}

py::dict row_to_dict(const MetricsRow& row) {
  py::dict d;
  d["step"] = row.step;
  d["loss_value"] = row.loss_value;
  d["l1_exact"] = row.l1_exact;
  d["l1_empirical"] = row.l1_empirical;
  d["log_z"] = row.log_z;
  d["mean_entropy"] = row.mean_entropy;
  d["modes_found"] = row.modes_found;
  d["elapsed_ms"] = row.elapsed_ms;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gridflow, m) {
  m.doc() = "Flow-network training on hypergrid environments";
#ifdef GRIDFLOW_VERSION
  m.attr("__version__") = GRIDFLOW_VERSION;
#endif

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<BudgetError>(m, "BudgetError");
  py::register_exception<NumericsError>(m, "NumericsError");
  py::register_exception<ContractError>(m, "ContractError");

  py::class_<Hypergrid>(m, "Hypergrid")
      .def(py::init([](int dim, int horizon, double r0, const std::string& closure) {
             return Hypergrid(Hypergrid::Config{
                 .dim = dim,
                 .horizon = horizon,
                 .r0 = r0,
                 .closure = closure == "half-open" ? IntervalClosure::kHalfOpen
                                                   : IntervalClosure::kOpen});
           }),
           py::arg("dim"), py::arg("horizon"), py::arg("r0") = 0.1,
           py::arg("closure") = "open")
      .def_property_readonly("dim", &Hypergrid::dim)
      .def_property_readonly("horizon", &Hypergrid::horizon)
      .def_property_readonly("r0", &Hypergrid::r0)
      .def_property_readonly("num_states", &Hypergrid::num_states)
      .def("coords_of",
           [](const Hypergrid& env, StateIndex s) { return env.coords_of(s); })
      .def("index_of",
           [](const Hypergrid& env, const std::vector<int>& coords) {
             return env.index_of(coords);
           })
      .def("reward",
           [](const Hypergrid& env, StateIndex s) { return env.reward(s); })
      .def("num_children",
           [](const Hypergrid& env, StateIndex s) { return env.num_children(s); })
      .def("num_parents",
           [](const Hypergrid& env, StateIndex s) { return env.num_parents(s); })
      .def("is_branching",
           [](const Hypergrid& env, StateIndex s) { return env.is_branching(s); });

  py::class_<Trajectory>(m, "Trajectory")
      .def_readonly("states", &Trajectory::states)
      .def_readonly("log_pf", &Trajectory::log_pf)
      .def_readonly("log_pb", &Trajectory::log_pb)
      .def_property_readonly("terminal", &Trajectory::terminal)
      .def_property_readonly("actions", [](const Trajectory& traj) {
        std::vector<int> dims;
        for (const ActionId& action : traj.actions) dims.push_back(action.dim);
        return dims;  // -1 encodes Terminate
      });

  py::class_<FlowParams>(m, "FlowParams")
      .def_readwrite("log_z", &FlowParams::log_z)
      .def("state_log_flow", &FlowParams::state_log_flow)
      .def("logits_of", [](const FlowParams& params, StateIndex s) {
        const auto view = params.logits_of(s);
        return std::vector<double>(view.begin(), view.end());
      });

  m.def("init_params",
        [](const Hypergrid& env) { return init_params(env); },
        py::arg("env"));

  m.def(
      "sample_trajectories",
      [](const FlowParams& params, const Hypergrid& env, int count,
         std::uint64_t seed, double epsilon, std::uint64_t step) {
        return sample_batch(params, env, SampleConfig{epsilon, seed}, step, count);
      },
      py::arg("params"), py::arg("env"), py::arg("count"), py::arg("seed") = 0,
      py::arg("epsilon") = 0.0, py::arg("step") = 0);

  m.def(
      "batch_loss",
      [](const FlowParams& params, const Hypergrid& env,
         const std::vector<Trajectory>& batch, const std::string& kind,
         double delta, double lambda, const std::string& entropy_mode,
         int entropy_rollouts, int entropy_refresh) {
        const LossSpec spec = spec_from_kwargs(kind, delta, lambda, entropy_mode,
                                               entropy_rollouts, entropy_refresh);
        if (spec.kind == LossKind::kSubGfn) {
          EntropyCache cache;
          cache.refresh(params, env, batch, spec, 0, 0);
          return batch_loss(params, env, batch, spec, &cache);
        }
        return batch_loss(params, env, batch, spec);
      },
      py::arg("params"), py::arg("env"), py::arg("batch"), py::arg("kind"),
      py::arg("delta") = 1e-6, py::arg("lambda") = 0.99,
      py::arg("entropy_mode") = "dp", py::arg("entropy_rollouts") = 64,
      py::arg("entropy_refresh") = 100);

  m.def(
      "subnet_entropy",
      [](const FlowParams& params, const Hypergrid& env, StateIndex s,
         const std::string& mode, int rollouts, std::uint64_t seed) {
        if (mode == "mc") {
          CounterRng rng(CounterRng::derive_key(seed, s));
          return subnet_entropy(params, env, s, EntropyMode::kMonteCarlo,
                                rollouts, &rng);
        }
        return subnet_entropy(params, env, s, EntropyMode::kExactDp);
      },
      py::arg("params"), py::arg("env"), py::arg("state"), py::arg("mode") = "dp",
      py::arg("rollouts") = 64, py::arg("seed") = 0);

  m.def(
      "terminating_distribution",
      [](const FlowParams& params, const Hypergrid& env) {
        return terminating_distribution(params, env, env.source()).p;
      },
      py::arg("params"), py::arg("env"));

  m.def(
      "true_distribution",
      [](const Hypergrid& env) { return true_distribution(env).p; },
      py::arg("env"));

  m.def(
      "l1_distance",
      [](const std::vector<double>& p, const std::vector<double>& q) {
        return l1_distance(TerminalDistribution{p}, TerminalDistribution{q});
      },
      py::arg("p"), py::arg("q"));

  m.def(
      "optimal_params",
      [](const Hypergrid& env) {
        return params_from_flows(env, brute_force_flows(env));
      },
      py::arg("env"),
      "Exact tabular optimum built from brute-force flows; every objective "
      "evaluates to zero on it.");

  m.def(
      "grad_check",
      [](const FlowParams& params, const Hypergrid& env,
         const std::vector<Trajectory>& batch, const std::string& kind,
         double h) {
        const LossSpec spec = spec_from_kwargs(kind, 1e-6, 0.99, "dp", 64, 100);
        EntropyCache cache;
        cache.refresh(params, env, batch, spec, 0, 0);
        return grad_check(params, env, batch, spec, h, &cache);
      },
      py::arg("params"), py::arg("env"), py::arg("batch"), py::arg("kind"),
      py::arg("h") = 1e-5);

  m.def(
      "train",
      [](const Hypergrid& env, const std::string& kind, std::int64_t steps,
         int batch_size, std::uint64_t seed, double lr, double lr_logz,
         std::int64_t eval_every, double epsilon, double delta, double lambda,
         const std::string& entropy_mode, int entropy_rollouts,
         int entropy_refresh) {
        TrainConfig config;
        config.loss = spec_from_kwargs(kind, delta, lambda, entropy_mode,
                                       entropy_rollouts, entropy_refresh);
        config.steps = steps;
        config.batch_size = batch_size;
        config.seed = seed;
        config.lr_policy = lr;
        config.lr_logz_flow = lr_logz;
        config.eval_every = eval_every;
        config.epsilon = epsilon;
        TrainResult result = train_run(env, config);
        py::list metrics;
        for (const MetricsRow& row : result.metrics) metrics.append(row_to_dict(row));
        return py::make_tuple(std::move(result.params), metrics);
      },
      py::arg("env"), py::arg("kind") = "tb", py::arg("steps") = 1000,
      py::arg("batch_size") = 8, py::arg("seed") = 0, py::arg("lr") = 1e-3,
      py::arg("lr_logz") = 1e-1, py::arg("eval_every") = 250,
      py::arg("epsilon") = 0.0, py::arg("delta") = 1e-6,
      py::arg("lambda") = 0.99, py::arg("entropy_mode") = "dp",
      py::arg("entropy_rollouts") = 64, py::arg("entropy_refresh") = 100);

  m.def(
      "evaluate",
      [](const FlowParams& params, const Hypergrid& env) {
        return row_to_dict(evaluate(params, env, 0, 0.0));
      },
      py::arg("params"), py::arg("env"));

  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("params"),
        py::arg("env"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"), py::arg("env"));
}
