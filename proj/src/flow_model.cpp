#include "gridflow/flow_model.hpp"

#include <algorithm>
#include <cmath>

namespace gridflow {
namespace {

// log-softmax into `out`; returns the log-sum-exp.
double log_softmax(std::span<const double> logits, std::span<double> out) {
  double max = logits[0];
  for (double v : logits) max = std::max(max, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - max);
  const double lse = max + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return lse;
}

}  // namespace

std::shared_ptr<const FlowLayout> FlowLayout::build(const Hypergrid& env) {
  auto layout = std::make_shared<FlowLayout>();
  const StateIndex n = env.num_states();
  layout->child_off.resize(n + 1);
  layout->parent_off.resize(n + 1);
  std::uint64_t child_total = 0;
  std::uint64_t parent_total = 0;
  for (StateIndex s = 0; s < n; ++s) {
    layout->child_off[s] = child_total;
    layout->parent_off[s] = parent_total;
    child_total += static_cast<std::uint64_t>(env.num_children(s));
    parent_total += static_cast<std::uint64_t>(env.num_parents(s));
  }
  layout->child_off[n] = child_total;
  layout->parent_off[n] = parent_total;
  return layout;
}

FlowParams init_params(const Hypergrid& env, InitScheme scheme,
                       BackwardMode backward_mode) {
  (void)scheme;  // kZeros is the only scheme
  FlowParams params;
  params.layout = FlowLayout::build(env);
  params.log_z = 0.0;
  params.logits.assign(params.layout->num_child_slots(), 0.0);
  params.log_state_flow.assign(env.num_states(), 0.0);
  params.backward_mode = backward_mode;
  if (backward_mode == BackwardMode::kLearned)
    params.back_logits.assign(params.layout->num_parent_slots(), 0.0);
  return params;
}

void forward_log_policy(const FlowParams& params, const Hypergrid& env,
                        StateIndex s, std::span<double> log_probs) {
  (void)env;
  log_softmax(params.logits_of(s), log_probs);
}

void forward_policy(const FlowParams& params, const Hypergrid& env,
                    StateIndex s, std::span<double> probs) {
  forward_log_policy(params, env, s, probs);
  for (double& p : probs) p = std::exp(p);
}

double forward_log_prob(const FlowParams& params, const Hypergrid& env,
                        StateIndex s, int child_slot) {
  const int arity = params.layout->arity(s);
  double buf[kMaxDims + 1];
  forward_log_policy(params, env, s, {buf, static_cast<std::size_t>(arity)});
  return buf[child_slot];
}

void backward_policy(const FlowParams& params, const Hypergrid& env,
                     StateIndex s, std::span<double> probs) {
  const int count = env.num_parents(s);
  if (count == 0)
    throw ContractError("backward_policy: the source state has no parents");
  if (params.backward_mode == BackwardMode::kUniform) {
    const double p = 1.0 / static_cast<double>(count);
    for (int i = 0; i < count; ++i) probs[i] = p;
    return;
  }
  const std::uint64_t off = params.layout->parent_off[s];
  log_softmax({params.back_logits.data() + off, static_cast<std::size_t>(count)},
              probs);
  for (int i = 0; i < count; ++i) probs[i] = std::exp(probs[i]);
}

double backward_log_prob(const FlowParams& params, const Hypergrid& env,
                         StateIndex s, int parent_slot) {
  const int count = env.num_parents(s);
  if (count == 0)
    throw ContractError("backward_log_prob: the source state has no parents");
  if (params.backward_mode == BackwardMode::kUniform)
    return -std::log(static_cast<double>(count));
  const std::uint64_t off = params.layout->parent_off[s];
  double buf[kMaxDims];
  log_softmax({params.back_logits.data() + off, static_cast<std::size_t>(count)},
              {buf, static_cast<std::size_t>(count)});
  return buf[parent_slot];
}

Trajectory sample_trajectory(const FlowParams& params, const Hypergrid& env,
                             const SampleConfig& config, CounterRng& rng) {
  if (config.epsilon < 0.0 || config.epsilon > 1.0)
    throw ConfigError("sample_trajectory: epsilon must lie in [0, 1]");

  Trajectory traj;
  traj.states.push_back(env.source());

  double logp[kMaxDims + 1];
  const int max_actions = env.max_trajectory_actions();
  for (int step = 0;; ++step) {
    if (step >= max_actions)
      throw NumericsError(
          "sample_trajectory: trajectory exceeded the maximum action count; "
          "the environment transition tables are inconsistent");

    const StateIndex s = traj.states.back();
    const ChildList kids = env.children(s);
    const auto arity = static_cast<std::size_t>(kids.count);
    forward_log_policy(params, env, s, {logp, arity});

    const double u = rng.next_double();
    double cum = 0.0;
    int picked = kids.count - 1;  // guard against cum rounding below 1
    const double mix = config.epsilon / static_cast<double>(kids.count);
    for (int c = 0; c < kids.count; ++c) {
      cum += (1.0 - config.epsilon) * std::exp(logp[c]) + mix;
      if (u < cum) {
        picked = c;
        break;
      }
    }

    traj.log_pf.push_back(logp[picked]);
    traj.actions.push_back(kids.edge[picked].action);
    if (kids.edge[picked].action.is_terminate()) break;

    const StateIndex next = kids.edge[picked].next;
    const int pslot = env.parent_slot(next, kids.edge[picked].action.dim);
    traj.log_pb.push_back(backward_log_prob(params, env, next, pslot));
    traj.states.push_back(next);
  }
  return traj;
}

std::vector<Trajectory> sample_batch(const FlowParams& params,
                                     const Hypergrid& env,
                                     const SampleConfig& config,
                                     std::uint64_t step, int count) {
  std::vector<Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    CounterRng rng = CounterRng::from_stream(
        config.rng_seed, static_cast<std::uint64_t>(RngDomain::kSample), step,
        static_cast<std::uint64_t>(i));
    batch.push_back(sample_trajectory(params, env, config, rng));
  }
  return batch;
}

void score_trajectory(const FlowParams& params, const Hypergrid& env,
                      Trajectory& trajectory) {
  const int n = trajectory.num_transitions();
  trajectory.log_pf.assign(static_cast<std::size_t>(n) + 1, 0.0);
  trajectory.log_pb.assign(static_cast<std::size_t>(n), 0.0);

  double logp[kMaxDims + 1];
  for (int t = 0; t <= n; ++t) {
    const StateIndex s = trajectory.states[static_cast<std::size_t>(t)];
    const auto arity = static_cast<std::size_t>(params.layout->arity(s));
    forward_log_policy(params, env, s, {logp, arity});
    const ActionId action = trajectory.actions[static_cast<std::size_t>(t)];
    trajectory.log_pf[static_cast<std::size_t>(t)] =
        logp[env.child_slot(s, action)];
    if (!action.is_terminate()) {
      const StateIndex next = trajectory.states[static_cast<std::size_t>(t) + 1];
      trajectory.log_pb[static_cast<std::size_t>(t)] = backward_log_prob(
          params, env, next, env.parent_slot(next, action.dim));
    }
  }
}

}  // namespace gridflow
