#include "gridflow/sweep.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "gridflow/svg.hpp"

namespace fs = std::filesystem;

namespace gridflow {

void RunMatrix::validate() const {
  if (dims.empty() || horizons.empty() || losses.empty() || seeds.empty())
    throw ConfigError("matrix: dims, horizons, losses and seeds must be nonempty");
  if (jobs < 1) throw ConfigError("matrix: jobs must be >= 1");
  base.validate();
  // Constructing the environment enforces the enumeration budget per cell.
  for (int dim : dims)
    for (int horizon : horizons)
      Hypergrid(Hypergrid::Config{
          .dim = dim, .horizon = horizon, .r0 = r0, .closure = closure});
}

namespace {

const std::map<std::string, std::string> kLossColors = {
    {"tb", "#d62728"},     // red, the convention used throughout
    {"subtb", "#2ca02c"},  // green
    {"subgfn", "#1f77b4"}, // blue
    {"fm", "#ff7f0e"},
    {"db", "#9467bd"},
};

std::vector<int> as_int_list(const nlohmann::json& value, const std::string& key) {
  std::vector<int> out;
  if (value.is_array())
    for (const auto& v : value) out.push_back(v.get<int>());
  else
    out.push_back(value.get<int>());
  if (out.empty()) throw ConfigError("config: '" + key + "' must be nonempty");
  return out;
}

std::vector<std::string> as_string_list(const nlohmann::json& value,
                                        const std::string& key) {
  std::vector<std::string> out;
  if (value.is_array())
    for (const auto& v : value) out.push_back(v.get<std::string>());
  else
    out.push_back(value.get<std::string>());
  if (out.empty()) throw ConfigError("config: '" + key + "' must be nonempty");
  return out;
}

std::vector<LossKind> to_loss_kinds(const std::vector<std::string>& names) {
  std::vector<LossKind> kinds;
  kinds.reserve(names.size());
  for (const std::string& name : names) kinds.push_back(loss_kind_from_name(name));
  return kinds;
}

EntropyMode entropy_mode_from_name(const std::string& name) {
  if (name == "dp") return EntropyMode::kExactDp;
  if (name == "mc") return EntropyMode::kMonteCarlo;
  throw ConfigError("unknown entropy mode '" + name + "' (expected dp|mc)");
}

IntervalClosure closure_from_name(const std::string& name) {
  if (name == "open") return IntervalClosure::kOpen;
  if (name == "half-open") return IntervalClosure::kHalfOpen;
  throw ConfigError("unknown interval closure '" + name +
                    "' (expected open|half-open)");
}

void apply_json_config(const std::string& path, RunMatrix& matrix) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + err.what());
  }
  if (!doc.is_object()) throw ConfigError("config: expected a flat JSON object");

  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "dim") matrix.dims = as_int_list(value, key);
      else if (key == "horizon") matrix.horizons = as_int_list(value, key);
      else if (key == "loss") matrix.losses = to_loss_kinds(as_string_list(value, key));
      else if (key == "seed") {
        matrix.seeds.clear();
        if (value.is_array())
          for (const auto& v : value) matrix.seeds.push_back(v.get<std::uint64_t>());
        else
          matrix.seeds.push_back(value.get<std::uint64_t>());
      }
      else if (key == "r0") matrix.r0 = value.get<double>();
      else if (key == "interval-closure")
        matrix.closure = closure_from_name(value.get<std::string>());
      else if (key == "lambda") matrix.base.loss.lambda = value.get<double>();
      else if (key == "delta") matrix.base.loss.delta = value.get<double>();
      else if (key == "steps") matrix.base.steps = value.get<std::int64_t>();
      else if (key == "batch-size") matrix.base.batch_size = value.get<int>();
      else if (key == "lr") matrix.base.lr_policy = value.get<double>();
      else if (key == "lr-logz") matrix.base.lr_logz_flow = value.get<double>();
      else if (key == "epsilon") matrix.base.epsilon = value.get<double>();
      else if (key == "eval-every") matrix.base.eval_every = value.get<std::int64_t>();
      else if (key == "entropy-mode")
        matrix.base.loss.entropy_mode = entropy_mode_from_name(value.get<std::string>());
      else if (key == "entropy-refresh")
        matrix.base.loss.entropy_refresh = value.get<int>();
      else if (key == "entropy-rollouts")
        matrix.base.loss.entropy_rollouts = value.get<int>();
      else if (key == "jobs") matrix.jobs = value.get<int>();
      else if (key == "out") matrix.out_dir = value.get<std::string>();
      else if (key == "timing") matrix.timing = value.get<bool>();
      else throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& err) {
    throw ConfigError("config: bad value type: " + std::string(err.what()));
  }
}

}  // namespace

ParseOutcome parse_config(const std::vector<std::string>& args) {
  CLI::App app{"gridflow - flow-network training on hypergrid environments"};
  app.name("gridflow");

  std::vector<int> dims, horizons;
  std::vector<std::string> losses;
  std::vector<std::uint64_t> seeds;
  double r0 = 0.1, lambda = 0.99, delta = 1e-6, lr = 1e-3, lr_logz = 1e-1,
         epsilon = 0.0;
  std::int64_t steps = 20'000, eval_every = 250;
  int batch_size = 8, entropy_refresh = 100, entropy_rollouts = 64, jobs = 1;
  std::string entropy_mode = "dp", closure = "open", out = "out", config_path;
  bool timing = false;

  app.add_option("--dim", dims, "grid dimensionalities (default 2 3 4)");
  app.add_option("--horizon", horizons, "grid side lengths (default 8 16 32)");
  app.add_option("--r0", r0, "baseline reward R0 (default 0.1)");
  app.add_option("--loss", losses,
                 "objectives: fm|db|tb|subtb|subgfn (default tb subtb subgfn)");
  app.add_option("--lambda", lambda, "SubTB geometric weight (default 0.99)");
  app.add_option("--delta", delta, "FM/DB log regularizer (default 1e-6)");
  app.add_option("--steps", steps, "optimizer steps per cell (default 20000)");
  app.add_option("--batch-size", batch_size, "trajectories per step (default 8)");
  app.add_option("--seed", seeds, "run seeds (default 0)");
  app.add_option("--lr", lr, "policy-logit learning rate (default 1e-3)");
  app.add_option("--lr-logz", lr_logz, "log Z / log-flow learning rate (default 0.1)");
  app.add_option("--epsilon", epsilon, "uniform exploration mix (default 0)");
  app.add_option("--eval-every", eval_every, "steps between metric rows (default 250)");
  app.add_option("--entropy-mode", entropy_mode, "subflow entropy estimator: dp|mc");
  app.add_option("--entropy-refresh", entropy_refresh,
                 "steps between entropy weight refreshes (default 100)");
  app.add_option("--entropy-rollouts", entropy_rollouts,
                 "Monte-Carlo rollouts per entropy estimate (default 64)");
  app.add_option("--interval-closure", closure,
                 "reward interval endpoints: open|half-open (default open)");
  app.add_option("--jobs", jobs, "cells to run in parallel (default 1)");
  app.add_option("--out", out, "output directory (default ./out)");
  app.add_flag("--timing", timing, "record wall-clock elapsed_ms in the CSVs");
  app.add_option("--config", config_path, "flat JSON config file (flags win)");

  std::vector<const char*> argv{"gridflow"};
  for (const std::string& arg : args) argv.push_back(arg.c_str());

  ParseOutcome outcome;
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    outcome.help = true;
    outcome.help_text = app.help();
    return outcome;
  } catch (const CLI::ParseError& err) {
    throw ConfigError(err.what());
  }

  RunMatrix& matrix = outcome.matrix;
  if (app.count("--config") > 0) apply_json_config(config_path, matrix);

  if (app.count("--dim") > 0) matrix.dims = dims;
  if (app.count("--horizon") > 0) matrix.horizons = horizons;
  if (app.count("--loss") > 0) matrix.losses = to_loss_kinds(losses);
  if (app.count("--seed") > 0) matrix.seeds = seeds;
  if (app.count("--r0") > 0) matrix.r0 = r0;
  if (app.count("--interval-closure") > 0)
    matrix.closure = closure_from_name(closure);
  if (app.count("--lambda") > 0) matrix.base.loss.lambda = lambda;
  if (app.count("--delta") > 0) matrix.base.loss.delta = delta;
  if (app.count("--steps") > 0) matrix.base.steps = steps;
  if (app.count("--batch-size") > 0) matrix.base.batch_size = batch_size;
  if (app.count("--lr") > 0) matrix.base.lr_policy = lr;
  if (app.count("--lr-logz") > 0) matrix.base.lr_logz_flow = lr_logz;
  if (app.count("--epsilon") > 0) matrix.base.epsilon = epsilon;
  if (app.count("--eval-every") > 0) matrix.base.eval_every = eval_every;
  if (app.count("--entropy-mode") > 0)
    matrix.base.loss.entropy_mode = entropy_mode_from_name(entropy_mode);
  if (app.count("--entropy-refresh") > 0)
    matrix.base.loss.entropy_refresh = entropy_refresh;
  if (app.count("--entropy-rollouts") > 0)
    matrix.base.loss.entropy_rollouts = entropy_rollouts;
  if (app.count("--jobs") > 0) matrix.jobs = jobs;
  if (app.count("--out") > 0) matrix.out_dir = out;
  if (app.count("--timing") > 0) matrix.timing = timing;

  matrix.validate();
  return outcome;
}

namespace {

std::string cell_name(const CellId& id) {
  return "d" + std::to_string(id.dim) + "_h" + std::to_string(id.horizon) +
         "_" + loss_kind_name(id.loss) + "_s" + std::to_string(id.seed);
}

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() +
                  "': " + ec.message());
}

}  // namespace

std::vector<CellResult> run_experiment(const RunMatrix& matrix) {
  matrix.validate();
  std::error_code ec;
  fs::create_directories(matrix.out_dir, ec);
  if (ec)
    throw IoError("cannot create output directory '" + matrix.out_dir +
                  "': " + ec.message());

  std::vector<CellId> cells;
  for (int dim : matrix.dims)
    for (int horizon : matrix.horizons)
      for (LossKind loss : matrix.losses)
        for (std::uint64_t seed : matrix.seeds)
          cells.push_back(CellId{dim, horizon, loss, seed});

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      CellResult& result = results[i];
      result.id = cells[i];
      const auto started = std::chrono::steady_clock::now();
      try {
        const Hypergrid env(Hypergrid::Config{.dim = result.id.dim,
                                              .horizon = result.id.horizon,
                                              .r0 = matrix.r0,
                                              .closure = matrix.closure});
        TrainConfig config = matrix.base;
        config.loss.kind = result.id.loss;
        config.seed = result.id.seed;
        config.abort_checkpoint =
            (fs::path(matrix.out_dir) / (cell_name(result.id) + ".abort.ckpt"))
                .string();
        TrainResult train = train_run(env, config);
        result.metrics = std::move(train.metrics);

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          started)
                .count();
        const std::scoped_lock lock(log_mutex);
        std::cerr << "[" << cell_name(result.id) << "] done in "
                  << format_double(seconds) << " s";
        if (!result.metrics.empty())
          std::cerr << ", final l1_exact="
                    << format_double(result.metrics.back().l1_exact);
        std::cerr << "\n";
      } catch (const std::exception& err) {
        result.failed = true;
        result.error = err.what();
        const std::scoped_lock lock(log_mutex);
        std::cerr << "[" << cell_name(result.id) << "] FAILED: " << err.what()
                  << "\n";
      }
    }
  };

  const std::size_t thread_count =
      std::min<std::size_t>(static_cast<std::size_t>(matrix.jobs), cells.size());
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(thread_count);
    for (std::size_t i = 0; i < thread_count; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  return results;
}

void write_outputs(const RunMatrix& matrix,
                   const std::vector<CellResult>& results) {
  std::error_code ec;
  fs::create_directories(matrix.out_dir, ec);
  if (ec)
    throw IoError("cannot create output directory '" + matrix.out_dir +
                  "': " + ec.message());
  const fs::path out_dir(matrix.out_dir);

  std::string combined = csv_header() + "\n";
  for (const CellResult& result : results) {
    if (result.failed) continue;
    std::string cell_csv = csv_header() + "\n";
    for (const MetricsRow& row : result.metrics) {
      const std::string line = csv_row(result.id, row, matrix.timing);
      cell_csv += line + "\n";
      combined += line + "\n";
    }
    atomic_write(out_dir / (cell_name(result.id) + ".csv"), cell_csv);
  }
  atomic_write(out_dir / "combined.csv", combined);

  // One chart per (dim, horizon); each loss contributes the median l1_exact
  // across its successful seeds.
  for (int dim : matrix.dims)
    for (int horizon : matrix.horizons) {
      std::vector<SvgSeries> series;
      for (LossKind loss : matrix.losses) {
        std::vector<const CellResult*> runs;
        for (const CellResult& result : results)
          if (!result.failed && result.id.dim == dim &&
              result.id.horizon == horizon && result.id.loss == loss)
            runs.push_back(&result);
        if (runs.empty()) continue;

        SvgSeries s;
        s.label = loss_kind_name(loss);
        const auto color = kLossColors.find(s.label);
        s.color = color != kLossColors.end() ? color->second : "#555555";
        const std::size_t rows = runs.front()->metrics.size();
        for (std::size_t r = 0; r < rows; ++r) {
          std::vector<double> values;
          for (const CellResult* run : runs)
            if (r < run->metrics.size())
              values.push_back(run->metrics[r].l1_exact);
          if (values.empty()) continue;
          std::sort(values.begin(), values.end());
          const std::size_t mid = values.size() / 2;
          const double median = values.size() % 2 == 1
                                    ? values[mid]
                                    : 0.5 * (values[mid - 1] + values[mid]);
          s.points.emplace_back(
              static_cast<double>(runs.front()->metrics[r].step), median);
        }
        series.push_back(std::move(s));
      }
      if (series.empty()) continue;
      const std::string title = "L1 distance to target, dim=" +
                                std::to_string(dim) +
                                ", horizon=" + std::to_string(horizon);
      atomic_write(out_dir / ("l1_d" + std::to_string(dim) + "_h" +
                              std::to_string(horizon) + ".svg"),
                   render_line_chart(title, "training step", "L1 distance",
                                     series));
    }

  nlohmann::ordered_json manifest;
  manifest["version"] = kVersion;
  manifest["dim"] = matrix.dims;
  manifest["horizon"] = matrix.horizons;
  {
    std::vector<std::string> names;
    for (LossKind loss : matrix.losses) names.push_back(loss_kind_name(loss));
    manifest["loss"] = names;
  }
  manifest["seed"] = matrix.seeds;
  manifest["r0"] = matrix.r0;
  manifest["interval-closure"] =
      matrix.closure == IntervalClosure::kOpen ? "open" : "half-open";
  manifest["lambda"] = matrix.base.loss.lambda;
  manifest["delta"] = matrix.base.loss.delta;
  manifest["steps"] = matrix.base.steps;
  manifest["batch-size"] = matrix.base.batch_size;
  manifest["lr"] = matrix.base.lr_policy;
  manifest["lr-logz"] = matrix.base.lr_logz_flow;
  manifest["epsilon"] = matrix.base.epsilon;
  manifest["eval-every"] = matrix.base.eval_every;
  manifest["entropy-mode"] =
      matrix.base.loss.entropy_mode == EntropyMode::kExactDp ? "dp" : "mc";
  manifest["entropy-refresh"] = matrix.base.loss.entropy_refresh;
  manifest["entropy-rollouts"] = matrix.base.loss.entropy_rollouts;
  manifest["jobs"] = matrix.jobs;
  manifest["timing"] = matrix.timing;
  manifest["out"] = matrix.out_dir;
  atomic_write(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace gridflow
