#pragma once

#include <string>
#include <vector>

#include "gridflow/metrics.hpp"
#include "gridflow/trainer.hpp"

namespace gridflow {

inline constexpr const char* kVersion = "0.1.0";

/// The experiment grid: every (dim, horizon, loss, seed) combination is one
/// independent training cell. Loss hyperparameters (delta, lambda, entropy
/// settings) are shared across cells; only the kind varies.
struct RunMatrix {
  std::vector<int> dims{2, 3, 4};
  std::vector<int> horizons{8, 16, 32};
  std::vector<LossKind> losses{LossKind::kTb, LossKind::kSubTb,
                               LossKind::kSubGfn};
  std::vector<std::uint64_t> seeds{0};
  double r0 = 0.1;
  IntervalClosure closure = IntervalClosure::kOpen;
  TrainConfig base{};       // loss.kind and seed are overwritten per cell
  int jobs = 1;
  std::string out_dir = "out";
  bool timing = false;      // write measured elapsed_ms into the CSVs

  void validate() const;  // nonempty lists, budgets, training config
};

struct ParseOutcome {
  RunMatrix matrix;
  bool help = false;
  std::string help_text;
};

/// Command-line flags layered over an optional flat JSON config file layered
/// over defaults. Unknown flags or JSON keys raise ConfigError.
ParseOutcome parse_config(const std::vector<std::string>& args);

struct CellResult {
  CellId id;
  std::vector<MetricsRow> metrics;
  bool failed = false;
  std::string error;
};

/// Runs every cell of the matrix (up to `jobs` in parallel), in deterministic
/// cell order. A failing cell is recorded and skipped. Progress goes to
/// stderr.
std::vector<CellResult> run_experiment(const RunMatrix& matrix);

/// Writes one CSV per cell, a combined CSV, one L1-convergence SVG per
/// (dim, horizon) overlaying the losses (median across seeds), and a
/// manifest.json with the fully resolved configuration. Files are written
/// atomically (temp + rename). Throws IoError on filesystem failures.
void write_outputs(const RunMatrix& matrix,
                   const std::vector<CellResult>& results);

}  // namespace gridflow
