#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridflow/exact.hpp"
#include "gridflow/losses.hpp"
#include "gridflow/metrics.hpp"

namespace gridflow {

struct TrainConfig {
  std::int64_t steps = 20'000;
  int batch_size = 8;
  double lr_policy = 1e-3;      // forward/backward logits
  double lr_logz_flow = 1e-1;   // log_z and log state-flows
  std::uint64_t seed = 0;
  std::int64_t eval_every = 250;
  LossSpec loss{};
  double epsilon = 0.0;
  int empirical_window = 200'000;  // sliding window of terminal samples
  std::string abort_checkpoint;    // written on numerical abort if nonempty

  void validate() const;
};

/// Adam accumulators, shaped like FlowParams. Policy parameters and the
/// flow/Z group carry separate learning rates.
struct OptState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;

  double m_log_z = 0.0, v_log_z = 0.0;
  std::vector<double> m_logits, v_logits;
  std::vector<double> m_flow, v_flow;
  std::vector<double> m_back, v_back;

  explicit OptState(const FlowParams& params);
};

/// Exact analytic gradients of batch_loss. Throws NumericsError naming the
/// offending parameter if any touched entry is non-finite. Returns the loss.
double compute_gradients(const FlowParams& params, const Hypergrid& env,
                         std::span<const Trajectory> batch,
                         const LossSpec& spec, GradTable& grads,
                         const EntropyCache* cache = nullptr);

/// Central finite differences (f(x+h) - f(x-h)) / 2h for every parameter vs
/// the analytic gradient; returns the largest relative error over parameters
/// where either side exceeds 1e-10. h must lie in [1e-7, 1e-3].
double grad_check(const FlowParams& params, const Hypergrid& env,
                  std::span<const Trajectory> batch, const LossSpec& spec,
                  double h, const EntropyCache* cache = nullptr);

/// Standard bias-corrected Adam update, in place.
void adam_step(FlowParams& params, const GradTable& grads, OptState& opt,
               const TrainConfig& config);

/// Terminal-sample bookkeeping for the evaluation metrics: a sliding window
/// for the empirical L1 and the set of distinct modes seen since the start.
class SampleStats {
 public:
  SampleStats(const Hypergrid& env, int window_capacity);

  void record(StateIndex terminal);
  [[nodiscard]] bool empty() const { return window_size_ == 0; }
  [[nodiscard]] std::int64_t modes_found() const { return modes_; }
  [[nodiscard]] TerminalDistribution window_distribution() const;

 private:
  const Hypergrid* env_;
  std::vector<StateIndex> window_;
  std::size_t window_size_ = 0;
  std::size_t window_next_ = 0;
  std::vector<std::int64_t> counts_;
  std::vector<bool> mode_seen_;
  std::int64_t modes_ = 0;
};

/// One metrics snapshot: exact L1 against the reward-proportional target,
/// the current log Z, plus whatever the optional sources provide (empirical
/// L1 from the sample window, mean cached entropy, modes found so far).
MetricsRow evaluate(const FlowParams& params, const Hypergrid& env,
                    std::int64_t step, double loss_value,
                    const EntropyCache* cache = nullptr,
                    const SampleStats* stats = nullptr,
                    double elapsed_ms = 0.0,
                    const TerminalDistribution* target = nullptr);

struct TrainResult {
  FlowParams params;
  std::vector<MetricsRow> metrics;
};

/// The training loop: sample a batch, refresh entropy weights when due
/// (SubGFN only), take one Adam step, and append a metrics row every
/// eval_every steps (plus one initial row and one final row). Fully
/// deterministic given (config.seed, config).
TrainResult train_run(const Hypergrid& env, const TrainConfig& config);

}  // namespace gridflow
