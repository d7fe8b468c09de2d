#include "gridflow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "gridflow/checkpoint.hpp"

namespace gridflow {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr_policy > 0.0)) throw ConfigError("train: lr_policy must be > 0");
  if (!(lr_logz_flow > 0.0)) throw ConfigError("train: lr_logz must be > 0");
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  if (epsilon < 0.0 || epsilon > 1.0)
    throw ConfigError("train: epsilon must lie in [0, 1]");
  if (empirical_window < 1)
    throw ConfigError("train: empirical_window must be >= 1");
  loss.validate();
}

OptState::OptState(const FlowParams& params) {
  m_logits.assign(params.logits.size(), 0.0);
  v_logits.assign(params.logits.size(), 0.0);
  m_flow.assign(params.log_state_flow.size(), 0.0);
  v_flow.assign(params.log_state_flow.size(), 0.0);
  m_back.assign(params.back_logits.size(), 0.0);
  v_back.assign(params.back_logits.size(), 0.0);
}

namespace {

void check_finite(double value, const char* group, std::uint64_t index) {
  if (!std::isfinite(value))
    throw NumericsError(std::string("non-finite gradient for ") + group + "[" +
                        std::to_string(index) + "]");
}

}  // namespace

double compute_gradients(const FlowParams& params, const Hypergrid& env,
                         std::span<const Trajectory> batch,
                         const LossSpec& spec, GradTable& grads,
                         const EntropyCache* cache) {
  if (grads.logits.size() != params.logits.size())
    grads.resize_like(params);
  const double loss = batch_loss_and_grad(params, env, batch, spec, cache, &grads);
  if (!std::isfinite(loss))
    throw NumericsError("non-finite loss value");
  check_finite(grads.log_z, "log_z", 0);

  // Only parameters of visited states can carry gradient.
  for (const Trajectory& traj : batch)
    for (StateIndex s : traj.states) {
      const std::uint64_t child_off = params.layout->child_off[s];
      for (int c = 0; c < params.layout->arity(s); ++c)
        check_finite(grads.logits[child_off + static_cast<std::uint64_t>(c)],
                     "logits", child_off + static_cast<std::uint64_t>(c));
      check_finite(grads.log_state_flow[s], "log_state_flow", s);
      if (!grads.back_logits.empty()) {
        const std::uint64_t parent_off = params.layout->parent_off[s];
        for (int i = 0; i < env.num_parents(s); ++i)
          check_finite(grads.back_logits[parent_off + static_cast<std::uint64_t>(i)],
                       "back_logits", parent_off + static_cast<std::uint64_t>(i));
      }
    }
  return loss;
}

double grad_check(const FlowParams& params, const Hypergrid& env,
                  std::span<const Trajectory> batch, const LossSpec& spec,
                  double h, const EntropyCache* cache) {
  if (!(h >= 1e-7 && h <= 1e-3))
    throw ContractError("grad_check: h must lie in [1e-7, 1e-3]");

  GradTable grads;
  grads.resize_like(params);
  batch_loss_and_grad(params, env, batch, spec, cache, &grads);

  FlowParams probe = params;
  auto central_diff = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = batch_loss(probe, env, batch, spec, cache);
    slot = saved - h;
    const double down = batch_loss(probe, env, batch, spec, cache);
    slot = saved;
    return (up - down) / (2.0 * h);
  };

  double max_rel = 0.0;
  auto compare = [&](double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale <= 1e-10) return;
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / scale);
  };

  compare(grads.log_z, central_diff(probe.log_z));
  for (std::size_t i = 0; i < probe.logits.size(); ++i)
    compare(grads.logits[i], central_diff(probe.logits[i]));
  // The source's flow entry is not a parameter (log_z plays that role).
  for (std::size_t i = 1; i < probe.log_state_flow.size(); ++i)
    compare(grads.log_state_flow[i], central_diff(probe.log_state_flow[i]));
  for (std::size_t i = 0; i < probe.back_logits.size(); ++i)
    compare(grads.back_logits[i], central_diff(probe.back_logits[i]));
  return max_rel;
}

namespace {

// One Adam group. Zero gradient with zero moments is skipped; that is
// bit-exact (the update would be zero) and keeps sparse steps cheap.
void adam_update(std::span<double> values, std::span<const double> grads,
                 std::span<double> m, std::span<double> v, double lr,
                 double bias1, double bias2, const OptState& opt,
                 const char* group) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    if (g == 0.0 && m[i] == 0.0 && v[i] == 0.0) continue;
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = m[i] / bias1;
    const double v_hat = v[i] / bias2;
    values[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    if (!std::isfinite(values[i]))
      throw NumericsError(std::string("non-finite parameter after update: ") +
                          group + "[" + std::to_string(i) + "]");
  }
}

}  // namespace

void adam_step(FlowParams& params, const GradTable& grads, OptState& opt,
               const TrainConfig& config) {
  if (grads.logits.size() != params.logits.size() ||
      grads.log_state_flow.size() != params.log_state_flow.size() ||
      grads.back_logits.size() != params.back_logits.size())
    throw ContractError("adam_step: gradient table shape mismatch");

  ++opt.step;
  const double bias1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bias2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));

  adam_update({&params.log_z, 1}, {&grads.log_z, 1}, {&opt.m_log_z, 1},
              {&opt.v_log_z, 1}, config.lr_logz_flow, bias1, bias2, opt,
              "log_z");
  adam_update(params.logits, grads.logits, opt.m_logits, opt.v_logits,
              config.lr_policy, bias1, bias2, opt, "logits");
  adam_update(params.log_state_flow, grads.log_state_flow, opt.m_flow,
              opt.v_flow, config.lr_logz_flow, bias1, bias2, opt,
              "log_state_flow");
  adam_update(params.back_logits, grads.back_logits, opt.m_back, opt.v_back,
              config.lr_policy, bias1, bias2, opt, "back_logits");
}

SampleStats::SampleStats(const Hypergrid& env, int window_capacity)
    : env_(&env),
      window_(static_cast<std::size_t>(window_capacity)),
      counts_(env.num_states(), 0),
      mode_seen_(env.num_states(), false) {}

void SampleStats::record(StateIndex terminal) {
  if (window_size_ == window_.size()) {
    --counts_[window_[window_next_]];
  } else {
    ++window_size_;
  }
  window_[window_next_] = terminal;
  window_next_ = (window_next_ + 1) % window_.size();
  ++counts_[terminal];

  if (!mode_seen_[terminal] &&
      env_->reward(terminal) >= env_->mode_reward_threshold()) {
    mode_seen_[terminal] = true;
    ++modes_;
  }
}

TerminalDistribution SampleStats::window_distribution() const {
  if (window_size_ == 0)
    throw ContractError("SampleStats: no samples recorded yet");
  TerminalDistribution dist;
  dist.p.resize(counts_.size());
  const double inv = 1.0 / static_cast<double>(window_size_);
  for (std::size_t i = 0; i < counts_.size(); ++i)
    dist.p[i] = static_cast<double>(counts_[i]) * inv;
  return dist;
}

MetricsRow evaluate(const FlowParams& params, const Hypergrid& env,
                    std::int64_t step, double loss_value,
                    const EntropyCache* cache, const SampleStats* stats,
                    double elapsed_ms, const TerminalDistribution* target) {
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  MetricsRow row;
  row.step = step;
  row.loss_value = loss_value;
  row.log_z = params.log_z;
  row.elapsed_ms = elapsed_ms;

  TerminalDistribution local_target;
  if (target == nullptr) {
    local_target = true_distribution(env);
    target = &local_target;
  }
  row.l1_exact =
      l1_distance(terminating_distribution(params, env, env.source()), *target);

  row.l1_empirical = (stats != nullptr && !stats->empty())
                         ? l1_distance(stats->window_distribution(), *target)
                         : kNan;
  row.mean_entropy = (cache != nullptr && cache->size() > 0) ? cache->mean() : kNan;
  row.modes_found = stats != nullptr ? stats->modes_found() : 0;
  return row;
}

TrainResult train_run(const Hypergrid& env, const TrainConfig& config) {
  config.validate();

  TrainResult result;
  result.params = init_params(env);
  if (config.steps == 0) return result;

  OptState opt(result.params);
  GradTable grads;
  grads.resize_like(result.params);
  EntropyCache cache;
  SampleStats stats(env, config.empirical_window);
  const TerminalDistribution target = true_distribution(env);
  const SampleConfig sample_config{config.epsilon, config.seed};
  const bool entropy_weighted = config.loss.kind == LossKind::kSubGfn;

  const auto started = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - started)
        .count();
  };

  result.metrics.push_back(evaluate(result.params, env, 0,
                                    std::numeric_limits<double>::quiet_NaN(),
                                    nullptr, nullptr, elapsed_ms(), &target));

  for (std::int64_t step = 0; step < config.steps; ++step) {
    const std::vector<Trajectory> batch =
        sample_batch(result.params, env, sample_config,
                     static_cast<std::uint64_t>(step), config.batch_size);
    for (const Trajectory& traj : batch) stats.record(traj.terminal());

    if (entropy_weighted)
      cache.refresh(result.params, env, batch, config.loss, step, config.seed);

    double loss;
    try {
      loss = compute_gradients(result.params, env, batch, config.loss, grads,
                               entropy_weighted ? &cache : nullptr);
      adam_step(result.params, grads, opt, config);
    } catch (const NumericsError&) {
      if (!config.abort_checkpoint.empty())
        save_checkpoint(config.abort_checkpoint, result.params, env);
      throw;
    }

    const std::int64_t done = step + 1;
    if (done % config.eval_every == 0 || done == config.steps)
      result.metrics.push_back(evaluate(result.params, env, done, loss,
                                        entropy_weighted ? &cache : nullptr,
                                        &stats, elapsed_ms(), &target));
  }
  return result;
}

}  // namespace gridflow
