#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

class CounterRng;

/// Flat slot layout for per-edge quantities. Child slots follow the
/// children() order of each state (terminate last); parent slots follow
/// parents() order. Built once per environment and shared by parameters,
/// gradients and optimizer state.
struct FlowLayout {
  std::vector<std::uint64_t> child_off;   // num_states + 1 prefix offsets
  std::vector<std::uint64_t> parent_off;  // num_states + 1 prefix offsets

  [[nodiscard]] std::uint64_t num_child_slots() const {
    return child_off.back();
  }
  [[nodiscard]] std::uint64_t num_parent_slots() const {
    return parent_off.back();
  }
  [[nodiscard]] int arity(StateIndex s) const {
    return static_cast<int>(child_off[s + 1] - child_off[s]);
  }

  static std::shared_ptr<const FlowLayout> build(const Hypergrid& env);
};

enum class BackwardMode { kUniform, kLearned };

enum class InitScheme { kZeros };

/// Tabular flow model: a global log Z, one forward logit per child edge and
/// one log state-flow per state. The source's state-flow entry is unused;
/// log_z plays that role everywhere (TB's Z and the source-rooted subflow Z
/// are the same parameter), and it is excluded from gradients and updates.
struct FlowParams {
  std::shared_ptr<const FlowLayout> layout;
  double log_z = 0.0;
  std::vector<double> logits;           // child-slot layout
  std::vector<double> log_state_flow;   // one per state
  BackwardMode backward_mode = BackwardMode::kUniform;
  std::vector<double> back_logits;      // parent-slot layout; empty if uniform

  [[nodiscard]] std::span<double> logits_of(StateIndex s) {
    return {logits.data() + layout->child_off[s],
            static_cast<std::size_t>(layout->arity(s))};
  }
  [[nodiscard]] std::span<const double> logits_of(StateIndex s) const {
    return {logits.data() + layout->child_off[s],
            static_cast<std::size_t>(layout->arity(s))};
  }

  /// log F̂(s); returns log_z for the source.
  [[nodiscard]] double state_log_flow(StateIndex s) const {
    return s == 0 ? log_z : log_state_flow[s];
  }
};

/// All logits, log-flows and log_z start at zero: the uniform forward
/// policy with unit flows.
FlowParams init_params(const Hypergrid& env,
                       InitScheme scheme = InitScheme::kZeros,
                       BackwardMode backward_mode = BackwardMode::kUniform);

/// Softmax of s's child logits, in children() order. `probs` and `log_probs`
/// must have size num_children(s).
void forward_policy(const FlowParams& params, const Hypergrid& env,
                    StateIndex s, std::span<double> probs);
void forward_log_policy(const FlowParams& params, const Hypergrid& env,
                        StateIndex s, std::span<double> log_probs);
[[nodiscard]] double forward_log_prob(const FlowParams& params,
                                      const Hypergrid& env, StateIndex s,
                                      int child_slot);

/// Distribution over parents(s). Uniform mode returns 1/|parents| each;
/// learned mode the softmax of the backward logits. Querying the source is
/// a contract violation.
void backward_policy(const FlowParams& params, const Hypergrid& env,
                     StateIndex s, std::span<double> probs);
[[nodiscard]] double backward_log_prob(const FlowParams& params,
                                       const Hypergrid& env, StateIndex s,
                                       int parent_slot);

struct SampleConfig {
  double epsilon = 0.0;       // uniform-exploration mixture weight in [0,1]
  std::uint64_t rng_seed = 0;
};

/// On-policy rollout from the source. Actions are drawn from
/// (1-eps) * forward_policy + eps * uniform; the cached log_pf values are
/// the model's own probabilities, not the mixture.
Trajectory sample_trajectory(const FlowParams& params, const Hypergrid& env,
                             const SampleConfig& config, CounterRng& rng);

/// `count` independent rollouts on streams derived from (seed, step, i), so
/// batches may be sampled concurrently without changing any draw.
std::vector<Trajectory> sample_batch(const FlowParams& params,
                                     const Hypergrid& env,
                                     const SampleConfig& config,
                                     std::uint64_t step, int count);

/// Recompute the log_pf / log_pb caches of a trajectory from the current
/// parameters. Uses the same code path as the sampler, so freshly sampled
/// trajectories round-trip bit-identically.
void score_trajectory(const FlowParams& params, const Hypergrid& env,
                      Trajectory& trajectory);

}  // namespace gridflow
