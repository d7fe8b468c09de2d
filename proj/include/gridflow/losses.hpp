#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/flow_model.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

enum class LossKind { kFm, kDb, kTb, kSubTb, kSubGfn };

[[nodiscard]] std::string loss_kind_name(LossKind kind);
[[nodiscard]] LossKind loss_kind_from_name(const std::string& name);

enum class EntropyMode { kExactDp, kMonteCarlo };

struct LossSpec {
  LossKind kind = LossKind::kTb;
  double delta = 1e-6;    // FM/DB regularizer; TB-family losses do not use it
  double lambda = 0.99;   // SubTB geometric weight, in (0, 1]
  EntropyMode entropy_mode = EntropyMode::kExactDp;
  int entropy_rollouts = 64;    // Monte-Carlo sample count (also the DP fallback)
  int entropy_refresh = 100;    // optimizer steps between weight refreshes
  double entropy_floor = 1e-8;  // below this total weight, use uniform weights

  void validate() const;
};

/// Exact-DP subflow entropy is refused above this many descendants; callers
/// fall back to Monte-Carlo estimation.
inline constexpr std::uint64_t kEntropyDpBudget = 65'536;

// ---------------------------------------------------------------------------
// Residual primitives. Each training objective squares the log of a ratio;
// these helpers take the already-aggregated flow quantities so the arithmetic
// can be tested in isolation.
// ---------------------------------------------------------------------------

/// log[(delta + inflow) / (delta + reward + outflow_nonterminal)]. Rejects a
/// zero numerator or denominator (delta = 0 with vanished flows).
[[nodiscard]] double fm_log_ratio(double inflow, double reward,
                                  double outflow_nonterminal, double delta);

/// log[(delta + upstream) / (delta + downstream)] for one edge, where
/// upstream = F(s) * P_F(s'|s) and downstream is F(s') * P_B(s|s') for an
/// internal edge or R(s) for the terminal edge.
[[nodiscard]] double db_log_ratio(double upstream, double downstream,
                                  double delta);

// ---------------------------------------------------------------------------
// Per-unit losses (state / edge / trajectory / suffix).
// ---------------------------------------------------------------------------

/// Flow-matching loss of state s, covering both of its roles: the interior
/// residual (inflow from all parents — the source uses Z — against reward
/// plus non-terminal outflow) plus the sink-role residual pinning the
/// terminal edge flow to R(s). Both squared log-ratios are summed.
[[nodiscard]] double fm_loss(const FlowParams& params, const Hypergrid& env,
                             StateIndex s, double delta);

/// Squared detailed-balance residual of the edge (s, child_slot); the last
/// slot of a state is its terminal edge, whose downstream side is R(s).
[[nodiscard]] double db_loss(const FlowParams& params, const Hypergrid& env,
                             StateIndex s, int child_slot, double delta);

/// Squared trajectory-balance residual:
/// (log Z + sum log P_F + log P_F(sink|s_n) - log R(s_n) - sum log P_B)^2.
[[nodiscard]] double tb_loss(const FlowParams& params, const Hypergrid& env,
                             const Trajectory& trajectory);

/// Lambda-weighted average of squared balance residuals over every
/// sub-trajectory, endpoints ranging over the visited states plus the sink.
/// A sub-range ending at the sink includes the terminate factor and targets
/// R(s_n); interior endpoints target the learned state flows. Weights are
/// lambda^length, normalized per trajectory.
[[nodiscard]] double subtb_loss(const FlowParams& params, const Hypergrid& env,
                                const Trajectory& trajectory, double lambda);

/// A branching state at a given position of a sampled trajectory; the suffix
/// from here is one term of the subflow objective.
struct SubRoot {
  StateIndex state = 0;
  int position = 0;
};

/// Positions t with at least two outgoing edges at s_t.
[[nodiscard]] std::vector<SubRoot> extract_subroots(const Hypergrid& env,
                                                    const Trajectory& trajectory);

/// Trajectory-balance residual of the suffix rooted at `root`, with the
/// root's state flow in place of Z (the source's flow is Z itself, so a
/// root at position 0 reproduces tb_loss).
[[nodiscard]] double subgfn_suffix_loss(const FlowParams& params,
                                        const Hypergrid& env,
                                        const Trajectory& trajectory,
                                        const SubRoot& root);

// ---------------------------------------------------------------------------
// Subflow entropy.
// ---------------------------------------------------------------------------

/// Entropy of the terminating distribution of rollouts started at s under
/// the current forward policy. kExactDp runs a forward DP over the
/// descendants of s (BudgetError above `dp_budget`); kMonteCarlo runs
/// `rollouts` rollouts and returns the plug-in entropy of the empirical
/// terminal frequencies (requires `rng`).
[[nodiscard]] double subnet_entropy(const FlowParams& params,
                                    const Hypergrid& env, StateIndex s,
                                    EntropyMode mode, int rollouts = 64,
                                    CounterRng* rng = nullptr,
                                    std::uint64_t dp_budget = kEntropyDpBudget);

/// Entropy weights per branching state, refreshed lazily every
/// `entropy_refresh` optimizer steps. Values are treated as constants by
/// gradient computation.
class EntropyCache {
 public:
  struct Entry {
    double value = 0.0;
    std::int64_t step = 0;
  };

  [[nodiscard]] bool contains(StateIndex s) const {
    return entries_.contains(s);
  }
  [[nodiscard]] double value(StateIndex s) const;
  void put(StateIndex s, double value, std::int64_t step);

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] double mean() const;

  /// Recompute entries for every subroot in `batch` that is missing or older
  /// than spec.entropy_refresh steps. Monte-Carlo estimates (requested or DP
  /// budget fallback) draw from streams keyed by (seed, step, state).
  void refresh(const FlowParams& params, const Hypergrid& env,
               std::span<const Trajectory> batch, const LossSpec& spec,
               std::int64_t step, std::uint64_t seed);

 private:
  std::map<StateIndex, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Batch objectives.
// ---------------------------------------------------------------------------

/// Entropy-weighted average of suffix losses over all (trajectory, subroot)
/// pairs in the batch: sum Ent(G_s) * L_suffix / sum Ent(G_s). Weights come
/// from the cache (every subroot must be present) and are not differentiated
/// through; if their sum is at most spec.entropy_floor the terms are averaged
/// uniformly instead.
[[nodiscard]] double subgfn_batch_loss(const FlowParams& params,
                                       const Hypergrid& env,
                                       std::span<const Trajectory> batch,
                                       const EntropyCache& cache,
                                       const LossSpec& spec);

/// Dispatch on spec.kind. FM averages over the distinct states visited by
/// the batch, DB over distinct edges (terminal edges included), TB and SubTB
/// over trajectories, SubGFN via subgfn_batch_loss. `cache` is required for
/// SubGFN and ignored otherwise.
[[nodiscard]] double batch_loss(const FlowParams& params, const Hypergrid& env,
                                std::span<const Trajectory> batch,
                                const LossSpec& spec,
                                const EntropyCache* cache = nullptr);

/// Gradient of batch_loss, aligned with FlowParams.
struct GradTable {
  double log_z = 0.0;
  std::vector<double> logits;
  std::vector<double> log_state_flow;
  std::vector<double> back_logits;

  void resize_like(const FlowParams& params);
  void zero();
};

/// One code path for the loss value and its gradient: with a null `grads`
/// this is exactly batch_loss. Entropy weights are constants with respect to
/// differentiation.
double batch_loss_and_grad(const FlowParams& params, const Hypergrid& env,
                           std::span<const Trajectory> batch,
                           const LossSpec& spec, const EntropyCache* cache,
                           GradTable* grads);

}  // namespace gridflow
