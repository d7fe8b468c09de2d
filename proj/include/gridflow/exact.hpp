#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/flow_model.hpp"

namespace gridflow {

/// Probability per terminating state, indexed by state ordinal over the full
/// state space. Entries are >= 0 and sum to 1.
struct TerminalDistribution {
  std::vector<double> p;
};

/// Exact forward dynamic program over the descendants of `root` in index
/// (topological) order: reach(root) = 1, reach is pushed along child edges
/// with the forward policy, and p(x) = reach(x) * P_F(terminate | x).
TerminalDistribution terminating_distribution(const FlowParams& params,
                                              const Hypergrid& env,
                                              StateIndex root);

/// The reward-proportional target p*(x) = R(x) / sum_x R(x).
TerminalDistribution true_distribution(const Hypergrid& env);

/// sum_x |p(x) - q(x)|. Mismatched index spaces are a contract violation.
double l1_distance(const TerminalDistribution& p, const TerminalDistribution& q);

/// Frequency estimate over the state index space; rejects empty samples.
TerminalDistribution empirical_distribution(std::span<const StateIndex> samples,
                                            const Hypergrid& env);

/// All complete trajectories from `root`, in depth-first deterministic order
/// (children order per state). The log caches are left empty. Exceeding
/// `budget` raises BudgetError.
std::vector<Trajectory> enumerate_trajectories(const Hypergrid& env,
                                               StateIndex root,
                                               std::uint64_t budget = 1'000'000);

/// Exact flows: per-state F(s), per-edge F(s->s') in child-slot layout (the
/// last slot of each state is the terminal edge), and the total Z = F(s_0).
struct FlowTable {
  std::shared_ptr<const FlowLayout> layout;
  std::vector<double> state_flow;
  std::vector<double> edge_flow;
  double total = 0.0;
};

/// Brute-force flow construction: every complete trajectory carries
/// F(tau) = R(terminal) * prod P_B, summed into state and edge flows. The
/// result satisfies flow matching at every state, F(s->sink) = R(s), and
/// Z = sum_x R(x).
FlowTable brute_force_flows(const Hypergrid& env,
                            std::uint64_t budget = 1'000'000);
/// Same, with the backward policy taken from `params` (learned mode).
FlowTable brute_force_flows(const Hypergrid& env, const FlowParams& params,
                            std::uint64_t budget = 1'000'000);

/// The optimal tabular parameterization of a flow table: logits are log edge
/// flows (softmax recovers P_F), log-flows are log F(s), log_z = log Z.
/// Every training objective evaluates to zero on the result.
FlowParams params_from_flows(const Hypergrid& env, const FlowTable& table);

/// Number of distinct sampled terminal states with reward >= threshold.
int modes_found(const Hypergrid& env, std::span<const StateIndex> samples,
                double threshold);
int modes_found(const Hypergrid& env, std::span<const StateIndex> samples);

}  // namespace gridflow
