#include "gridflow/exact.hpp"

#include <cmath>

namespace gridflow {

TerminalDistribution terminating_distribution(const FlowParams& params,
                                              const Hypergrid& env,
                                              StateIndex root) {
  const StateIndex n = env.num_states();
  std::vector<double> reach(n, 0.0);
  reach[root] = 1.0;

  TerminalDistribution dist;
  dist.p.assign(n, 0.0);

  double probs[kMaxDims + 1];
  for (StateIndex s = root; s < n; ++s) {
    const double mass = reach[s];
    if (mass == 0.0) continue;
    const ChildList kids = env.children(s);
    forward_policy(params, env, s, {probs, static_cast<std::size_t>(kids.count)});
    for (int c = 0; c < kids.count - 1; ++c)
      reach[kids.edge[c].next] += mass * probs[c];
    dist.p[s] = mass * probs[kids.count - 1];
  }

  double sum = 0.0;
  for (double v : dist.p) sum += v;
  for (double& v : dist.p) v /= sum;
  return dist;
}

TerminalDistribution true_distribution(const Hypergrid& env) {
  TerminalDistribution dist;
  dist.p.resize(env.num_states());
  double sum = 0.0;
  for (StateIndex s = 0; s < env.num_states(); ++s) {
    dist.p[s] = env.reward(s);
    sum += dist.p[s];
  }
  for (double& v : dist.p) v /= sum;
  return dist;
}

double l1_distance(const TerminalDistribution& p, const TerminalDistribution& q) {
  if (p.p.size() != q.p.size())
    throw ContractError("l1_distance: distributions live on different index spaces");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.p.size(); ++i) sum += std::abs(p.p[i] - q.p[i]);
  return sum;
}

TerminalDistribution empirical_distribution(std::span<const StateIndex> samples,
                                            const Hypergrid& env) {
  if (samples.empty())
    throw ContractError("empirical_distribution: no samples");
  TerminalDistribution dist;
  dist.p.assign(env.num_states(), 0.0);
  for (StateIndex s : samples) dist.p[s] += 1.0;
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (double& v : dist.p) v *= inv;
  return dist;
}

namespace {

// Depth-first enumeration following children order; calls visit(states,
// actions) for every complete trajectory.
template <typename Visitor>
void walk_trajectories(const Hypergrid& env, StateIndex root,
                       std::uint64_t budget, Visitor&& visit) {
  std::vector<StateIndex> states{root};
  std::vector<ActionId> actions;
  std::uint64_t count = 0;

  // Explicit child-slot stack to keep the walk iterative.
  std::vector<int> slot{0};
  while (!slot.empty()) {
    const StateIndex s = states.back();
    const ChildList kids = env.children(s);
    int& c = slot.back();
    if (c >= kids.count) {
      states.pop_back();
      slot.pop_back();
      if (!actions.empty()) actions.pop_back();
      continue;
    }
    const ChildEdge edge = kids.edge[c++];
    actions.push_back(edge.action);
    if (edge.action.is_terminate()) {
      if (++count > budget)
        throw BudgetError("enumerate_trajectories: more than " +
                          std::to_string(budget) + " trajectories");
      visit(states, actions);
      actions.pop_back();
    } else {
      states.push_back(edge.next);
      slot.push_back(0);
    }
  }
}

}  // namespace

std::vector<Trajectory> enumerate_trajectories(const Hypergrid& env,
                                               StateIndex root,
                                               std::uint64_t budget) {
  std::vector<Trajectory> out;
  walk_trajectories(env, root, budget,
                    [&](const std::vector<StateIndex>& states,
                        const std::vector<ActionId>& actions) {
                      Trajectory traj;
                      traj.states = states;
                      traj.actions = actions;
                      out.push_back(std::move(traj));
                    });
  return out;
}

namespace {

FlowTable accumulate_flows(const Hypergrid& env, const FlowParams* params,
                           std::uint64_t budget) {
  FlowTable table;
  table.layout =
      params != nullptr ? params->layout : FlowLayout::build(env);
  table.state_flow.assign(env.num_states(), 0.0);
  table.edge_flow.assign(table.layout->num_child_slots(), 0.0);

  walk_trajectories(
      env, env.source(), budget,
      [&](const std::vector<StateIndex>& states,
          const std::vector<ActionId>& actions) {
        double weight = env.reward(states.back());
        for (std::size_t t = 1; t < states.size(); ++t) {
          const StateIndex child = states[t];
          const int pslot = env.parent_slot(child, actions[t - 1].dim);
          weight *= params != nullptr
                        ? std::exp(backward_log_prob(*params, env, child, pslot))
                        : 1.0 / static_cast<double>(env.num_parents(child));
        }

        table.total += weight;
        for (std::size_t t = 0; t < states.size(); ++t) {
          const StateIndex s = states[t];
          table.state_flow[s] += weight;
          const int slot = env.child_slot(s, actions[t]);
          table.edge_flow[table.layout->child_off[s] +
                          static_cast<std::uint64_t>(slot)] += weight;
        }
      });
  return table;
}

}  // namespace

FlowTable brute_force_flows(const Hypergrid& env, std::uint64_t budget) {
  return accumulate_flows(env, nullptr, budget);
}

FlowTable brute_force_flows(const Hypergrid& env, const FlowParams& params,
                            std::uint64_t budget) {
  return accumulate_flows(env, &params, budget);
}

FlowParams params_from_flows(const Hypergrid& env, const FlowTable& table) {
  FlowParams params;
  params.layout = table.layout;
  params.log_z = std::log(table.total);
  params.logits.resize(table.edge_flow.size());
  for (std::size_t i = 0; i < table.edge_flow.size(); ++i)
    params.logits[i] = std::log(table.edge_flow[i]);
  params.log_state_flow.resize(env.num_states());
  for (StateIndex s = 0; s < env.num_states(); ++s)
    params.log_state_flow[s] = std::log(table.state_flow[s]);
  params.backward_mode = BackwardMode::kUniform;
  return params;
}

int modes_found(const Hypergrid& env, std::span<const StateIndex> samples,
                double threshold) {
  std::vector<bool> seen(env.num_states(), false);
  int count = 0;
  for (StateIndex s : samples) {
    if (seen[s]) continue;
    seen[s] = true;
    if (env.reward(s) >= threshold) ++count;
  }
  return count;
}

int modes_found(const Hypergrid& env, std::span<const StateIndex> samples) {
  return modes_found(env, samples, env.mode_reward_threshold());
}

}  // namespace gridflow
