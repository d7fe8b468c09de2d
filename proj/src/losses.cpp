#include "gridflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace gridflow {

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kFm: return "fm";
    case LossKind::kDb: return "db";
    case LossKind::kTb: return "tb";
    case LossKind::kSubTb: return "subtb";
    case LossKind::kSubGfn: return "subgfn";
  }
  throw ContractError("loss_kind_name: unknown kind");
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "fm") return LossKind::kFm;
  if (name == "db") return LossKind::kDb;
  if (name == "tb") return LossKind::kTb;
  if (name == "subtb") return LossKind::kSubTb;
  if (name == "subgfn") return LossKind::kSubGfn;
  throw ConfigError("unknown loss kind '" + name +
                    "' (expected fm|db|tb|subtb|subgfn)");
}

void LossSpec::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("loss: delta must be >= 0");
  if (!(lambda > 0.0 && lambda <= 1.0))
    throw ConfigError("loss: lambda must lie in (0, 1]");
  if (entropy_rollouts < 1)
    throw ConfigError("loss: entropy_rollouts must be >= 1");
  if (entropy_refresh < 1)
    throw ConfigError("loss: entropy_refresh must be >= 1");
  if (!(entropy_floor >= 0.0))
    throw ConfigError("loss: entropy_floor must be >= 0");
}

double fm_log_ratio(double inflow, double reward, double outflow_nonterminal,
                    double delta) {
  const double num = delta + inflow;
  const double den = delta + reward + outflow_nonterminal;
  if (!(num > 0.0) || !(den > 0.0))
    throw NumericsError(
        "fm residual: zero flow with delta = 0 leaves the log undefined");
  return std::log(num) - std::log(den);
}

double db_log_ratio(double upstream, double downstream, double delta) {
  const double num = delta + upstream;
  const double den = delta + downstream;
  if (!(num > 0.0) || !(den > 0.0))
    throw NumericsError(
        "db residual: zero flow with delta = 0 leaves the log undefined");
  return std::log(num) - std::log(den);
}

void GradTable::resize_like(const FlowParams& params) {
  logits.assign(params.logits.size(), 0.0);
  log_state_flow.assign(params.log_state_flow.size(), 0.0);
  back_logits.assign(params.back_logits.size(), 0.0);
  log_z = 0.0;
}

void GradTable::zero() {
  log_z = 0.0;
  std::fill(logits.begin(), logits.end(), 0.0);
  std::fill(log_state_flow.begin(), log_state_flow.end(), 0.0);
  std::fill(back_logits.begin(), back_logits.end(), 0.0);
}

namespace {

// Forward policy of one state, materialized once.
struct PolicyBuf {
  int arity = 0;
  double logp[kMaxDims + 1];
  double p[kMaxDims + 1];

  void compute(const FlowParams& params, const Hypergrid& env, StateIndex s) {
    arity = params.layout->arity(s);
    forward_log_policy(params, env, s,
                       {logp, static_cast<std::size_t>(arity)});
    for (int c = 0; c < arity; ++c) p[c] = std::exp(logp[c]);
  }
};

// Accumulates d(loss)/d(param). All methods are no-ops when grads is null.
struct GradSink {
  GradTable* grads;
  const FlowParams* params;
  const Hypergrid* env;

  // coef * d(log F̂(s)); the source's flow is log_z.
  void add_flow(StateIndex s, double coef) {
    if (grads == nullptr) return;
    if (s == 0)
      grads->log_z += coef;
    else
      grads->log_state_flow[s] += coef;
  }

  // coef * d(log P_F(slot | s)) distributed over the state's logits.
  void add_logpf(StateIndex s, const PolicyBuf& buf, int slot, double coef) {
    if (grads == nullptr) return;
    double* g = grads->logits.data() + params->layout->child_off[s];
    for (int c = 0; c < buf.arity; ++c)
      g[c] += coef * ((c == slot ? 1.0 : 0.0) - buf.p[c]);
  }

  // coef * d(log P_B(parent_slot | s)); uniform backward has no parameters.
  void add_logpb(StateIndex s, int parent_slot, double coef) {
    if (grads == nullptr) return;
    if (params->backward_mode == BackwardMode::kUniform) return;
    const int count = env->num_parents(s);
    double probs[kMaxDims];
    backward_policy(*params, *env, s, {probs, static_cast<std::size_t>(count)});
    double* g = grads->back_logits.data() + params->layout->parent_off[s];
    for (int c = 0; c < count; ++c)
      g[c] += coef * ((c == parent_slot ? 1.0 : 0.0) - probs[c]);
  }
};

// Everything a trajectory-level objective needs, evaluated once under the
// current parameters (the trajectory's own caches reflect sampling-time
// parameters and are deliberately not consulted).
struct PathEval {
  const Trajectory* traj = nullptr;
  std::vector<PolicyBuf> policy;    // per position 0..n
  std::vector<int> child_slot;      // per transition 1..n (index t-1)
  std::vector<int> parent_slot;     // per transition 1..n (index t-1)
  std::vector<double> log_pb;       // per transition 1..n (index t-1)
  std::vector<double> c_prefix;     // c_prefix[t] = sum_{u<=t} (log_pf - log_pb)
  int term_slot = 0;
  double log_pf_term = 0.0;
  double log_r = 0.0;

  [[nodiscard]] int transitions() const {
    return static_cast<int>(child_slot.size());
  }
  [[nodiscard]] StateIndex state(int pos) const {
    return traj->states[static_cast<std::size_t>(pos)];
  }
  // log F̂(s_pos) with the source tied to log_z.
  [[nodiscard]] double flow(const FlowParams& params, int pos) const {
    return params.state_log_flow(state(pos));
  }
};

PathEval build_path_eval(const FlowParams& params, const Hypergrid& env,
                         const Trajectory& traj) {
  PathEval pe;
  pe.traj = &traj;
  const int n = traj.num_transitions();
  pe.policy.resize(static_cast<std::size_t>(n) + 1);
  pe.child_slot.resize(static_cast<std::size_t>(n));
  pe.parent_slot.resize(static_cast<std::size_t>(n));
  pe.log_pb.resize(static_cast<std::size_t>(n));
  pe.c_prefix.resize(static_cast<std::size_t>(n) + 1);
  pe.c_prefix[0] = 0.0;

  for (int t = 0; t <= n; ++t)
    pe.policy[static_cast<std::size_t>(t)].compute(params, env,
                                                   traj.states[static_cast<std::size_t>(t)]);

  for (int t = 1; t <= n; ++t) {
    const StateIndex from = traj.states[static_cast<std::size_t>(t) - 1];
    const StateIndex to = traj.states[static_cast<std::size_t>(t)];
    const ActionId action = traj.actions[static_cast<std::size_t>(t) - 1];
    const int cslot = env.child_slot(from, action);
    const int pslot = env.parent_slot(to, action.dim);
    pe.child_slot[static_cast<std::size_t>(t) - 1] = cslot;
    pe.parent_slot[static_cast<std::size_t>(t) - 1] = pslot;
    const double lpb = backward_log_prob(params, env, to, pslot);
    pe.log_pb[static_cast<std::size_t>(t) - 1] = lpb;
    pe.c_prefix[static_cast<std::size_t>(t)] =
        pe.c_prefix[static_cast<std::size_t>(t) - 1] +
        pe.policy[static_cast<std::size_t>(t) - 1].logp[cslot] - lpb;
  }

  const StateIndex last = traj.states.back();
  pe.term_slot = params.layout->arity(last) - 1;
  pe.log_pf_term = pe.policy[static_cast<std::size_t>(n)].logp[pe.term_slot];
  pe.log_r = std::log(env.reward(last));
  return pe;
}

// Balance residual of the suffix starting at `pos`:
// log F̂(s_pos) + sum log P_F + log P_F(sink|s_n) - log R(s_n) - sum log P_B.
double suffix_residual(const FlowParams& params, const PathEval& pe, int pos) {
  const int n = pe.transitions();
  return pe.flow(params, pos) +
         (pe.c_prefix[static_cast<std::size_t>(n)] -
          pe.c_prefix[static_cast<std::size_t>(pos)]) +
         pe.log_pf_term - pe.log_r;
}

// Spread `coef * d(residual of suffix at pos)` over the parameters, with the
// root flow handled by the caller.
void add_suffix_grad(GradSink& sink, const PathEval& pe, int pos, double coef) {
  const int n = pe.transitions();
  for (int t = pos + 1; t <= n; ++t) {
    sink.add_logpf(pe.state(t - 1), pe.policy[static_cast<std::size_t>(t) - 1],
                   pe.child_slot[static_cast<std::size_t>(t) - 1], coef);
    sink.add_logpb(pe.state(t), pe.parent_slot[static_cast<std::size_t>(t) - 1],
                   -coef);
  }
  sink.add_logpf(pe.state(n), pe.policy[static_cast<std::size_t>(n)],
                 pe.term_slot, coef);
}

// ---------------------------------------------------------------------------
// Flow matching (per state).
// ---------------------------------------------------------------------------

double eval_fm_state(const FlowParams& params, const Hypergrid& env,
                     StateIndex s, double delta, double outer_coef,
                     GradSink& sink) {
  struct InEdge {
    StateIndex parent;
    int slot;
    double flow;
    PolicyBuf policy;
  };
  InEdge in_edges[kMaxDims];
  int in_count = 0;

  double inflow = 0.0;
  if (s == env.source()) {
    inflow = std::exp(params.log_z);
  } else {
    const ParentList par = env.parents(s);
    for (const ParentEdge& pe : par) {
      InEdge& in = in_edges[in_count++];
      in.parent = pe.parent;
      in.policy.compute(params, env, pe.parent);
      in.slot = env.child_slot(pe.parent, pe.action);
      in.flow = std::exp(params.state_log_flow(pe.parent) + in.policy.logp[in.slot]);
      inflow += in.flow;
    }
  }

  PolicyBuf buf;
  buf.compute(params, env, s);
  const int term = buf.arity - 1;
  const double state_flow = std::exp(params.state_log_flow(s));
  const double nonterm_frac = 1.0 - buf.p[term];
  const double outflow = state_flow * nonterm_frac;
  const double reward = env.reward(s);

  const double residual = fm_log_ratio(inflow, reward, outflow, delta);

  // The state and its sink are one indexed entity with two roles; the sink
  // role carries the reward constraint F̂(s->s_f) = R(s). Without it the
  // terminate probability is a flat direction of the interior residual
  // (scale F̂(s) by c, shrink the non-stop probabilities by 1/c: every edge
  // flow is unchanged but the stop policy moves freely).
  const double term_flow = state_flow * buf.p[term];
  const double term_residual = db_log_ratio(term_flow, reward, delta);

  if (sink.grads != nullptr) {
    const double g = outer_coef * 2.0 * residual;
    const double a = g / (delta + inflow);
    if (s == env.source()) {
      sink.add_flow(s, a * inflow);
    } else {
      for (int i = 0; i < in_count; ++i) {
        sink.add_flow(in_edges[i].parent, a * in_edges[i].flow);
        sink.add_logpf(in_edges[i].parent, in_edges[i].policy, in_edges[i].slot,
                       a * in_edges[i].flow);
      }
    }
    const double b = -g / (delta + reward + outflow);
    sink.add_flow(s, b * outflow);
    double* glogits = sink.grads->logits.data() + params.layout->child_off[s];
    for (int c = 0; c < buf.arity; ++c)
      glogits[c] += b * state_flow * buf.p[c] *
                    ((c == term ? 0.0 : 1.0) - nonterm_frac);

    const double g2 = outer_coef * 2.0 * term_residual;
    const double a2 = g2 / (delta + term_flow);
    sink.add_flow(s, a2 * term_flow);
    sink.add_logpf(s, buf, term, a2 * term_flow);
  }
  return residual * residual + term_residual * term_residual;
}

// ---------------------------------------------------------------------------
// Detailed balance (per edge).
// ---------------------------------------------------------------------------

double eval_db_edge(const FlowParams& params, const Hypergrid& env,
                    StateIndex s, int child_slot, double delta,
                    double outer_coef, GradSink& sink) {
  const int arity = params.layout->arity(s);
  if (child_slot < 0 || child_slot >= arity)
    throw ContractError("db_loss: edge slot out of range");

  PolicyBuf buf;
  buf.compute(params, env, s);
  const double upstream =
      std::exp(params.state_log_flow(s) + buf.logp[child_slot]);

  double residual;
  if (child_slot == arity - 1) {
    residual = db_log_ratio(upstream, env.reward(s), delta);
    const double g = outer_coef * 2.0 * residual;
    const double a = g / (delta + upstream);
    sink.add_flow(s, a * upstream);
    sink.add_logpf(s, buf, child_slot, a * upstream);
  } else {
    const ChildList kids = env.children(s);
    const StateIndex child = kids.edge[child_slot].next;
    const int pslot = env.parent_slot(child, kids.edge[child_slot].action.dim);
    const double log_pb = backward_log_prob(params, env, child, pslot);
    const double downstream =
        std::exp(params.state_log_flow(child) + log_pb);
    residual = db_log_ratio(upstream, downstream, delta);
    const double g = outer_coef * 2.0 * residual;
    const double a = g / (delta + upstream);
    sink.add_flow(s, a * upstream);
    sink.add_logpf(s, buf, child_slot, a * upstream);
    const double b = -g / (delta + downstream);
    sink.add_flow(child, b * downstream);
    sink.add_logpb(child, pslot, b * downstream);
  }
  return residual * residual;
}

// ---------------------------------------------------------------------------
// Trajectory balance and the lambda-weighted sub-trajectory variant.
// ---------------------------------------------------------------------------

double eval_tb(const FlowParams& params, const PathEval& pe, double outer_coef,
               GradSink& sink) {
  const double residual = suffix_residual(params, pe, 0);
  if (sink.grads != nullptr) {
    const double g = outer_coef * 2.0 * residual;
    sink.add_flow(pe.state(0), g);
    add_suffix_grad(sink, pe, 0, g);
  }
  return residual * residual;
}

double eval_subtb(const FlowParams& params, const PathEval& pe, double lambda,
                  double outer_coef, GradSink& sink) {
  const int n = pe.transitions();
  const int sink_pos = n + 1;

  // psi[i] = log F̂(s_i) - c_prefix[i]; the sink entry folds in the terminate
  // factor and log R so every residual is psi[i] - psi[j].
  std::vector<double> psi(static_cast<std::size_t>(sink_pos) + 1);
  for (int i = 0; i <= n; ++i)
    psi[static_cast<std::size_t>(i)] =
        pe.flow(params, i) - pe.c_prefix[static_cast<std::size_t>(i)];
  psi[static_cast<std::size_t>(sink_pos)] =
      pe.log_r - pe.c_prefix[static_cast<std::size_t>(n)] - pe.log_pf_term;

  std::vector<double> pow_lambda(static_cast<std::size_t>(sink_pos) + 1);
  pow_lambda[0] = 1.0;
  for (int d = 1; d <= sink_pos; ++d)
    pow_lambda[static_cast<std::size_t>(d)] =
        pow_lambda[static_cast<std::size_t>(d) - 1] * lambda;

  double weight_total = 0.0;
  double weighted_sq = 0.0;
  for (int i = 0; i < sink_pos; ++i)
    for (int j = i + 1; j <= sink_pos; ++j) {
      const double w = pow_lambda[static_cast<std::size_t>(j - i)];
      const double r =
          psi[static_cast<std::size_t>(i)] - psi[static_cast<std::size_t>(j)];
      weight_total += w;
      weighted_sq += w * r * r;
    }
  const double loss = weighted_sq / weight_total;

  if (sink.grads != nullptr) {
    // Only row/column sums of the pair matrix M[i][j] = 2 w r / W are needed.
    std::vector<double> row(static_cast<std::size_t>(sink_pos) + 1, 0.0);
    std::vector<double> col(static_cast<std::size_t>(sink_pos) + 1, 0.0);
    const double scale = outer_coef * 2.0 / weight_total;
    for (int i = 0; i < sink_pos; ++i)
      for (int j = i + 1; j <= sink_pos; ++j) {
        const double m = scale * pow_lambda[static_cast<std::size_t>(j - i)] *
                         (psi[static_cast<std::size_t>(i)] -
                          psi[static_cast<std::size_t>(j)]);
        row[static_cast<std::size_t>(i)] += m;
        col[static_cast<std::size_t>(j)] += m;
      }

    // State flows: +1 where the range starts, -1 where it ends (interior).
    for (int i = 0; i <= n; ++i)
      sink.add_flow(pe.state(i), row[static_cast<std::size_t>(i)] -
                                     col[static_cast<std::size_t>(i)]);

    // c_t carries coefficient A(t) = sum over ranges spanning transition t.
    double a = 0.0;
    for (int t = 1; t <= n; ++t) {
      a += row[static_cast<std::size_t>(t) - 1] -
           col[static_cast<std::size_t>(t) - 1];
      sink.add_logpf(pe.state(t - 1), pe.policy[static_cast<std::size_t>(t) - 1],
                     pe.child_slot[static_cast<std::size_t>(t) - 1], a);
      sink.add_logpb(pe.state(t), pe.parent_slot[static_cast<std::size_t>(t) - 1],
                     -a);
    }
    sink.add_logpf(pe.state(n), pe.policy[static_cast<std::size_t>(n)],
                   pe.term_slot, col[static_cast<std::size_t>(sink_pos)]);
  }
  return loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public per-unit losses.
// ---------------------------------------------------------------------------

double fm_loss(const FlowParams& params, const Hypergrid& env, StateIndex s,
               double delta) {
  GradSink sink{nullptr, &params, &env};
  return eval_fm_state(params, env, s, delta, 0.0, sink);
}

double db_loss(const FlowParams& params, const Hypergrid& env, StateIndex s,
               int child_slot, double delta) {
  GradSink sink{nullptr, &params, &env};
  return eval_db_edge(params, env, s, child_slot, delta, 0.0, sink);
}

double tb_loss(const FlowParams& params, const Hypergrid& env,
               const Trajectory& trajectory) {
  const PathEval pe = build_path_eval(params, env, trajectory);
  const double r = suffix_residual(params, pe, 0);
  return r * r;
}

double subtb_loss(const FlowParams& params, const Hypergrid& env,
                  const Trajectory& trajectory, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0))
    throw ConfigError("subtb_loss: lambda must lie in (0, 1]");
  const PathEval pe = build_path_eval(params, env, trajectory);
  GradSink sink{nullptr, &params, &env};
  return eval_subtb(params, pe, lambda, 0.0, sink);
}

std::vector<SubRoot> extract_subroots(const Hypergrid& env,
                                      const Trajectory& trajectory) {
  std::vector<SubRoot> roots;
  for (std::size_t t = 0; t < trajectory.states.size(); ++t)
    if (env.is_branching(trajectory.states[t]))
      roots.push_back(SubRoot{trajectory.states[t], static_cast<int>(t)});
  return roots;
}

double subgfn_suffix_loss(const FlowParams& params, const Hypergrid& env,
                          const Trajectory& trajectory, const SubRoot& root) {
  const int n = trajectory.num_transitions();
  if (root.position < 0 || root.position > n ||
      trajectory.states[static_cast<std::size_t>(root.position)] != root.state)
    throw ContractError("subgfn_suffix_loss: root does not lie on the trajectory");
  const PathEval pe = build_path_eval(params, env, trajectory);
  const double r = suffix_residual(params, pe, root.position);
  return r * r;
}

// ---------------------------------------------------------------------------
// Subflow entropy.
// ---------------------------------------------------------------------------

namespace {

double subnet_entropy_dp(const FlowParams& params, const Hypergrid& env,
                         StateIndex root, std::uint64_t budget) {
  const int dim = env.dim();
  const int horizon = env.horizon();
  int base[kMaxDims];
  env.coords_of(root, {base, static_cast<std::size_t>(dim)});

  std::uint64_t box = 1;
  std::uint64_t lstride[kMaxDims];
  int side[kMaxDims];
  for (int d = 0; d < dim; ++d) {
    side[d] = horizon - base[d];
    lstride[d] = box;
    box *= static_cast<std::uint64_t>(side[d]);
    if (box > budget)
      throw BudgetError("subnet_entropy: descendant count exceeds the exact-DP budget");
  }

  std::vector<double> reach(box, 0.0);
  reach[0] = 1.0;
  double entropy = 0.0;
  PolicyBuf buf;
  int coords[kMaxDims];
  for (std::uint64_t local = 0; local < box; ++local) {
    const double mass = reach[local];
    if (mass == 0.0) continue;

    std::uint64_t rest = local;
    for (int d = 0; d < dim; ++d) {
      coords[d] = base[d] + static_cast<int>(rest % static_cast<std::uint64_t>(side[d]));
      rest /= static_cast<std::uint64_t>(side[d]);
    }
    const StateIndex s = env.index_of({coords, static_cast<std::size_t>(dim)});
    buf.compute(params, env, s);

    int slot = 0;
    for (int d = 0; d < dim; ++d)
      if (coords[d] < horizon - 1) reach[local + lstride[d]] += mass * buf.p[slot++];
    const double pm = mass * buf.p[buf.arity - 1];
    if (pm > 0.0) entropy -= pm * std::log(pm);
  }
  return entropy < 0.0 ? 0.0 : entropy;
}

StateIndex rollout_terminal(const FlowParams& params, const Hypergrid& env,
                            StateIndex start, CounterRng& rng) {
  StateIndex s = start;
  PolicyBuf buf;
  for (int step = 0; step <= env.max_trajectory_actions(); ++step) {
    buf.compute(params, env, s);
    const double u = rng.next_double();
    double cum = 0.0;
    int picked = buf.arity - 1;
    for (int c = 0; c < buf.arity; ++c) {
      cum += buf.p[c];
      if (u < cum) {
        picked = c;
        break;
      }
    }
    if (picked == buf.arity - 1) return s;
    s = env.children(s).edge[picked].next;
  }
  throw NumericsError("rollout_terminal: rollout exceeded the maximum length");
}

}  // namespace

double subnet_entropy(const FlowParams& params, const Hypergrid& env,
                      StateIndex s, EntropyMode mode, int rollouts,
                      CounterRng* rng, std::uint64_t dp_budget) {
  if (mode == EntropyMode::kExactDp)
    return subnet_entropy_dp(params, env, s, dp_budget);

  if (rng == nullptr)
    throw ContractError("subnet_entropy: Monte-Carlo mode needs a generator");
  if (rollouts < 1)
    throw ContractError("subnet_entropy: rollout count must be >= 1");
  std::map<StateIndex, int> counts;
  for (int i = 0; i < rollouts; ++i)
    ++counts[rollout_terminal(params, env, s, *rng)];
  double entropy = 0.0;
  const double inv = 1.0 / static_cast<double>(rollouts);
  for (const auto& [state, count] : counts) {
    const double p = static_cast<double>(count) * inv;
    entropy -= p * std::log(p);
  }
  return entropy < 0.0 ? 0.0 : entropy;
}

double EntropyCache::value(StateIndex s) const {
  const auto it = entries_.find(s);
  if (it == entries_.end())
    throw ContractError("EntropyCache: no entry for the requested state");
  return it->second.value;
}

void EntropyCache::put(StateIndex s, double value, std::int64_t step) {
  entries_[s] = Entry{value, step};
}

double EntropyCache::mean() const {
  if (entries_.empty())
    throw ContractError("EntropyCache: mean of an empty cache");
  double sum = 0.0;
  for (const auto& [state, entry] : entries_) sum += entry.value;
  return sum / static_cast<double>(entries_.size());
}

void EntropyCache::refresh(const FlowParams& params, const Hypergrid& env,
                           std::span<const Trajectory> batch,
                           const LossSpec& spec, std::int64_t step,
                           std::uint64_t seed) {
  for (const Trajectory& traj : batch) {
    for (const SubRoot& root : extract_subroots(env, traj)) {
      const auto it = entries_.find(root.state);
      if (it != entries_.end() && step - it->second.step < spec.entropy_refresh)
        continue;
      double value;
      CounterRng rng = CounterRng::from_stream(
          seed, static_cast<std::uint64_t>(RngDomain::kEntropy),
          static_cast<std::uint64_t>(step), root.state);
      if (spec.entropy_mode == EntropyMode::kMonteCarlo) {
        value = subnet_entropy(params, env, root.state,
                               EntropyMode::kMonteCarlo, spec.entropy_rollouts,
                               &rng);
      } else {
        try {
          value = subnet_entropy(params, env, root.state, EntropyMode::kExactDp);
        } catch (const BudgetError&) {
          value = subnet_entropy(params, env, root.state,
                                 EntropyMode::kMonteCarlo,
                                 spec.entropy_rollouts, &rng);
        }
      }
      entries_[root.state] = Entry{value, step};
    }
  }
}

// ---------------------------------------------------------------------------
// Batch objectives.
// ---------------------------------------------------------------------------

namespace {

double eval_batch(const FlowParams& params, const Hypergrid& env,
                  std::span<const Trajectory> batch, const LossSpec& spec,
                  const EntropyCache* cache, GradTable* grads) {
  spec.validate();
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  if (grads != nullptr) grads->zero();
  GradSink sink{grads, &params, &env};

  switch (spec.kind) {
    case LossKind::kFm: {
      std::vector<StateIndex> states;
      for (const Trajectory& traj : batch)
        states.insert(states.end(), traj.states.begin(), traj.states.end());
      std::sort(states.begin(), states.end());
      states.erase(std::unique(states.begin(), states.end()), states.end());
      const double coef = 1.0 / static_cast<double>(states.size());
      double loss = 0.0;
      for (StateIndex s : states)
        loss += coef * eval_fm_state(params, env, s, spec.delta, coef, sink);
      return loss;
    }

    case LossKind::kDb: {
      std::vector<std::pair<StateIndex, int>> edges;
      for (const Trajectory& traj : batch) {
        const int n = traj.num_transitions();
        for (int t = 0; t < n; ++t)
          edges.emplace_back(
              traj.states[static_cast<std::size_t>(t)],
              env.child_slot(traj.states[static_cast<std::size_t>(t)],
                             traj.actions[static_cast<std::size_t>(t)]));
        edges.emplace_back(traj.states.back(),
                           params.layout->arity(traj.states.back()) - 1);
      }
      std::sort(edges.begin(), edges.end());
      edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
      const double coef = 1.0 / static_cast<double>(edges.size());
      double loss = 0.0;
      for (const auto& [s, slot] : edges)
        loss += coef * eval_db_edge(params, env, s, slot, spec.delta, coef, sink);
      return loss;
    }

    case LossKind::kTb: {
      const double coef = 1.0 / static_cast<double>(batch.size());
      double loss = 0.0;
      for (const Trajectory& traj : batch) {
        const PathEval pe = build_path_eval(params, env, traj);
        loss += coef * eval_tb(params, pe, coef, sink);
      }
      return loss;
    }

    case LossKind::kSubTb: {
      const double coef = 1.0 / static_cast<double>(batch.size());
      double loss = 0.0;
      for (const Trajectory& traj : batch) {
        const PathEval pe = build_path_eval(params, env, traj);
        loss += coef * eval_subtb(params, pe, spec.lambda, coef, sink);
      }
      return loss;
    }

    case LossKind::kSubGfn: {
      if (cache == nullptr)
        throw ContractError("batch_loss: SubGFN needs an entropy cache");

      // First pass: the normalizer spans every (trajectory, subroot) pair.
      std::vector<std::vector<SubRoot>> roots(batch.size());
      std::size_t term_count = 0;
      double weight_total = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        roots[b] = extract_subroots(env, batch[b]);
        term_count += roots[b].size();
        for (const SubRoot& root : roots[b])
          weight_total += cache->value(root.state);
      }
      if (term_count == 0)
        throw ContractError("batch_loss: batch contains no subflow roots");

      // Vanishing total entropy (e.g. a fully deterministic policy) falls
      // back to uniform weighting over the same terms.
      const bool uniform = weight_total <= spec.entropy_floor;
      if (uniform) weight_total = static_cast<double>(term_count);

      double loss = 0.0;
      std::vector<double> root_grad;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (roots[b].empty()) continue;
        const PathEval pe = build_path_eval(params, env, batch[b]);
        const int n = pe.transitions();
        root_grad.assign(static_cast<std::size_t>(n) + 1, 0.0);
        for (const SubRoot& root : roots[b]) {
          const double share =
              (uniform ? 1.0 : cache->value(root.state)) / weight_total;
          const double r = suffix_residual(params, pe, root.position);
          loss += share * r * r;
          if (grads != nullptr) {
            const double g = 2.0 * share * r;
            sink.add_flow(root.state, g);
            root_grad[static_cast<std::size_t>(root.position)] += g;
          }
        }
        if (grads != nullptr) {
          // Transition t belongs to every suffix rooted before it, so its
          // coefficient is the prefix sum of the per-root gradients.
          double a = 0.0;
          for (int t = 1; t <= n; ++t) {
            a += root_grad[static_cast<std::size_t>(t) - 1];
            sink.add_logpf(pe.state(t - 1),
                           pe.policy[static_cast<std::size_t>(t) - 1],
                           pe.child_slot[static_cast<std::size_t>(t) - 1], a);
            sink.add_logpb(pe.state(t),
                           pe.parent_slot[static_cast<std::size_t>(t) - 1], -a);
          }
          a += root_grad[static_cast<std::size_t>(n)];
          sink.add_logpf(pe.state(n), pe.policy[static_cast<std::size_t>(n)],
                         pe.term_slot, a);
        }
      }
      return loss;
    }
  }
  throw ContractError("batch_loss: unknown loss kind");
}

}  // namespace

double subgfn_batch_loss(const FlowParams& params, const Hypergrid& env,
                         std::span<const Trajectory> batch,
                         const EntropyCache& cache, const LossSpec& spec) {
  LossSpec forced = spec;
  forced.kind = LossKind::kSubGfn;
  return eval_batch(params, env, batch, forced, &cache, nullptr);
}

double batch_loss(const FlowParams& params, const Hypergrid& env,
                  std::span<const Trajectory> batch, const LossSpec& spec,
                  const EntropyCache* cache) {
  return eval_batch(params, env, batch, spec, cache, nullptr);
}

double batch_loss_and_grad(const FlowParams& params, const Hypergrid& env,
                           std::span<const Trajectory> batch,
                           const LossSpec& spec, const EntropyCache* cache,
                           GradTable* grads) {
  return eval_batch(params, env, batch, spec, cache, grads);
}

}  // namespace gridflow
