#include "gridflow/env.hpp"

#include <cmath>
#include <cstdlib>

namespace gridflow {
namespace {

// The reward indicators compare |s/(H-1) - 0.5| against 0.25, 0.3, 0.4 and
// 0.5. With u = |2s - (H-1)| the comparisons become exact integer tests
// (u / (2(H-1)) vs the bound), which keeps boundary coordinates such as
// s/(H-1) = 0.8 on H=16 from being misclassified by float rounding.
struct RewardIndicators {
  bool outer;  // |s/(H-1) - 0.5| in (0.25, 0.5)   (or (0.25, 0.5] half-open)
  bool inner;  // |s/(H-1) - 0.5| in (0.3, 0.4)
};

RewardIndicators coord_indicators(int coord, int horizon,
                                  IntervalClosure closure) {
  const std::int64_t hm1 = horizon - 1;
  const std::int64_t u = std::abs(2 * static_cast<std::int64_t>(coord) - hm1);
  const bool above_quarter = 2 * u > hm1;
  const bool below_half =
      closure == IntervalClosure::kHalfOpen ? true : u < hm1;
  return RewardIndicators{
      .outer = above_quarter && below_half,
      .inner = 5 * u > 3 * hm1 && 5 * u < 4 * hm1,
  };
}

}  // namespace

Hypergrid::Hypergrid(const Config& config)
    : dim_(config.dim),
      horizon_(config.horizon),
      r0_(config.r0),
      closure_(config.closure) {
  if (dim_ < 1) throw ConfigError("hypergrid: dim must be >= 1");
  if (horizon_ < 2) throw ConfigError("hypergrid: horizon must be >= 2");
  if (!(r0_ > 0.0) || !std::isfinite(r0_))
    throw ConfigError("hypergrid: r0 must be a positive finite real");
  if (dim_ > kMaxDims)
    throw BudgetError("hypergrid: dim " + std::to_string(dim_) +
                      " exceeds the supported maximum of " +
                      std::to_string(kMaxDims));
  if (config.state_cap > (std::uint64_t{1} << 31))
    throw ConfigError("hypergrid: state_cap beyond 2^31 is not supported");

  std::uint64_t count = 1;
  for (int d = 0; d < dim_; ++d) {
    stride_[d] = static_cast<StateIndex>(count);
    count *= static_cast<std::uint64_t>(horizon_);
    if (count > config.state_cap)
      throw BudgetError("hypergrid: " + std::to_string(horizon_) + "^" +
                        std::to_string(dim_) + " states exceed the cap of " +
                        std::to_string(config.state_cap));
  }
  num_states_ = static_cast<StateIndex>(count);
}

Hypergrid::Hypergrid(int dim, int horizon, double r0)
    : Hypergrid(Config{.dim = dim, .horizon = horizon, .r0 = r0}) {}

void Hypergrid::coords_of(StateIndex s, std::span<int> out) const {
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    out[d] = static_cast<int>(rest % static_cast<StateIndex>(horizon_));
    rest /= static_cast<StateIndex>(horizon_);
  }
}

std::vector<int> Hypergrid::coords_of(StateIndex s) const {
  std::vector<int> coords(static_cast<std::size_t>(dim_));
  coords_of(s, coords);
  return coords;
}

StateIndex Hypergrid::index_of(std::span<const int> coords) const {
  if (static_cast<int>(coords.size()) != dim_)
    throw ContractError("index_of: coordinate count does not match dim");
  StateIndex s = 0;
  for (int d = 0; d < dim_; ++d) {
    if (coords[d] < 0 || coords[d] >= horizon_)
      throw ContractError("index_of: coordinate out of range");
    s += static_cast<StateIndex>(coords[d]) * stride_[d];
  }
  return s;
}

int Hypergrid::num_children(StateIndex s) const {
  int below_max = 0;
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    if (static_cast<int>(rest % static_cast<StateIndex>(horizon_)) <
        horizon_ - 1)
      ++below_max;
    rest /= static_cast<StateIndex>(horizon_);
  }
  return below_max + 1;
}

int Hypergrid::num_parents(StateIndex s) const {
  int positive = 0;
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    if (rest % static_cast<StateIndex>(horizon_) > 0) ++positive;
    rest /= static_cast<StateIndex>(horizon_);
  }
  return positive;
}

ChildList Hypergrid::children(StateIndex s) const {
  ChildList list;
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    if (static_cast<int>(rest % static_cast<StateIndex>(horizon_)) <
        horizon_ - 1)
      list.edge[list.count++] =
          ChildEdge{ActionId::increment(d), s + stride_[d]};
    rest /= static_cast<StateIndex>(horizon_);
  }
  list.edge[list.count++] = ChildEdge{ActionId::terminate(), kSinkState};
  return list;
}

ParentList Hypergrid::parents(StateIndex s) const {
  ParentList list;
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    if (rest % static_cast<StateIndex>(horizon_) > 0)
      list.edge[list.count++] =
          ParentEdge{s - stride_[d], ActionId::increment(d)};
    rest /= static_cast<StateIndex>(horizon_);
  }
  return list;
}

int Hypergrid::child_slot(StateIndex s, ActionId action) const {
  if (action.is_terminate()) return num_children(s) - 1;
  if (action.dim >= dim_)
    throw ContractError("child_slot: action dimension out of range");
  int slot = 0;
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    const int coord = static_cast<int>(rest % static_cast<StateIndex>(horizon_));
    if (d == action.dim) {
      if (coord >= horizon_ - 1)
        throw ContractError("child_slot: increment on a saturated coordinate");
      return slot;
    }
    if (coord < horizon_ - 1) ++slot;
    rest /= static_cast<StateIndex>(horizon_);
  }
  throw ContractError("child_slot: unreachable");
}

int Hypergrid::parent_slot(StateIndex s, int dim) const {
  if (dim < 0 || dim >= dim_)
    throw ContractError("parent_slot: dimension out of range");
  int slot = 0;
  StateIndex rest = s;
  for (int d = 0; d < dim_; ++d) {
    const int coord = static_cast<int>(rest % static_cast<StateIndex>(horizon_));
    if (d == dim) {
      if (coord == 0)
        throw ContractError("parent_slot: decrement on a zero coordinate");
      return slot;
    }
    if (coord > 0) ++slot;
    rest /= static_cast<StateIndex>(horizon_);
  }
  throw ContractError("parent_slot: unreachable");
}

bool Hypergrid::is_branching(StateIndex s) const {
  return num_children(s) >= 2;
}

double Hypergrid::reward(StateIndex s) const {
  bool outer_all = true;
  bool inner_all = true;
  StateIndex rest = s;
  for (int d = 0; d < dim_ && (outer_all || inner_all); ++d) {
    const int coord = static_cast<int>(rest % static_cast<StateIndex>(horizon_));
    const RewardIndicators ind = coord_indicators(coord, horizon_, closure_);
    outer_all = outer_all && ind.outer;
    inner_all = inner_all && ind.inner;
    rest /= static_cast<StateIndex>(horizon_);
  }
  return r0_ + (outer_all ? 0.5 : 0.0) + (inner_all ? 2.0 : 0.0);
}

std::optional<TrajectoryViolation> Hypergrid::validate_trajectory(
    const Trajectory& trajectory) const {
  using Kind = TrajectoryViolation::Kind;
  const auto& states = trajectory.states;
  const auto& actions = trajectory.actions;

  if (states.empty())
    return TrajectoryViolation{Kind::kMalformed, 0, "trajectory has no states"};
  if (actions.size() != states.size())
    return TrajectoryViolation{
        Kind::kMalformed, 0,
        "expected one action per state (increments plus a final Terminate)"};
  if (states.front() != source())
    return TrajectoryViolation{Kind::kBadStart, 0,
                               "trajectory does not start at the source"};

  const int n = static_cast<int>(states.size()) - 1;
  for (int t = 0; t < n; ++t) {
    const ActionId action = actions[static_cast<std::size_t>(t)];
    if (action.is_terminate())
      return TrajectoryViolation{Kind::kEarlyTerminate, t,
                                 "Terminate before the final position"};
    const StateIndex from = states[static_cast<std::size_t>(t)];
    const StateIndex to = states[static_cast<std::size_t>(t) + 1];
    if (from >= num_states_ || to >= num_states_)
      return TrajectoryViolation{Kind::kMalformed, t, "state out of range"};
    if (action.dim >= dim_)
      return TrajectoryViolation{Kind::kIllegalStep, t,
                                 "action dimension out of range"};
    bool legal = false;
    if (to > from && to - from == stride_[action.dim]) {
      StateIndex rest = from;
      for (int d = 0; d < action.dim; ++d)
        rest /= static_cast<StateIndex>(horizon_);
      legal = static_cast<int>(rest % static_cast<StateIndex>(horizon_)) <
              horizon_ - 1;
    }
    if (!legal)
      return TrajectoryViolation{Kind::kIllegalStep, t,
                                 "transition is not a legal +1 increment"};
  }
  if (!actions.back().is_terminate())
    return TrajectoryViolation{Kind::kMissingTerminate, n,
                               "final action is not Terminate"};
  return std::nullopt;
}

}  // namespace gridflow
