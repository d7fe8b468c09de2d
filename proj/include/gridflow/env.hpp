#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridflow/errors.hpp"

namespace gridflow {

/// Dense state ordinal. index(s) = sum_d s^d * H^d, a bijection onto
/// [0, H^D) that is strictly increasing along every edge (each action adds
/// H^d > 0), so plain index order is a topological order of the DAG.
using StateIndex = std::uint32_t;

/// Successor marker for the terminate edge.
inline constexpr StateIndex kSinkState = 0xffff'ffffu;

/// With H >= 2 and at most 2^24 states, D never exceeds 24.
inline constexpr int kMaxDims = 24;

/// Either increment one coordinate or terminate.
struct ActionId {
  static constexpr std::int32_t kTerminateDim = -1;

  std::int32_t dim = kTerminateDim;

  [[nodiscard]] bool is_terminate() const { return dim < 0; }
  static ActionId increment(int d) { return ActionId{d}; }
  static ActionId terminate() { return ActionId{}; }
  bool operator==(const ActionId&) const = default;
};

/// A complete source-to-sink rollout. `states` holds s_0..s_n; `actions`
/// holds n+1 entries ending in Terminate. `log_pf` / `log_pb` cache the
/// model's own (un-mixed) transition log-probabilities when the trajectory
/// was produced by a sampler: log_pf has n+1 entries (one per action,
/// including the terminate step), log_pb has n (no backward term for the
/// terminal edge).
struct Trajectory {
  std::vector<StateIndex> states;
  std::vector<ActionId> actions;
  std::vector<double> log_pf;
  std::vector<double> log_pb;

  [[nodiscard]] int num_transitions() const {
    return static_cast<int>(states.size()) - 1;
  }
  [[nodiscard]] StateIndex terminal() const { return states.back(); }
};

/// Which endpoints of the reward indicator intervals are included.
/// kOpen follows |s/(H-1) - 0.5| in (0.25,0.5) and (0.3,0.4) with all
/// endpoints excluded. kHalfOpen closes the outer interval at 0.5 (the
/// convention of the original hypergrid benchmark), so exact corners earn
/// the +0.5 plateau term.
enum class IntervalClosure { kOpen, kHalfOpen };

struct ChildEdge {
  ActionId action;
  StateIndex next = kSinkState;  // kSinkState for the terminate edge
};

struct ParentEdge {
  StateIndex parent = 0;
  ActionId action;
};

/// Fixed-capacity child list; `count` entries are valid, terminate is last.
struct ChildList {
  int count = 0;
  std::array<ChildEdge, kMaxDims + 1> edge{};

  [[nodiscard]] const ChildEdge* begin() const { return edge.data(); }
  [[nodiscard]] const ChildEdge* end() const { return edge.data() + count; }
};

struct ParentList {
  int count = 0;
  std::array<ParentEdge, kMaxDims> edge{};

  [[nodiscard]] const ParentEdge* begin() const { return edge.data(); }
  [[nodiscard]] const ParentEdge* end() const { return edge.data() + count; }
};

struct TrajectoryViolation {
  enum class Kind {
    kBadStart,
    kIllegalStep,
    kEarlyTerminate,
    kMissingTerminate,
    kMalformed,
  };

  Kind kind;
  int position;  // transition/action index of the first violation
  std::string message;
};

/// D-dimensional hypergrid of side H. States are coordinate vectors in
/// {0..H-1}^D; every state can terminate, and every coordinate below H-1 can
/// be incremented. Immutable after construction; all queries are pure and
/// safe to call concurrently.
class Hypergrid {
 public:
  struct Config {
    int dim = 2;
    int horizon = 8;
    double r0 = 0.1;
    IntervalClosure closure = IntervalClosure::kOpen;
    std::uint64_t state_cap = std::uint64_t{1} << 24;
  };

  explicit Hypergrid(const Config& config);
  Hypergrid(int dim, int horizon, double r0 = 0.1);

  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] int horizon() const { return horizon_; }
  [[nodiscard]] double r0() const { return r0_; }
  [[nodiscard]] IntervalClosure closure() const { return closure_; }
  [[nodiscard]] StateIndex num_states() const { return num_states_; }
  [[nodiscard]] StateIndex source() const { return 0; }

  /// Longest possible action sequence: D*(H-1) increments plus Terminate.
  [[nodiscard]] int max_trajectory_actions() const {
    return dim_ * (horizon_ - 1) + 1;
  }

  void coords_of(StateIndex s, std::span<int> out) const;
  [[nodiscard]] std::vector<int> coords_of(StateIndex s) const;
  [[nodiscard]] StateIndex index_of(std::span<const int> coords) const;

  /// Child count including the terminate edge: 1 + #{d : s^d < H-1}.
  [[nodiscard]] int num_children(StateIndex s) const;
  /// Parent count: #{d : s^d > 0}.
  [[nodiscard]] int num_parents(StateIndex s) const;

  /// Children in dimension order with Terminate last.
  [[nodiscard]] ChildList children(StateIndex s) const;
  /// Parents in dimension order (decrement each positive coordinate).
  [[nodiscard]] ParentList parents(StateIndex s) const;

  /// Position of `action` within children(s); ContractError if illegal.
  [[nodiscard]] int child_slot(StateIndex s, ActionId action) const;
  /// Position of the parent reached by decrementing `dim` within parents(s).
  [[nodiscard]] int parent_slot(StateIndex s, int dim) const;

  /// True iff the state has at least two outgoing edges; on the hypergrid
  /// only the all-(H-1) corner fails this.
  [[nodiscard]] bool is_branching(StateIndex s) const;

  [[nodiscard]] double reward(StateIndex s) const;

  /// Reward cutoff above which a terminal state counts as a mode.
  [[nodiscard]] double mode_reward_threshold() const { return 2.0 + r0_; }

  /// Empty result means the trajectory is valid; otherwise the first
  /// violation found.
  [[nodiscard]] std::optional<TrajectoryViolation> validate_trajectory(
      const Trajectory& trajectory) const;

 private:
  int dim_;
  int horizon_;
  double r0_;
  IntervalClosure closure_;
  StateIndex num_states_;
  std::array<StateIndex, kMaxDims> stride_{};  // stride_[d] = H^d
};

}  // namespace gridflow
