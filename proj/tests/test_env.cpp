#include <doctest.h>

#include <set>

#include "gridflow/env.hpp"
#include "helpers.hpp"

using namespace gridflow;
using gridflow::testing::make_trajectory;

TEST_CASE("hypergrid construction and state counts") {
  CHECK(Hypergrid(2, 8, 0.1).num_states() == 64);
  CHECK(Hypergrid(4, 32, 0.1).num_states() == 1'048'576);
  CHECK(Hypergrid(1, 2, 1.0).num_states() == 2);

  CHECK_THROWS_AS(Hypergrid(0, 8, 0.1), ConfigError);
  CHECK_THROWS_AS(Hypergrid(2, 1, 0.1), ConfigError);
  CHECK_THROWS_AS(Hypergrid(2, 8, 0.0), ConfigError);
  CHECK_THROWS_AS(Hypergrid(2, 8, -1.0), ConfigError);
  // 32^9 blows the default 2^24 state cap
  CHECK_THROWS_AS(Hypergrid(9, 32, 0.1), BudgetError);
}

TEST_CASE("index bijection") {
  const Hypergrid env(2, 2, 0.1);
  CHECK(env.index_of(std::vector<int>{0, 0}) == 0);
  CHECK(env.index_of(std::vector<int>{1, 0}) == 1);
  CHECK(env.index_of(std::vector<int>{0, 1}) == 2);
  CHECK(env.index_of(std::vector<int>{1, 1}) == 3);

  const Hypergrid env8(2, 8, 0.1);
  CHECK(env8.index_of(std::vector<int>{7, 7}) == 63);

  for (StateIndex s = 0; s < env8.num_states(); ++s)
    CHECK(env8.index_of(env8.coords_of(s)) == s);
}

TEST_CASE("children enumeration") {
  const Hypergrid env(2, 2, 0.1);

  const ChildList at_source = env.children(env.index_of(std::vector<int>{0, 0}));
  REQUIRE(at_source.count == 3);
  CHECK(at_source.edge[0].action == ActionId::increment(0));
  CHECK(at_source.edge[0].next == env.index_of(std::vector<int>{1, 0}));
  CHECK(at_source.edge[1].action == ActionId::increment(1));
  CHECK(at_source.edge[1].next == env.index_of(std::vector<int>{0, 1}));
  CHECK(at_source.edge[2].action == ActionId::terminate());
  CHECK(at_source.edge[2].next == kSinkState);

  const ChildList at_corner = env.children(env.index_of(std::vector<int>{1, 1}));
  REQUIRE(at_corner.count == 1);
  CHECK(at_corner.edge[0].action == ActionId::terminate());

  const ChildList at_edge = env.children(env.index_of(std::vector<int>{0, 1}));
  REQUIRE(at_edge.count == 2);
  CHECK(at_edge.edge[0].next == env.index_of(std::vector<int>{1, 1}));
  CHECK(at_edge.edge[1].action == ActionId::terminate());
}

TEST_CASE("parents enumeration") {
  const Hypergrid env(2, 2, 0.1);
  const ParentList corner = env.parents(env.index_of(std::vector<int>{1, 1}));
  REQUIRE(corner.count == 2);
  CHECK(corner.edge[0].parent == env.index_of(std::vector<int>{0, 1}));
  CHECK(corner.edge[1].parent == env.index_of(std::vector<int>{1, 0}));

  CHECK(env.parents(env.source()).count == 0);

  const Hypergrid env3(3, 8, 0.1);
  const ParentList mid = env3.parents(env3.index_of(std::vector<int>{1, 0, 2}));
  REQUIRE(mid.count == 2);
  CHECK(mid.edge[0].parent == env3.index_of(std::vector<int>{0, 0, 2}));
  CHECK(mid.edge[1].parent == env3.index_of(std::vector<int>{1, 0, 1}));
}

TEST_CASE("reward values on the 8x8 grid") {
  const Hypergrid env(2, 8, 0.1);
  CHECK(env.reward(env.index_of(std::vector<int>{1, 1})) == doctest::Approx(2.6));
  CHECK(env.reward(env.index_of(std::vector<int>{0, 0})) == doctest::Approx(0.1));
  CHECK(env.reward(env.index_of(std::vector<int>{3, 4})) == doctest::Approx(0.1));
  CHECK(env.reward(env.index_of(std::vector<int>{1, 6})) == doctest::Approx(2.6));
  CHECK(env.reward(env.index_of(std::vector<int>{6, 6})) == doctest::Approx(2.6));
  // corner coordinates sit exactly on the open interval boundary 0.5
  CHECK(env.reward(env.index_of(std::vector<int>{7, 7})) == doctest::Approx(0.1));
}

TEST_CASE("reward interval boundaries are decided exactly") {
  // On H=16, coordinates 3 and 12 sit exactly on the inner 0.3 boundary;
  // both must be excluded under open intervals even though 12/15 rounds up
  // in floating point.
  const Hypergrid env(2, 16, 0.1);
  CHECK(env.reward(env.index_of(std::vector<int>{3, 3})) == doctest::Approx(0.6));
  CHECK(env.reward(env.index_of(std::vector<int>{12, 12})) == doctest::Approx(0.6));
  CHECK(env.reward(env.index_of(std::vector<int>{2, 2})) == doctest::Approx(2.6));
  CHECK(env.reward(env.index_of(std::vector<int>{13, 13})) == doctest::Approx(2.6));
  CHECK(env.reward(env.index_of(std::vector<int>{2, 13})) == doctest::Approx(2.6));
  CHECK(env.reward(env.index_of(std::vector<int>{4, 4})) == doctest::Approx(0.1));
}

TEST_CASE("half-open closure includes the corners in the plateau") {
  const Hypergrid open(2, 8, 0.1);
  const Hypergrid half(Hypergrid::Config{
      .dim = 2, .horizon = 8, .r0 = 0.1, .closure = IntervalClosure::kHalfOpen});
  const StateIndex corner = half.index_of(std::vector<int>{7, 7});
  const StateIndex origin = half.index_of(std::vector<int>{0, 0});
  CHECK(open.reward(corner) == doctest::Approx(0.1));
  CHECK(half.reward(corner) == doctest::Approx(0.6));
  CHECK(half.reward(origin) == doctest::Approx(0.6));
  // the high peaks are identical in both conventions
  CHECK(half.reward(half.index_of(std::vector<int>{1, 6})) == doctest::Approx(2.6));
}

TEST_CASE("reward takes only the three ladder values") {
  for (const Hypergrid& env : {Hypergrid(2, 8, 0.1), Hypergrid(2, 16, 0.25),
                              Hypergrid(3, 5, 0.01), Hypergrid(1, 9, 2.0)}) {
    for (StateIndex s = 0; s < env.num_states(); ++s) {
      const double r = env.reward(s);
      const bool ladder = r == doctest::Approx(env.r0()) ||
                          r == doctest::Approx(env.r0() + 0.5) ||
                          r == doctest::Approx(env.r0() + 2.5);
      CHECK(ladder);
      CHECK(r >= env.r0());
    }
  }
}

TEST_CASE("degree formulas and parent/child consistency") {
  for (const Hypergrid& env : {Hypergrid(2, 3, 0.1), Hypergrid(3, 3, 0.1),
                              Hypergrid(4, 2, 0.1)}) {
    for (StateIndex s = 0; s < env.num_states(); ++s) {
      const std::vector<int> coords = env.coords_of(s);
      int positive = 0, below = 0;
      for (int c : coords) {
        if (c > 0) ++positive;
        if (c < env.horizon() - 1) ++below;
      }
      const ChildList kids = env.children(s);
      const ParentList pars = env.parents(s);
      CHECK(kids.count == below + 1);
      CHECK(pars.count == positive);
      CHECK(env.num_children(s) == kids.count);
      CHECK(env.num_parents(s) == pars.count);
      CHECK(env.is_branching(s) == (kids.count >= 2));

      // every child edge has a matching parent edge and vice versa
      for (const ChildEdge& edge : kids) {
        if (edge.action.is_terminate()) continue;
        bool found = false;
        for (const ParentEdge& back : env.parents(edge.next))
          if (back.parent == s && back.action == edge.action) found = true;
        CHECK(found);
        // index order is topological
        CHECK(s < edge.next);
      }
      for (const ParentEdge& back : pars) {
        bool found = false;
        for (const ChildEdge& edge : env.children(back.parent))
          if (!edge.action.is_terminate() && edge.next == s &&
              edge.action == back.action)
            found = true;
        CHECK(found);
      }
    }
  }
}

TEST_CASE("is_branching examples") {
  const Hypergrid env(2, 2, 0.1);
  CHECK_FALSE(env.is_branching(env.index_of(std::vector<int>{1, 1})));
  CHECK(env.is_branching(env.index_of(std::vector<int>{0, 0})));
  CHECK(env.is_branching(env.index_of(std::vector<int>{0, 1})));
}

TEST_CASE("child and parent slots") {
  const Hypergrid env(3, 3, 0.1);
  const StateIndex s = env.index_of(std::vector<int>{2, 1, 0});
  // children: increments of dims 1 and 2 (dim 0 saturated), then terminate
  CHECK(env.child_slot(s, ActionId::increment(1)) == 0);
  CHECK(env.child_slot(s, ActionId::increment(2)) == 1);
  CHECK(env.child_slot(s, ActionId::terminate()) == 2);
  CHECK_THROWS_AS((void)env.child_slot(s, ActionId::increment(0)), ContractError);
  // parents: decrements of dims 0 and 1
  CHECK(env.parent_slot(s, 0) == 0);
  CHECK(env.parent_slot(s, 1) == 1);
  CHECK_THROWS_AS((void)env.parent_slot(s, 2), ContractError);
}

TEST_CASE("trajectory validation") {
  const Hypergrid env(2, 2, 0.1);

  CHECK_FALSE(env.validate_trajectory(
      make_trajectory(env, {{0, 0}, {0, 1}})).has_value());

  {
    Trajectory bad_start = make_trajectory(env, {{0, 1}, {1, 1}});
    const auto violation = env.validate_trajectory(bad_start);
    REQUIRE(violation.has_value());
    CHECK(violation->kind == TrajectoryViolation::Kind::kBadStart);
  }
  {
    // two coordinates changed in one step
    Trajectory skip;
    skip.states = {env.index_of(std::vector<int>{0, 0}),
                   env.index_of(std::vector<int>{1, 1})};
    skip.actions = {ActionId::increment(0), ActionId::terminate()};
    const auto violation = env.validate_trajectory(skip);
    REQUIRE(violation.has_value());
    CHECK(violation->kind == TrajectoryViolation::Kind::kIllegalStep);
  }
  {
    Trajectory early = make_trajectory(env, {{0, 0}, {0, 1}});
    early.actions[0] = ActionId::terminate();
    const auto violation = env.validate_trajectory(early);
    REQUIRE(violation.has_value());
    CHECK(violation->kind == TrajectoryViolation::Kind::kEarlyTerminate);
    CHECK(violation->position == 0);
  }
  {
    Trajectory unfinished = make_trajectory(env, {{0, 0}, {0, 1}});
    unfinished.actions.back() = ActionId::increment(0);
    const auto violation = env.validate_trajectory(unfinished);
    REQUIRE(violation.has_value());
    CHECK(violation->kind == TrajectoryViolation::Kind::kMissingTerminate);
  }
  {
    // action claims dim 1 but the state moved along dim 0
    Trajectory mismatched;
    mismatched.states = {env.index_of(std::vector<int>{0, 0}),
                         env.index_of(std::vector<int>{0, 1}),
                         env.index_of(std::vector<int>{1, 1})};
    mismatched.actions = {ActionId::increment(1), ActionId::increment(1),
                          ActionId::terminate()};
    const auto violation = env.validate_trajectory(mismatched);
    REQUIRE(violation.has_value());
    CHECK(violation->kind == TrajectoryViolation::Kind::kIllegalStep);
    CHECK(violation->position == 1);
  }
}

TEST_CASE("max trajectory actions") {
  CHECK(Hypergrid(2, 2, 0.1).max_trajectory_actions() == 3);
  CHECK(Hypergrid(4, 8, 0.1).max_trajectory_actions() == 29);
}
