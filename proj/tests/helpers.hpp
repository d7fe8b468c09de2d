#pragma once

#include <initializer_list>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/flow_model.hpp"
#include "gridflow/rng.hpp"

namespace gridflow::testing {

/// Builds a trajectory from coordinate waypoints, deriving the increment
/// actions and appending the final Terminate. Does not fill the log caches.
inline Trajectory make_trajectory(
    const Hypergrid& env, std::initializer_list<std::vector<int>> waypoints) {
  Trajectory traj;
  for (const std::vector<int>& coords : waypoints)
    traj.states.push_back(env.index_of(coords));
  for (std::size_t t = 1; t < traj.states.size(); ++t) {
    const StateIndex delta = traj.states[t] - traj.states[t - 1];
    for (int d = 0;; ++d) {
      StateIndex stride = 1;
      for (int k = 0; k < d; ++k) stride *= static_cast<StateIndex>(env.horizon());
      if (stride == delta) {
        traj.actions.push_back(ActionId::increment(d));
        break;
      }
    }
  }
  traj.actions.push_back(ActionId::terminate());
  return traj;
}

/// Standard-normal-ish perturbation of every parameter (flows, logits,
/// log_z, backward logits if present), for randomized gradient checks.
inline void randomize_params(FlowParams& params, std::uint64_t seed,
                             double scale = 1.0) {
  CounterRng rng(CounterRng::derive_key(seed, 0xabcdef));
  auto draw = [&] { return scale * (2.0 * rng.next_double() - 1.0); };
  params.log_z = draw();
  for (double& v : params.logits) v = draw();
  for (double& v : params.log_state_flow) v = draw();
  for (double& v : params.back_logits) v = draw();
}

}  // namespace gridflow::testing
