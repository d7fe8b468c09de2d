#pragma once

#include <string>

#include "gridflow/env.hpp"
#include "gridflow/flow_model.hpp"

namespace gridflow {

/// Plain-text parameter dump: a fingerprint header (dim, horizon, r0,
/// interval closure, backward mode), log_z, then one line per state with its
/// log state-flow and child logits. Floats use shortest round-trip decimals,
/// so save/load is bit-exact. See the README for the exact grammar.
void save_checkpoint(const std::string& path, const FlowParams& params,
                     const Hypergrid& env);

/// Loads a checkpoint written by save_checkpoint; the fingerprint must match
/// `env` exactly (ConfigError otherwise, IoError on malformed files).
FlowParams load_checkpoint(const std::string& path, const Hypergrid& env);

}  // namespace gridflow
