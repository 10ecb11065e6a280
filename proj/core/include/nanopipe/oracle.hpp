#pragma once

// Closed-form steady-state period for a stage graph. Only deterministic
// graphs where every stage owns its resource have a closed form; anything
// else reports "unavailable" and callers fall back to simulation.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nanopipe/pipeline.hpp"

namespace nanopipe::pipeline {

struct OracleStage {
  std::string resource;
  Micros occupancy = 0;  // time the resource is held per frame
  Micros latency = 0;    // extra delay before downstream may start (link propagation)
  std::vector<std::size_t> after;
  bool holds_buffer = true;
  bool jitter = false;
};

struct OracleResult {
  std::optional<double> period_us;
  std::string reason;  // set when period_us is empty

  std::optional<double> rate_hz() const {
    if (!period_us || *period_us <= 0) return std::nullopt;
    return 1e6 / *period_us;
  }
};

/// Serialized: max(sum of occupancy + latency, trigger period).
/// Pipelined: max(largest occupancy, buffer hold span / pool, trigger period),
/// where the hold span runs from acquire to the last holder's release.
/// Stage 0 of `stages` is not assumed to be the producer; `after` decides.
OracleResult analytic_oracle(const std::vector<OracleStage>& stages, ExecutionMode mode,
                             std::size_t pool_size, double trigger_hz = 0.0);

/// Oracle stages for a compute-only stage list (links need their configs; see
/// the scenario layer).
std::vector<OracleStage> oracle_stages(const std::vector<Stage>& stages);

}  // namespace nanopipe::pipeline
