#include "nanopipe/oracle.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "nanopipe/errors.hpp"

namespace nanopipe::pipeline {

OracleResult analytic_oracle(const std::vector<OracleStage>& stages, ExecutionMode mode,
                             std::size_t pool_size, double trigger_hz) {
  if (stages.empty()) return {std::nullopt, "no stages"};
  if (pool_size == 0) throw ConfigError("buffer pool needs at least one buffer");
  for (const auto& s : stages) {
    if (s.jitter) return {std::nullopt, "stochastic link delay"};
  }
  const double trigger = trigger_hz > 0 ? 1e6 / trigger_hz : 0.0;

  if (mode == ExecutionMode::Serialized) {
    double sum = 0;
    for (const auto& s : stages) sum += static_cast<double>(s.occupancy + s.latency);
    return {std::max(sum, trigger), {}};
  }

  std::set<std::string> resources;
  for (const auto& s : stages) {
    if (!resources.insert(s.resource).second) {
      return {std::nullopt, "stages share resource '" + s.resource + "'"};
    }
  }

  // Earliest start of each stage relative to buffer acquisition.
  const std::size_t n = stages.size();
  std::vector<double> start(n, -1.0);
  std::size_t producer = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (stages[i].after.empty()) {
      if (producer != n) throw ConfigError("more than one producer stage");
      producer = i;
    }
  }
  if (producer == n) throw ConfigError("no producer stage");
  start[producer] = 0;
  for (std::size_t pass = 0; pass < n; ++pass) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == producer) continue;
      double s = 0;
      bool ready = true;
      for (std::size_t u : stages[i].after) {
        if (u >= n) throw ConfigError("stage dependency out of range");
        if (start[u] < 0) {
          ready = false;
          break;
        }
        s = std::max(s, start[u] + static_cast<double>(stages[u].occupancy + stages[u].latency));
      }
      if (ready && start[i] != s) {
        start[i] = s;
        changed = true;
      }
    }
    if (!changed) break;
  }
  if (std::any_of(start.begin(), start.end(), [](double s) { return s < 0; })) {
    throw ConfigError("stage graph has a cycle");
  }

  double hold = static_cast<double>(stages[producer].occupancy);
  double busiest = 0;
  for (std::size_t i = 0; i < n; ++i) {
    busiest = std::max(busiest, static_cast<double>(stages[i].occupancy));
    if (i != producer && stages[i].holds_buffer) {
      hold = std::max(hold, start[i] + static_cast<double>(stages[i].occupancy));
    }
  }
  const double period = std::max({busiest, hold / static_cast<double>(pool_size), trigger});
  return {period, {}};
}

std::vector<OracleStage> oracle_stages(const std::vector<Stage>& stages) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < stages.size(); ++i) index[stages[i].name] = i;
  std::vector<OracleStage> out;
  for (const auto& st : stages) {
    if (st.is_link()) throw ConfigError("stage '" + st.name + "' is a link; use the scenario oracle");
    OracleStage o;
    o.resource = st.node + "/" + st.resource;
    o.occupancy = st.compute_time();
    o.holds_buffer = st.holds_buffer;
    for (const auto& up : st.after) {
      auto it = index.find(up);
      if (it == index.end()) throw ConfigError("unknown stage '" + up + "'");
      o.after.push_back(it->second);
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace nanopipe::pipeline
