#pragma once

// Closed-loop workloads loaded from JSON: camera -> compute -> links ->
// (optional remote compute) -> control sink, plus the image streaming
// workload through the CPX router. See docs/scenario-format.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nanopipe/cpx.hpp"
#include "nanopipe/oracle.hpp"
#include "nanopipe/pipeline.hpp"
#include "nanopipe/trace.hpp"
#include "nanopipe/vnode.hpp"

namespace nanopipe::scenarios {

enum class ScenarioKind : std::uint8_t { Pipeline, Streaming };

struct CameraSpec {
  vnode::CameraMode mode = vnode::CameraMode::Trigger;
  double rate_hz = 0.0;  // 0 = free-running (trigger mode only)
  std::uint32_t width = 160;
  std::uint32_t height = 96;
  std::uint32_t bytes_per_pixel = 1;
  Micros readout_us = 8000;
  Micros min_trigger_interval_us = vnode::kTriggerMinIntervalUs;

  std::size_t frame_bytes() const { return std::size_t{width} * height * bytes_per_pixel; }
};

struct MetricSpec {
  std::string capture = "capture";
  std::string sink = "control_sink";
  std::string inference = "inference";  // empty: use the source rate
  std::string rtt_from;                 // stage whose start opens a round trip
  std::string rtt_to;                   // stage whose end closes it
  std::int64_t steady_from = 10;

  bool operator==(const MetricSpec&) const = default;
};

/// Image streaming through the router: source -> (SPI) -> router -> (Wi-Fi) -> dest.
struct StreamSpec {
  std::string source = "gap8";
  std::string router = "esp32";
  std::string dest = "host";
};

struct Scenario {
  std::string name;
  std::string description;
  ScenarioKind kind = ScenarioKind::Pipeline;
  std::vector<vnode::NodeSpec> nodes;
  std::vector<vnode::LinkConfig> links;
  CameraSpec camera;
  std::vector<pipeline::Stage> stages;
  pipeline::ExecutionMode mode = pipeline::ExecutionMode::Pipelined;
  cpx::RouterConfig router;
  std::size_t pool_size = 2;
  std::uint64_t frames = 200;
  std::uint64_t seed = 1;
  MetricSpec metrics;
  StreamSpec stream;
  std::vector<double> sweep_hz;  // optional offered-load sweep

  /// Rate of the source schedule in Hz, 0 when free-running.
  double source_hz() const { return camera.rate_hz; }
  bool is_remote() const;
};

/// Validates and converts a scenario document. Throws ConfigError with the
/// offending key on any schema violation or infeasible configuration.
Scenario parse_scenario(std::string_view json_text, const std::string& origin = "<memory>");
Scenario load_scenario_file(const std::filesystem::path& path);

/// Fixture directory: $NANOPIPE_SCENARIO_DIR if set, else the build-time default.
std::filesystem::path scenario_dir();
/// A path to an existing file is used as is; otherwise `<dir>/<name>.json`.
std::filesystem::path resolve_scenario(std::string_view name_or_path);
Scenario load_scenario(std::string_view name_or_path);
/// Fixture names (file stems) in `dir`, sorted.
std::vector<std::string> list_scenarios(const std::filesystem::path& dir = scenario_dir());

struct Metrics {
  double closed_loop_hz = 0;
  double inference_hz = 0;
  double drop_pct = 0;
  double e2e_mean_ms = 0;
  double e2e_p95_ms = 0;
  std::optional<double> rtt_mean_ms;
  std::uint64_t frames_delivered = 0;
  std::uint64_t frames_dropped = 0;

  bool operator==(const Metrics&) const = default;
};

/// Everything compute_metrics needs besides the trace. Stored next to the
/// metrics so they can be recomputed from the trace CSV alone.
struct MetricInputs {
  MetricSpec spec;
  std::map<std::string, double> clock_offsets_us;  // relative to one reference node
  double source_hz = 0;

  bool operator==(const MetricInputs&) const = default;
};

/// Steady-state metrics (frames >= spec.steady_from). Node-local timestamps
/// are mapped to a common clock by subtracting each node's offset. Throws
/// UsageError when fewer than ten sink receipts fall in the window.
Metrics compute_metrics(const Trace& trace, const MetricInputs& inputs);

std::string metrics_to_json(const Metrics& metrics, const MetricInputs& inputs);
/// Parses the output of metrics_to_json.
std::pair<Metrics, MetricInputs> metrics_from_json(std::string_view text);

/// Per-node clock offsets relative to the capture node, from two-way
/// exchanges on a fresh copy of the topology (composed along link paths).
std::map<std::string, double> estimate_offsets(const Scenario& s);

/// Closed-form period for the scenario's stage graph, when one exists.
pipeline::OracleResult scenario_oracle(const Scenario& s);

struct RunResult {
  Trace trace;
  Metrics metrics;
  MetricInputs inputs;
  pipeline::OracleResult oracle;
  std::optional<double> period_us;  // measured at the sink
  cpx::RouterStats router;          // streaming scenarios only
};

/// Runs a scenario to completion. `source_hz` overrides the camera rate.
RunResult run_scenario(const Scenario& s, std::optional<double> source_hz = std::nullopt);
/// run_scenario for workloads whose inference runs off the drone; throws
/// ConfigError unless the stage graph crosses a Wi-Fi link and computes on
/// the host.
RunResult run_remote_scenario(const Scenario& s, std::optional<double> source_hz = std::nullopt);

}  // namespace nanopipe::scenarios
