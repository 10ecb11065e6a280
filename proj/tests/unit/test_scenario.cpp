#include <doctest.h>

#include <sstream>
#include <string>

#include "nanopipe/errors.hpp"
#include "nanopipe/scenario.hpp"

using namespace nanopipe;
using namespace nanopipe::scenarios;

namespace {

const std::string kMinimal = R"({
  "name": "mini",
  "frames": 60,
  "nodes": [{"name": "gap8"}, {"name": "stm32", "clock_offset_us": -3000}],
  "links": [{"preset": "uart", "from": "gap8", "to": "stm32", "duplex": true}],
  "camera": {"mode": "trigger", "rate_hz": 20},
  "stages": [
    {"name": "capture", "node": "gap8", "resource": "cpi", "duration_us": 8000},
    {"name": "inference", "node": "gap8", "resource": "cluster", "duration_us": 20000, "after": ["capture"]},
    {"name": "uart_down", "node": "gap8", "link_to": "stm32", "bytes": 64, "after": ["inference"]},
    {"name": "control_sink", "node": "stm32", "resource": "fc", "after": ["uart_down"]}
  ]
})";

std::string with(std::string text, const std::string& from, const std::string& to) {
  const auto at = text.find(from);
  REQUIRE(at != std::string::npos);
  return text.replace(at, from.size(), to);
}

void add_end(Trace& t, Micros at, const std::string& node, const std::string& stage, std::int64_t f) {
  t.add(at, node, TraceKind::StageEnd, stage, f);
}
void add_start(Trace& t, Micros at, const std::string& node, const std::string& stage, std::int64_t f) {
  t.add(at, node, TraceKind::StageStart, stage, f);
}

}  // namespace

TEST_CASE("a minimal scenario parses with defaults filled in") {
  const Scenario s = parse_scenario(kMinimal);
  CHECK(s.name == "mini");
  CHECK(s.kind == ScenarioKind::Pipeline);
  CHECK(s.mode == pipeline::ExecutionMode::Pipelined);
  CHECK(s.pool_size == 2);
  CHECK(s.links.size() == 2);
  CHECK(s.links[1].from == "stm32");
  CHECK(s.stages.size() == 4);
  CHECK(s.metrics.sink == "control_sink");
  // Only the stages that stay on the capture node hold the frame buffer.
  CHECK(s.stages[0].holds_buffer);
  CHECK(s.stages[1].holds_buffer);
  CHECK(s.stages[2].holds_buffer);
  CHECK_FALSE(s.stages[3].holds_buffer);
  CHECK_FALSE(s.is_remote());
}

TEST_CASE("schema violations are config errors") {
  const std::pair<std::string, std::string> cases[] = {
      {"\"frames\": 60", "\"frames\": 49"},
      {"\"frames\": 60", "\"frames\": 60, \"colour\": 1"},
      {"\"frames\": 60", "\"frames\": \"many\""},
      {"\"frames\": 60", "\"frames\": 60, \"pool_size\": 0"},
      {"\"frames\": 60", "\"frames\": 60, \"mode\": \"parallel\""},
      {"\"rate_hz\": 20", "\"rate_hz\": 31"},
      {"\"mode\": \"trigger\"", "\"mode\": \"trigger\", \"fps\": 3"},
      {"\"mode\": \"trigger\"", "\"mode\": \"video\""},
      {"\"preset\": \"uart\"", "\"preset\": \"can\""},
      {"\"to\": \"stm32\"", "\"to\": \"esp32\""},
      {"\"duration_us\": 8000", "\"duration_us\": -1"},
      {"\"after\": [\"capture\"]", "\"after\": [\"camera\"]"},
      {"\"after\": [\"inference\"]}", "\"after\": [\"inference\"], \"duration_us\": 5}"},
      {"\"node\": \"stm32\"", "\"node\": \"nrf51\""},
      {"\"name\": \"mini\",", ""},
      {"\"frames\": 60", "\"frames\": 60, \"metrics\": {\"sink\": \"nowhere\"}"},
      {"\"frames\": 60", "\"frames\": 60, \"metrics\": {\"rtt_from\": \"capture\"}"},
  };
  for (const auto& [from, to] : cases) {
    CAPTURE(to);
    CHECK_THROWS_AS(parse_scenario(with(kMinimal, from, to)), ConfigError);
  }
  CHECK_THROWS_AS(parse_scenario("{ not json"), ConfigError);
  CHECK_THROWS_AS(parse_scenario("[]"), ConfigError);
}

TEST_CASE("streaming rate ceiling") {
  const std::string stream = with(kMinimal, "\"mode\": \"trigger\", \"rate_hz\": 20",
                                  "\"mode\": \"streaming\", \"rate_hz\": 150");
  CHECK_NOTHROW(parse_scenario(stream));
  CHECK_THROWS_AS(parse_scenario(with(stream, "150", "151")), ConfigError);
}

TEST_CASE("scenario registry") {
  const auto names = list_scenarios(NANOPIPE_TEST_SCENARIOS);
  for (const char* expected : {"pulp-frontnet-48", "fcnn-39", "imav-30", "cereda-remote-40", "nanoflownet-11",
                               "onboard-latency-30ms", "remote-40hz", "remote-40hz-delay500", "remote-sweep",
                               "rtt-55", "streaming-72hz"}) {
    CHECK(std::find(names.begin(), names.end(), expected) != names.end());
  }
  for (const auto& n : names) {
    CAPTURE(n);
    CHECK_NOTHROW(load_scenario_file(std::string(NANOPIPE_TEST_SCENARIOS) + "/" + n + ".json"));
  }
  CHECK_THROWS_AS(load_scenario_file("/nonexistent/x.json"), ConfigError);
}

TEST_CASE("metrics arithmetic on a hand-built trace") {
  // 49 sink receipts 20833 us apart on a node whose clock runs 3 ms behind.
  Trace t;
  for (std::int64_t f = 0; f < 59; ++f) {
    const Micros cap = f * 20'833;
    add_start(t, cap, "gap8", "capture", f);
    add_start(t, cap + 8000, "gap8", "inference", f);
    add_end(t, cap + 28'833, "gap8", "inference", f);
    add_end(t, cap + 30'000 - 3000, "stm32", "control_sink", f);
  }
  t.add(5, "gap8", TraceKind::Drop, "capture", 99);
  MetricInputs in;
  in.clock_offsets_us = {{"gap8", 0}, {"stm32", -3000}};
  const Metrics m = compute_metrics(t, in);
  CHECK(m.closed_loop_hz == doctest::Approx(1e6 / 20'833.0));
  CHECK(m.inference_hz == doctest::Approx(1e6 / 20'833.0));
  CHECK(m.drop_pct == doctest::Approx(0).epsilon(1e-9));
  CHECK(m.e2e_mean_ms == doctest::Approx(30.0));
  CHECK(m.e2e_p95_ms == doctest::Approx(30.0));
  CHECK_FALSE(m.rtt_mean_ms.has_value());
  CHECK(m.frames_delivered == 59);
  CHECK(m.frames_dropped == 1);
}

TEST_CASE("p95 uses the nearest rank") {
  Trace t;
  for (std::int64_t f = 0; f < 20; ++f) {
    add_start(t, f * 100'000, "n", "capture", f);
    add_end(t, f * 100'000 + (f + 1) * 1000, "n", "control_sink", f);
  }
  MetricInputs in;
  in.spec.steady_from = 0;
  in.spec.inference.clear();
  in.source_hz = 10;
  in.clock_offsets_us = {{"n", 0}};
  const Metrics m = compute_metrics(t, in);
  CHECK(m.e2e_p95_ms == doctest::Approx(19.0));
  CHECK(m.e2e_mean_ms == doctest::Approx(10.5));
  CHECK(m.inference_hz == 10);
}

TEST_CASE("rtt from the opening stage start to the closing stage end") {
  Trace t;
  for (std::int64_t f = 0; f < 30; ++f) {
    add_start(t, f * 50'000 + 100, "gap8", "spi_up", f);
    add_end(t, f * 50'000 + 55'100, "gap8", "spi_down", f);
    add_end(t, f * 50'000 + 56'000, "gap8", "control_sink", f);
  }
  MetricInputs in;
  in.spec.rtt_from = "spi_up";
  in.spec.rtt_to = "spi_down";
  in.clock_offsets_us = {{"gap8", 0}};
  const Metrics m = compute_metrics(t, in);
  REQUIRE(m.rtt_mean_ms.has_value());
  CHECK(*m.rtt_mean_ms == doctest::Approx(55.0));
}

TEST_CASE("too few steady-state receipts") {
  Trace t;
  for (std::int64_t f = 0; f < 19; ++f) add_end(t, f * 1000, "n", "control_sink", f);
  MetricInputs in;
  in.clock_offsets_us = {{"n", 0}};
  CHECK_THROWS_AS(compute_metrics(t, in), UsageError);
  add_end(t, 19'000, "n", "control_sink", 19);
  CHECK_NOTHROW(compute_metrics(t, in));
  add_end(t, 20'000, "elsewhere", "control_sink", 20);
  CHECK_THROWS_AS(compute_metrics(t, in), UsageError);
}

TEST_CASE("metrics JSON round trip") {
  Metrics m;
  m.closed_loop_hz = 47.99;
  m.inference_hz = 48.0;
  m.drop_pct = 0.0208;
  m.e2e_mean_ms = 30.3;
  m.e2e_p95_ms = 31.25;
  m.frames_delivered = 200;
  m.frames_dropped = 1;
  MetricInputs in;
  in.clock_offsets_us = {{"gap8", 0}, {"host", -250'000.5}};
  in.source_hz = 48;
  auto [m1, in1] = metrics_from_json(metrics_to_json(m, in));
  CHECK(m1 == m);
  CHECK(in1 == in);
  m.rtt_mean_ms = 55.1;
  CHECK(metrics_from_json(metrics_to_json(m, in)).first == m);
  CHECK_THROWS_AS(metrics_from_json("{}"), ConfigError);
}

TEST_CASE("metrics recompute exactly from the written trace") {
  const Scenario s = load_scenario_file(std::string(NANOPIPE_TEST_SCENARIOS) + "/remote-40hz.json");
  const RunResult r = run_scenario(s);
  std::istringstream csv(r.trace.to_csv());
  const Trace back = Trace::from_csv(csv);
  CHECK(back == r.trace);
  const auto [m, in] = metrics_from_json(metrics_to_json(r.metrics, r.inputs));
  CHECK(compute_metrics(back, in) == r.metrics);
  CHECK(m == r.metrics);
}

TEST_CASE("estimated offsets match the configured clocks") {
  const Scenario s = load_scenario_file(std::string(NANOPIPE_TEST_SCENARIOS) + "/remote-40hz.json");
  const auto off = estimate_offsets(s);
  for (const auto& n : s.nodes) {
    CAPTURE(n.name);
    CHECK(off.at(n.name) == static_cast<double>(n.clock_offset_us));
  }
}

TEST_CASE("remote runs require Wi-Fi offload") {
  const Scenario onboard = parse_scenario(kMinimal);
  CHECK_THROWS_AS(run_remote_scenario(onboard), ConfigError);
  const Scenario remote = load_scenario_file(std::string(NANOPIPE_TEST_SCENARIOS) + "/remote-40hz.json");
  CHECK(remote.is_remote());
}

TEST_CASE("the oracle closes the loop on a small onboard scenario") {
  const Scenario s = parse_scenario(kMinimal);
  const RunResult r = run_scenario(s);
  REQUIRE(r.oracle.period_us);
  REQUIRE(r.period_us);
  CHECK(*r.period_us == doctest::Approx(*r.oracle.period_us).epsilon(0.02));
  CHECK(*r.oracle.period_us == 50'000);  // the 20 Hz trigger
  CHECK_THROWS_AS(run_scenario(s, 40.0), ConfigError);
}
