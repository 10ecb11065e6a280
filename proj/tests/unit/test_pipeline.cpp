#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "nanopipe/errors.hpp"
#include "nanopipe/pipeline.hpp"
#include "recurrence.hpp"

using namespace nanopipe;
using namespace nanopipe::pipeline;

namespace {

Stage compute(std::string name, std::string resource, Micros d, std::vector<std::string> after = {}) {
  Stage s;
  s.name = std::move(name);
  s.resource = std::move(resource);
  s.duration_us = d;
  s.after = std::move(after);
  return s;
}

std::vector<Stage> chain(const std::vector<Micros>& d) {
  std::vector<Stage> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<std::string> after;
    if (i > 0) after.push_back("s" + std::to_string(i - 1));
    out.push_back(compute("s" + std::to_string(i), "r" + std::to_string(i), d[i], after));
  }
  return out;
}

std::vector<Micros> ends_of(const Trace& t, const std::string& stage) {
  std::vector<Micros> out;
  for (const auto& e : t.events()) {
    if (e.kind == TraceKind::StageEnd && e.subject == stage) out.push_back(e.t);
  }
  return out;
}

}  // namespace

TEST_CASE("execution mode names") {
  CHECK(parse_mode("serialized") == ExecutionMode::Serialized);
  CHECK(parse_mode("pipelined") == ExecutionMode::Pipelined);
  CHECK(to_string(ExecutionMode::Pipelined) == "pipelined");
  CHECK_THROWS_AS(parse_mode("parallel"), ConfigError);
}

TEST_CASE("compute time includes the per-byte cost") {
  Stage s = compute("x", "r", 100);
  s.us_per_byte = 0.25;
  s.bytes = 10;
  CHECK(s.compute_time() == 103);
}

TEST_CASE("topological order") {
  std::vector<Stage> g{compute("sink", "d", 0, {"b", "c"}), compute("c", "c", 1, {"a"}),
                       compute("a", "a", 1), compute("b", "b", 1, {"a"})};
  CHECK(topological_order(g) == std::vector<std::size_t>{2, 1, 3, 0});
  CHECK(sink_stage(g) == 0);

  CHECK_THROWS_AS(topological_order({}), ConfigError);
  CHECK_THROWS_AS(topological_order({compute("a", "a", 1), compute("a", "b", 1, {"a"})}), ConfigError);
  CHECK_THROWS_AS(topological_order({compute("a", "a", 1), compute("b", "b", 1, {"zz"})}), ConfigError);
  CHECK_THROWS_AS(topological_order({compute("a", "a", 1), compute("b", "b", 1)}), ConfigError);
  CHECK_THROWS_AS(topological_order({compute("a", "a", 1), compute("b", "b", 1, {"a", "c"}),
                                     compute("c", "c", 1, {"b"})}),
                  ConfigError);
  CHECK_THROWS_AS(topological_order({compute("", "a", 1)}), ConfigError);
}

TEST_CASE("chains follow the reference recurrence frame by frame") {
  const std::vector<std::vector<Micros>> cases{{3000, 5000}, {8000, 1000, 2000}, {2000, 2000, 2000}, {1, 7, 3}};
  for (const auto& d : cases) {
    for (std::size_t pool : {1, 2, 3}) {
      for (auto mode : {ExecutionMode::Serialized, ExecutionMode::Pipelined}) {
        for (double hz : {0.0, 125.0}) {
          CAPTURE(pool);
          CAPTURE(to_string(mode));
          CAPTURE(hz);
          const auto t = pipeline_run(chain(d), mode, pool, 40, hz);
          const auto expect = nanopipe_test::chain_schedule(
              d, mode == ExecutionMode::Pipelined, pool, 40, hz > 0 ? static_cast<Micros>(1e6 / hz) : 0);
          CHECK(ends_of(t, "s" + std::to_string(d.size() - 1)) == expect);
        }
      }
    }
  }
}

TEST_CASE("frames in flight never exceed the pool") {
  for (std::size_t pool : {1, 2, 3}) {
    const auto t = pipeline_run(chain({2000, 5000, 1000}), ExecutionMode::Pipelined, pool, 60);
    int in_flight = 0, peak = 0;
    for (const auto& e : t.events()) {
      if (e.kind == TraceKind::StageStart && e.subject == "s0") peak = std::max(peak, ++in_flight);
      if (e.kind == TraceKind::StageEnd && e.subject == "s2") --in_flight;
    }
    CHECK(peak == static_cast<int>(pool));
  }
}

TEST_CASE("serialized stages never overlap") {
  const auto t = pipeline_run(chain({2000, 5000, 1000}), ExecutionMode::Serialized, 3, 30);
  Micros busy_until = -1;
  int open = 0;
  for (const auto& e : t.events()) {
    if (e.kind == TraceKind::StageStart) {
      CHECK(open == 0);
      CHECK(e.t >= busy_until);
      ++open;
    } else if (e.kind == TraceKind::StageEnd) {
      --open;
      busy_until = e.t;
    }
  }
}

TEST_CASE("fork-join graph") {
  // a -> {b, c} -> d; b and c run in parallel in pipelined mode.
  std::vector<Stage> g{compute("a", "a", 1000), compute("b", "b", 4000, {"a"}), compute("c", "c", 3000, {"a"}),
                       compute("d", "d", 500, {"b", "c"})};
  const auto ser = pipeline_run(g, ExecutionMode::Serialized, 2, 50);
  CHECK(*steady_state_period_us(ser, "d") == doctest::Approx(8500));
  const auto pip = pipeline_run(g, ExecutionMode::Pipelined, 3, 50);
  CHECK(*steady_state_period_us(pip, "d") == doctest::Approx(4000));
  // Pool 1: a buffer lives from a's start to d's end, 1000 + 4000 + 500.
  const auto one = pipeline_run(g, ExecutionMode::Pipelined, 1, 50);
  CHECK(*steady_state_period_us(one, "d") == doctest::Approx(5500));
}

TEST_CASE("steady-state period needs two samples past the warm-up") {
  Trace t;
  t.add(100, "n", TraceKind::StageEnd, "x", 10);
  CHECK_FALSE(steady_state_period_us(t, "x").has_value());
  t.add(350, "n", TraceKind::StageEnd, "x", 11);
  t.add(600, "n", TraceKind::StageEnd, "x", 12);
  t.add(0, "n", TraceKind::StageEnd, "x", 3);
  CHECK(*steady_state_period_us(t, "x") == doctest::Approx(250));
}

TEST_CASE("streaming producer drops ticks that find every buffer busy") {
  vnode::NodeGraph g({{"gap8", 0}}, {});
  PipelineConfig cfg;
  cfg.stages = {compute("capture", "cpi", 2000), compute("infer", "cluster", 15'000, {"capture"})};
  cfg.pool_size = 1;
  cfg.frames = 30;
  cfg.trigger_hz = 100;
  cfg.drop_when_busy = true;
  Trace trace;
  g.set_trace(&trace);
  Pipeline p(g, cfg);
  p.start();
  g.run();
  CHECK(p.finished());
  // Each frame holds the only buffer for 17 ms, so one 10 ms tick in two is lost.
  CHECK(*steady_state_period_us(trace, "infer") == doctest::Approx(20'000));
  CHECK(p.dropped() == 29);
  std::size_t drops = 0;
  for (const auto& e : trace.events()) drops += e.kind == TraceKind::Drop ? 1 : 0;
  CHECK(drops == p.dropped());
}

TEST_CASE("free-running producer respects the minimum start interval") {
  vnode::NodeGraph g({{"gap8", 0}}, {});
  PipelineConfig cfg;
  cfg.stages = {compute("capture", "cpi", 1000), compute("infer", "cluster", 2000, {"capture"})};
  cfg.frames = 30;
  cfg.min_interval_us = 5000;
  Trace trace;
  g.set_trace(&trace);
  Pipeline p(g, cfg);
  p.start();
  g.run();
  CHECK(*steady_state_period_us(trace, "infer") == doctest::Approx(5000));
}

TEST_CASE("stages on links and across nodes") {
  vnode::LinkConfig l;
  l.from = "gap8";
  l.to = "stm32";
  l.name = "uart";
  l.bandwidth_bps = 1'000'000;
  l.base_latency_us = 955;
  vnode::NodeGraph g({{"gap8", 0}, {"stm32", -3000}}, {l});
  PipelineConfig cfg;
  Stage down;
  down.name = "down";
  down.link_to = "stm32";
  down.bytes = 64;
  down.after = {"infer"};
  Stage sink = compute("sink", "fc", 0, {"down"});
  sink.node = "stm32";
  cfg.stages = {compute("capture", "cpi", 8000), compute("infer", "cluster", 20'000, {"capture"}), down, sink};
  cfg.frames = 20;
  Trace trace;
  g.set_trace(&trace);
  Pipeline p(g, cfg);
  p.start();
  g.run();
  // Sink receipt, in the stm32 clock: 8000 + 20000 + 512 + 955 - 3000.
  const auto sink_ends = ends_of(trace, "sink");
  REQUIRE(!sink_ends.empty());
  CHECK(sink_ends.front() == 26'467);

  PipelineConfig bad = cfg;
  bad.stages[0].link_to = "stm32";
  CHECK_THROWS_AS(Pipeline(g, bad), ConfigError);
  PipelineConfig no_rate = cfg;
  no_rate.drop_when_busy = true;
  CHECK_THROWS_AS(Pipeline(g, no_rate), ConfigError);
}
