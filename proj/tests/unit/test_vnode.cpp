#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "nanopipe/errors.hpp"
#include "nanopipe/vnode.hpp"

using namespace nanopipe;
using namespace nanopipe::vnode;

namespace {

LinkConfig plain_link(std::uint64_t bps, Micros base, Micros injected = 0) {
  LinkConfig c;
  c.name = "l";
  c.from = "a";
  c.to = "b";
  c.bandwidth_bps = bps;
  c.base_latency_us = base;
  c.injected_delay_us = injected;
  return c;
}

NodeGraph two_nodes(const LinkConfig& c, Micros offset_b = 0) {
  return NodeGraph({{"a", 0}, {"b", offset_b}}, {c});
}

}  // namespace

TEST_CASE("serialization time rounds up to whole microseconds") {
  const LinkConfig c = plain_link(3'000'000, 0);
  CHECK(c.serialization_time(0) == 0);
  CHECK(c.serialization_time(3) == 8);   // 24 bits / 3 Mbit/s = 8 us
  CHECK(c.serialization_time(4) == 11);  // 10.67 us
  const LinkConfig d = plain_link(1'000'000, 50, 500);
  CHECK(d.transfer_time(1000) == 50 + 8000 + 500);
  CHECK_THROWS_AS(plain_link(0, 0).serialization_time(1), ConfigError);
}

TEST_CASE("a transfer releases the sender at last-byte-out and reaches the peer later") {
  auto g = two_nodes(plain_link(1'000'000, 50, 500));
  Link& l = g.link("a", "b");
  coro::Event sent, delivered;
  Delivery d{};
  g.loop("a").call_at(0, [&] { l.send_async(1000, &sent, &delivered, "", -1, [&](const Delivery& x) { d = x; }); });
  // Timers due at the same instant fire in arming order, so probe around the edges.
  g.loop("a").call_at(7999, [&] { CHECK_FALSE(sent.completed()); });
  g.loop("a").call_at(8001, [&] { CHECK(sent.completed()); });
  g.loop("a").call_at(8549, [&] { CHECK_FALSE(delivered.completed()); });
  g.loop("a").call_at(8551, [&] { CHECK(delivered.completed()); });
  g.run();
  CHECK(d.first_byte == 550);
  CHECK(d.last_byte == 8550);
  CHECK(l.stats().transfers == 1);
  CHECK(l.stats().bytes_delivered == 1000);
}

TEST_CASE("overlapping sends queue on the link") {
  auto g = two_nodes(plain_link(1'000'000, 100));
  Link& l = g.link("a", "b");
  std::vector<Micros> arrivals;
  for (int i = 0; i < 3; ++i) {
    l.send_async(500, nullptr, nullptr, "", i, [&](const Delivery& x) { arrivals.push_back(x.last_byte); });
  }
  g.run();
  CHECK(arrivals == std::vector<Micros>{4100, 8100, 12100});
}

TEST_CASE("segments arrive progressively") {
  LinkConfig c = plain_link(8'000'000, 10);  // one byte per microsecond
  c.mtu = 1000;
  auto g = two_nodes(c);
  Link& l = g.link("a", "b");
  std::vector<std::pair<std::size_t, Micros>> segs;
  l.set_segment_hook([&](std::size_t, std::size_t bytes, Micros t) { segs.emplace_back(bytes, t); });
  l.send_async(2500, nullptr, nullptr);
  g.run();
  REQUIRE(segs.size() == 3);
  CHECK(segs[0] == std::pair<std::size_t, Micros>{1000, 1010});
  CHECK(segs[1] == std::pair<std::size_t, Micros>{1000, 2010});
  CHECK(segs[2] == std::pair<std::size_t, Micros>{500, 2510});
  CHECK(l.stats().segments_delivered == 3);
}

TEST_CASE("segmentation disabled rejects transfers above the mtu") {
  LinkConfig c = plain_link(1'000'000, 0);
  c.mtu = 64;
  c.segmentation = false;
  auto g = two_nodes(c);
  CHECK_NOTHROW(g.link("a", "b").send_async(64, nullptr, nullptr));
  CHECK_THROWS_AS(g.link("a", "b").send_async(65, nullptr, nullptr), UsageError);
}

TEST_CASE("jitter is seeded and has the configured mean") {
  LinkConfig c = plain_link(1'000'000'000, 0);
  c.jitter_mean_us = 1000;
  auto run = [&](std::uint64_t seed) {
    NodeGraph g({{"a", 0}, {"b", 0}}, {c}, seed);
    std::vector<Micros> t;
    for (int i = 0; i < 4000; ++i) {
      g.link("a", "b").send_async(0, nullptr, nullptr, "", i, [&](const Delivery& d) { t.push_back(d.last_byte); });
    }
    g.run();
    return t;
  };
  const auto a = run(7), b = run(7), other = run(8);
  CHECK(a == b);
  CHECK(a != other);
  const double mean = static_cast<double>(a.back()) / static_cast<double>(a.size());
  CHECK(mean == doctest::Approx(1000).epsilon(0.05));
}

TEST_CASE("node clocks carry their offsets") {
  auto g = two_nodes(plain_link(1'000'000, 0), -3000);
  g.run_until(10'000);
  CHECK(g.loop("a").local_now() == 10'000);
  CHECK(g.loop("b").local_now() == 7'000);
  CHECK(g.loop("b").now() == 10'000);
}

TEST_CASE("topology errors") {
  CHECK_THROWS_AS(NodeGraph({{"a", 0}, {"a", 0}}, {}), ConfigError);
  CHECK_THROWS_AS(NodeGraph({{"a", 0}}, {plain_link(1, 0)}), ConfigError);
  LinkConfig c = plain_link(1'000'000, 0);
  CHECK_THROWS_AS(NodeGraph({{"a", 0}, {"b", 0}}, {c, c}), ConfigError);
  auto g = two_nodes(c);
  CHECK_THROWS_AS(g.link("b", "a"), ConfigError);
  CHECK_THROWS_AS(g.loop("zz"), ConfigError);
}

TEST_CASE("default topology") {
  auto g = NodeGraph::default_topology();
  CHECK(g.node_names().size() == 5);
  CHECK(g.links().size() == 10);
  CHECK(g.has_link("gap8", "esp32"));
  CHECK(g.has_link("esp32", "gap8"));
  CHECK(g.has_link("host", "nrf51"));
  CHECK_FALSE(g.has_link("gap8", "host"));
  CHECK(&g.engine("gap8", "cluster") == &g.engine("gap8", "cluster"));
}

TEST_CASE("compute engines serve jobs FIFO with per-byte cost") {
  coro::VirtualClock clock;
  coro::EventLoop loop(clock, "gap8", 40);
  ComputeEngine eng(loop, "cluster", 0.5);
  pipeline::BufferPool pool(loop, 1, 8);
  auto* buf = pool.try_acquire();
  buf->set_sequence(3);
  pool.publish(*buf);
  ComputeResult r1, r2;
  coro::Event d1, d2;
  compute_async(eng, *buf, 1000, &r1, d1);
  compute_async(eng, *buf, 500, &r2, d2);
  Job j;
  j.duration = 10;
  j.bytes = 5;  // ceil(2.5) = 3
  coro::Event d3;
  eng.submit(j, &d3);
  clock.run();
  CHECK(r1.sequence == 3);
  CHECK(r1.completed_at == 1040);
  CHECK(r2.completed_at == 1540);
  CHECK(clock.now() == 1513);
  CHECK(eng.busy_time() == 1513);
  CHECK(eng.jobs_completed() == 3);

  pipeline::FrameBuffer& fresh = pool.at(0);
  pool.claim(fresh);
  pool.release(fresh);
  CHECK_THROWS_AS(compute_async(eng, fresh, 1, nullptr, d1), UsageError);
}

TEST_CASE("triggered captures respect the minimum trigger interval") {
  coro::EventLoop loop;
  CameraConfig cfg;
  cfg.readout_us = 8000;
  Camera cam(loop, cfg);
  pipeline::BufferPool pool(loop, 2, cfg.frame_bytes());
  coro::Event a, b;
  std::vector<Micros> done;
  cam.capture_async(pool, pool.at(0), a);
  cam.capture_async(pool, pool.at(1), b);
  loop.call_at(8000, [&] { CHECK(a.completed()); });
  loop.run();
  CHECK(b.completed());
  CHECK(loop.now() == kTriggerMinIntervalUs + 8000);
  CHECK(pool.at(0).sequence() == 0);
  CHECK(pool.at(1).sequence() == 1);
  CHECK(pool.at(1).state() == pipeline::BufferState::Ready);
  CHECK(pool.at(1).copy_count() == 1);
}

TEST_CASE("streaming camera drops frames that find no free buffer") {
  coro::EventLoop loop;
  CameraConfig cfg;
  cfg.mode = CameraMode::Streaming;
  cfg.frame_period_us = 10'000;
  cfg.readout_us = 4000;
  Camera cam(loop, cfg);
  pipeline::BufferPool pool(loop, 1, cfg.frame_bytes());
  std::vector<std::int64_t> got;
  // Hold each buffer for 15 ms: every other frame finds the pool empty.
  cam.stream(pool, 10, [&](pipeline::FrameBuffer& b) {
    got.push_back(b.sequence());
    pool.claim(b);
    loop.call_at(loop.now() + 15'000, [&pool, &b] { pool.release(b); });
  });
  loop.run();
  CHECK(got == std::vector<std::int64_t>{0, 2, 4, 6, 8});
  CHECK(cam.stream_stats().delivered == 5);
  CHECK(cam.stream_stats().dropped == 5);
  CHECK(cam.stream_stats().jitter_us == 10'000);
  CHECK(cam.streaming_done());
}

TEST_CASE("camera configuration limits") {
  CameraConfig cfg;
  cfg.mode = CameraMode::Streaming;
  cfg.frame_period_us = kStreamingMinPeriodUs - 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.frame_period_us = kStreamingMinPeriodUs;
  CHECK_NOTHROW(cfg.validate());

  coro::EventLoop loop;
  Camera cam(loop, cfg);
  pipeline::BufferPool pool(loop, 1, 8);
  coro::Event ev;
  CHECK_THROWS_AS(cam.capture_async(pool, pool.at(0), ev), UsageError);
}
