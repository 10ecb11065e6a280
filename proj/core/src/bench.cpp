#include "nanopipe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#include "nanopipe/coro.hpp"
#include "nanopipe/cpx.hpp"
#include "nanopipe/errors.hpp"

namespace nanopipe::bench {

namespace {

using Clock = std::chrono::steady_clock;

struct PingPong {
  coro::Event ping{"ping"};
  std::uint64_t rounds = 0;
};

void ping_body(coro::Context& ctx) {
  auto& p = ctx.args_as<PingPong>();
  NP_CO_BEGIN(ctx);
  for (;;) {
    NP_CO_WAIT(ctx, p.ping);
    ++p.rounds;
    p.ping.reset();
  }
  NP_CO_END(ctx);
}

template <typename Op>
std::vector<double> sample(std::uint64_t iterations, std::uint32_t batch, Op&& op) {
  const std::uint64_t samples = (iterations + batch - 1) / batch;
  std::vector<double> per_op;
  per_op.reserve(samples);
  for (std::uint32_t i = 0; i < batch * 10; ++i) op();  // warm-up
  for (std::uint64_t s = 0; s < samples; ++s) {
    const auto t0 = Clock::now();
    for (std::uint32_t i = 0; i < batch; ++i) op();
    const auto t1 = Clock::now();
    per_op.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count() / batch);
  }
  return per_op;
}

volatile std::uint8_t g_sink = 0;

}  // namespace

std::string_view to_string(BenchKind kind) {
  switch (kind) {
    case BenchKind::CtxSwitch: return "ctx_switch";
    case BenchKind::EventComplete: return "event_complete";
    case BenchKind::PacketEncode: return "packet_encode";
  }
  return "?";
}

BenchKind parse_bench_kind(std::string_view text) {
  for (auto k : {BenchKind::CtxSwitch, BenchKind::EventComplete, BenchKind::PacketEncode}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown benchmark kind '" + std::string(text) + "'");
}

BenchReport microbench(BenchKind kind, std::uint64_t iterations, std::uint32_t batch) {
  if (batch == 0) throw ConfigError("batch must be positive");
  BenchReport r;
  r.kind = kind;
  r.context_bytes = sizeof(coro::Context);
  r.bookkeeping_bytes = coro::kContextBookkeepingBytes;

  std::vector<double> per_op;
  coro::EventLoop loop(coro::ClockMode::RealTime);
  switch (kind) {
    case BenchKind::CtxSwitch: {
      // One suspend plus one resume of a waiting coroutine per operation.
      PingPong p;
      coro::Task task(coro::register_coroutine("bench_ping", &ping_body), &p);
      loop.spawn(task.ctx);
      loop.run_ready();
      per_op = sample(iterations, batch, [&] {
        loop.complete(p.ping);
        loop.run_ready();
      });
      if (p.rounds < iterations) throw UsageError("ping-pong lost rounds");
      break;
    }
    case BenchKind::EventComplete: {
      coro::Event ev("bench");
      per_op = sample(iterations, batch, [&] {
        loop.complete(ev);
        ev.reset();
      });
      break;
    }
    case BenchKind::PacketEncode: {
      cpx::CpxPacket pkt;
      per_op = sample(iterations, batch, [&] {
        const auto h = cpx::encode_header(pkt, 0);
        g_sink = static_cast<std::uint8_t>(g_sink ^ h[2]);
        pkt.last_fragment = !pkt.last_fragment;
      });
      break;
    }
  }

  r.iterations = static_cast<std::uint64_t>(per_op.size()) * batch;
  double sum = 0;
  for (double v : per_op) sum += v;
  r.mean_ns = sum / static_cast<double>(per_op.size());
  std::sort(per_op.begin(), per_op.end());
  r.median_ns = per_op[per_op.size() / 2];
  r.p99_ns = per_op[std::min(per_op.size() - 1, per_op.size() * 99 / 100)];
  return r;
}

std::string format_report(const BenchReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "kind=%s iterations=%llu median_ns=%.1f p99_ns=%.1f mean_ns=%.1f\n"
                "context_bytes=%zu bookkeeping_bytes=%zu (MCU reference: %zu B per task)\n",
                std::string(to_string(r.kind)).c_str(), static_cast<unsigned long long>(r.iterations),
                r.median_ns, r.p99_ns, r.mean_ns, r.context_bytes, r.bookkeeping_bytes, kReferenceTaskBytes);
  return buf;
}

}  // namespace nanopipe::bench
