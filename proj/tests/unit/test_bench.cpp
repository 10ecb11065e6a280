#include <doctest.h>

#include "nanopipe/bench.hpp"
#include "nanopipe/coro.hpp"
#include "nanopipe/errors.hpp"

using namespace nanopipe;
using namespace nanopipe::bench;

TEST_CASE("bench kinds") {
  CHECK(parse_bench_kind("ctx_switch") == BenchKind::CtxSwitch);
  CHECK(parse_bench_kind("event_complete") == BenchKind::EventComplete);
  CHECK(parse_bench_kind("packet_encode") == BenchKind::PacketEncode);
  CHECK(to_string(BenchKind::CtxSwitch) == "ctx_switch");
  CHECK_THROWS_AS(parse_bench_kind("fft"), ConfigError);
}

TEST_CASE("a short microbenchmark reports sane numbers") {
  for (auto kind : {BenchKind::CtxSwitch, BenchKind::EventComplete, BenchKind::PacketEncode}) {
    const BenchReport r = microbench(kind, 20'000);
    CHECK(r.iterations >= 20'000);
    CHECK(r.median_ns > 0);
    CHECK(r.p99_ns >= r.median_ns);
    CHECK(r.context_bytes == sizeof(coro::Context));
    CHECK(r.bookkeeping_bytes == coro::kContextBookkeepingBytes);
    CHECK(format_report(r).find(std::string(to_string(kind))) != std::string::npos);
  }
}
