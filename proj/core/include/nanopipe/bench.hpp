#pragma once

// Wall-clock microbenchmarks on a real-time loop. Each sample times a batch
// of operations; median and p99 are per operation.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace nanopipe::bench {

enum class BenchKind : std::uint8_t { CtxSwitch, EventComplete, PacketEncode };

std::string_view to_string(BenchKind kind);
/// "ctx_switch" | "event_complete" | "packet_encode"; throws ConfigError otherwise.
BenchKind parse_bench_kind(std::string_view text);

struct BenchReport {
  BenchKind kind = BenchKind::CtxSwitch;
  std::uint64_t iterations = 0;
  double median_ns = 0;
  double p99_ns = 0;
  double mean_ns = 0;
  std::size_t context_bytes = 0;      // sizeof the coroutine context
  std::size_t bookkeeping_bytes = 0;  // the same without the user args pointer
};

inline constexpr std::size_t kReferenceTaskBytes = 18;  // MCU implementation, per task

/// Runs at least `iterations` operations in batches of `batch`.
BenchReport microbench(BenchKind kind, std::uint64_t iterations = 1'000'000, std::uint32_t batch = 100);

std::string format_report(const BenchReport& r);

}  // namespace nanopipe::bench
