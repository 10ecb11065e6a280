#include <benchmark/benchmark.h>

#include <vector>

#include "nanopipe/coro.hpp"
#include "nanopipe/cpx.hpp"
#include "nanopipe/pipeline.hpp"
#include "nanopipe/scenario.hpp"

using namespace nanopipe;

namespace {

struct PingPong {
  coro::Event ping{"ping"};
  std::uint64_t rounds = 0;
};

void pong(coro::Context& ctx) {
  auto& p = ctx.args_as<PingPong>();
  NP_CO_BEGIN(ctx);
  for (;;) {
    NP_CO_WAIT(ctx, p.ping);
    p.ping.reset();
    ++p.rounds;
  }
  NP_CO_END(ctx);
}

// One suspend/resume round trip per iteration.
void BM_ContextSwitch(benchmark::State& state) {
  coro::EventLoop loop(coro::ClockMode::RealTime);
  PingPong p;
  coro::Task t(coro::register_coroutine("bm_pong", &pong), &p);
  loop.spawn(t.ctx);
  loop.run_ready();
  for (auto _ : state) {
    loop.complete(p.ping);
    loop.run_ready();
  }
  benchmark::DoNotOptimize(p.rounds);
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ContextSwitch);

void BM_EventCompleteNoWaiters(benchmark::State& state) {
  coro::EventLoop loop(coro::ClockMode::RealTime);
  coro::Event ev;
  for (auto _ : state) {
    loop.complete(ev);
    ev.reset();
  }
  benchmark::DoNotOptimize(ev.completion_count());
}
BENCHMARK(BM_EventCompleteNoWaiters);

void BM_PacketEncode(benchmark::State& state) {
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(state.range(0)), 0x42);
  cpx::CpxPacket p;
  p.payload = payload;
  for (auto _ : state) benchmark::DoNotOptimize(cpx::encode_header(p, payload.size()));
}
BENCHMARK(BM_PacketEncode)->Arg(0)->Arg(1022);

void BM_PacketRoundTrip(benchmark::State& state) {
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(state.range(0)), 0x42);
  cpx::CpxPacket p;
  p.payload = payload;
  for (auto _ : state) {
    const auto wire = cpx::encode(p);
    benchmark::DoNotOptimize(cpx::decode(wire).payload.size());
  }
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PacketRoundTrip)->Arg(64)->Arg(1022);

void BM_FragmentFrame(benchmark::State& state) {
  std::vector<std::uint8_t> image(160 * 160);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cpx::fragment(cpx::NodeId::Gap8, cpx::NodeId::Host, cpx::kFunctionAppStream, image));
  }
}
BENCHMARK(BM_FragmentFrame);

// Simulated frames per wall-clock second for a three-stage chain.
void BM_PipelineRun(benchmark::State& state) {
  std::vector<pipeline::Stage> stages(3);
  const char* names[] = {"capture", "inference", "spi_tx"};
  for (std::size_t i = 0; i < 3; ++i) {
    stages[i].name = names[i];
    stages[i].resource = names[i];
    stages[i].duration_us = static_cast<Micros>(1000 * (i + 2));
    if (i > 0) stages[i].after = {names[i - 1]};
  }
  const auto mode = state.range(0) == 0 ? pipeline::ExecutionMode::Serialized : pipeline::ExecutionMode::Pipelined;
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::pipeline_run(stages, mode, 2, 1000).size());
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_PipelineRun)->Arg(0)->Arg(1);

void BM_Scenario(benchmark::State& state, const char* name) {
  const auto s = scenarios::load_scenario_file(std::string(NANOPIPE_BENCH_SCENARIOS) + "/" + name + ".json");
  for (auto _ : state) benchmark::DoNotOptimize(scenarios::run_scenario(s).metrics.closed_loop_hz);
}
BENCHMARK_CAPTURE(BM_Scenario, pulp_frontnet_48, "pulp-frontnet-48")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Scenario, streaming_72hz, "streaming-72hz")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Scenario, remote_sweep, "remote-sweep")->Unit(benchmark::kMillisecond);

}  // namespace

// The packaged benchmark_main archive carries LTO bytecode from another gcc.
BENCHMARK_MAIN();
