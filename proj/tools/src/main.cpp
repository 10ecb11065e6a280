// nanopipe command-line tool: run scenarios, check them against the oracle,
// verify recorded outputs and run the microbenchmarks.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "nanopipe/bench.hpp"
#include "nanopipe/errors.hpp"
#include "nanopipe/scenario.hpp"

namespace fs = std::filesystem;
using namespace nanopipe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitMismatch = 2;
constexpr int kExitInternal = 3;

constexpr double kOracleTolerance = 0.02;

struct RunOptions {
  std::string scenario;
  std::string mode;
  std::string router;
  std::optional<std::uint64_t> seed;
  std::optional<double> rate_hz;
  bool check = false;
  std::string out = "out";
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

int cmd_run(const RunOptions& o) {
  auto s = scenarios::load_scenario(o.scenario);
  if (!o.mode.empty()) s.mode = pipeline::parse_mode(o.mode);
  if (!o.router.empty()) s.router.mode = cpx::parse_router_mode(o.router);
  if (o.seed) s.seed = *o.seed;

  const auto r = scenarios::run_scenario(s, o.rate_hz);

  fs::create_directories(o.out);
  const fs::path trace_path = fs::path(o.out) / (s.name + ".trace.csv");
  const fs::path metrics_path = fs::path(o.out) / (s.name + ".metrics.json");
  write_file(trace_path, r.trace.to_csv());
  write_file(metrics_path, scenarios::metrics_to_json(r.metrics, r.inputs));

  const auto& m = r.metrics;
  std::cout << s.name << " [" << pipeline::to_string(s.mode);
  if (s.kind == scenarios::ScenarioKind::Streaming) std::cout << ", " << cpx::to_string(s.router.mode);
  std::cout << "] closed_loop_hz=" << m.closed_loop_hz << " inference_hz=" << m.inference_hz
            << " drop_pct=" << m.drop_pct << " e2e_mean_ms=" << m.e2e_mean_ms
            << " e2e_p95_ms=" << m.e2e_p95_ms;
  if (m.rtt_mean_ms) std::cout << " rtt_mean_ms=" << *m.rtt_mean_ms;
  std::cout << " frames_dropped=" << m.frames_dropped << "\n";
  std::cout << "wrote " << trace_path.string() << " and " << metrics_path.string() << "\n";

  if (!o.check) return kExitOk;
  if (!r.oracle.period_us) {
    std::cerr << "warning: oracle unavailable (" << r.oracle.reason << "); check skipped\n";
    return kExitOk;
  }
  if (!r.period_us) {
    std::cerr << "error: no steady-state period measured at '" << s.metrics.sink << "'\n";
    return kExitMismatch;
  }
  const double rel = std::abs(*r.period_us - *r.oracle.period_us) / *r.oracle.period_us;
  std::cout << "oracle period_us=" << *r.oracle.period_us << " measured period_us=" << *r.period_us
            << " deviation=" << rel * 100.0 << "%\n";
  if (rel > kOracleTolerance) {
    std::cerr << "error: simulation diverges from the oracle by more than 2%\n";
    return kExitMismatch;
  }
  return kExitOk;
}

int cmd_verify(const std::string& trace_file, const std::string& metrics_file) {
  std::istringstream csv(read_file(trace_file));
  const Trace trace = Trace::from_csv(csv);
  const auto [recorded, inputs] = scenarios::metrics_from_json(read_file(metrics_file));
  const auto recomputed = scenarios::compute_metrics(trace, inputs);
  const std::string again = scenarios::metrics_to_json(recomputed, inputs);
  if (recomputed == recorded && again == read_file(metrics_file)) {
    std::cout << "metrics match the trace\n";
    return kExitOk;
  }
  std::cerr << "metrics differ from the trace; recomputed:\n" << again;
  return kExitMismatch;
}

int cmd_list() {
  for (const auto& name : scenarios::list_scenarios()) {
    std::string desc;
    try {
      desc = scenarios::load_scenario(name).description;
    } catch (const ConfigError& e) {
      desc = std::string("(invalid: ") + e.what() + ")";
    }
    std::cout << name << "\t" << desc << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator for pipelined perception loops on multi-MCU nano-drones"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario and write its trace and metrics");
  run_cmd->add_option("--scenario", run.scenario, "Fixture name or path to a scenario file")->required();
  run_cmd->add_option("--mode", run.mode, "Execution mode override")
      ->check(CLI::IsMember({"serialized", "pipelined"}));
  run_cmd->add_option("--router", run.router, "Router mode override")
      ->check(CLI::IsMember({"baseline", "zerocopy"}));
  run_cmd->add_option("--seed", run.seed, "Seed for link jitter");
  run_cmd->add_option("--rate", run.rate_hz, "Camera rate override in Hz");
  run_cmd->add_flag("--check", run.check, "Compare the steady-state period with the analytic oracle");
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();

  std::string kind;
  std::uint64_t iterations = 1'000'000;
  auto* bench_cmd = app.add_subcommand("bench", "Run a microbenchmark");
  bench_cmd->add_option("--kind", kind, "Benchmark")
      ->required()
      ->check(CLI::IsMember({"ctx_switch", "event_complete", "packet_encode"}));
  bench_cmd->add_option("--iterations", iterations, "Operations to time")->capture_default_str();

  std::string trace_file, metrics_file;
  auto* verify_cmd = app.add_subcommand("verify", "Recompute metrics from a trace and compare");
  verify_cmd->add_option("--trace", trace_file)->required();
  verify_cmd->add_option("--metrics", metrics_file)->required();

  auto* list_cmd = app.add_subcommand("list-scenarios", "List the bundled scenario fixtures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*bench_cmd) {
      std::cout << bench::format_report(bench::microbench(bench::parse_bench_kind(kind), iterations));
      return kExitOk;
    }
    if (*verify_cmd) return cmd_verify(trace_file, metrics_file);
    if (*list_cmd) return cmd_list();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DecodeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
