#include <doctest.h>

#include <vector>

#include "nanopipe/errors.hpp"
#include "nanopipe/oracle.hpp"
#include "recurrence.hpp"

using namespace nanopipe;
using namespace nanopipe::pipeline;

namespace {

std::vector<OracleStage> chain(const std::vector<Micros>& d) {
  std::vector<OracleStage> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    OracleStage s;
    s.resource = "r" + std::to_string(i);
    s.occupancy = d[i];
    if (i > 0) s.after = {i - 1};
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("serialized period is the sum of stage times") {
  const auto r = analytic_oracle(chain({3000, 5000, 2000}), ExecutionMode::Serialized, 2);
  REQUIRE(r.period_us);
  CHECK(*r.period_us == 10'000);
  CHECK(*r.rate_hz() == doctest::Approx(100));
}

TEST_CASE("pipelined period is the bottleneck when buffers suffice") {
  CHECK(*analytic_oracle(chain({3000, 5000, 2000}), ExecutionMode::Pipelined, 2).period_us == 5000);
  // One buffer: the frame holds it for the whole chain.
  CHECK(*analytic_oracle(chain({3000, 5000, 2000}), ExecutionMode::Pipelined, 1).period_us == 10'000);
}

TEST_CASE("the trigger rate floors the period") {
  CHECK(*analytic_oracle(chain({3000, 5000}), ExecutionMode::Pipelined, 2, 50).period_us == 20'000);
  CHECK(*analytic_oracle(chain({3000, 5000}), ExecutionMode::Serialized, 2, 200).period_us == 8000);
}

TEST_CASE("oracle agrees with the reference recurrence on chains") {
  const std::vector<std::vector<Micros>> cases{{1000, 8000}, {8000, 1000, 5000}, {2000, 3000, 5000}, {5000, 5000}};
  for (const auto& d : cases) {
    for (std::size_t pool : {1, 2, 3}) {
      for (bool pipelined : {false, true}) {
        const auto sched = nanopipe_test::chain_schedule(d, pipelined, pool, 400);
        const auto r = analytic_oracle(chain(d), pipelined ? ExecutionMode::Pipelined : ExecutionMode::Serialized, pool);
        CHECK(*r.period_us == doctest::Approx(nanopipe_test::period_from(sched, 200)).epsilon(1e-3));
      }
    }
  }
}

TEST_CASE("no closed form for shared resources or jitter") {
  auto s = chain({1000, 2000});
  s[1].resource = s[0].resource;
  auto r = analytic_oracle(s, ExecutionMode::Pipelined, 2);
  CHECK_FALSE(r.period_us);
  CHECK_FALSE(r.reason.empty());

  auto j = chain({1000, 2000});
  j[1].jitter = true;
  CHECK_FALSE(analytic_oracle(j, ExecutionMode::Pipelined, 2).period_us);
  CHECK_FALSE(analytic_oracle({}, ExecutionMode::Pipelined, 2).period_us);
  CHECK_THROWS_AS(analytic_oracle(chain({1}), ExecutionMode::Pipelined, 0), ConfigError);
}

TEST_CASE("link latency counts towards the buffer hold span") {
  auto s = chain({1000, 2000, 500});
  s[1].latency = 4000;  // a transfer whose tail reaches the peer later
  CHECK(*analytic_oracle(s, ExecutionMode::Pipelined, 1).period_us == 7500);
  CHECK(*analytic_oracle(s, ExecutionMode::Serialized, 1).period_us == 7500);
}

TEST_CASE("stages that do not hold the buffer leave the hold span") {
  auto s = chain({1000, 2000, 6000});
  s[2].holds_buffer = false;
  CHECK(*analytic_oracle(s, ExecutionMode::Pipelined, 1).period_us == 6000);
}

TEST_CASE("oracle stages from a stage list") {
  Stage a;
  a.name = "a";
  a.resource = "cpi";
  a.duration_us = 10;
  Stage b;
  b.name = "b";
  b.resource = "cluster";
  b.duration_us = 20;
  b.after = {"a"};
  const auto o = oracle_stages({a, b});
  REQUIRE(o.size() == 2);
  CHECK(o[0].resource == "gap8/cpi");
  CHECK(o[1].after == std::vector<std::size_t>{0});
  CHECK(o[1].occupancy == 20);
  b.link_to = "stm32";
  CHECK_THROWS_AS(oracle_stages({a, b}), ConfigError);
}
