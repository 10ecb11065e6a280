#pragma once

// Stage scheduling over a buffer pool: Serialized runs every stage of a frame
// back-to-back on one task, Pipelined runs one task per stage so stages on
// distinct resources overlap across frames.

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nanopipe/buffer.hpp"
#include "nanopipe/coro.hpp"
#include "nanopipe/trace.hpp"
#include "nanopipe/vnode.hpp"

namespace nanopipe::pipeline {

enum class ExecutionMode : std::uint8_t { Serialized, Pipelined };

std::string_view to_string(ExecutionMode mode);
/// "serialized" | "pipelined"; throws ConfigError otherwise.
ExecutionMode parse_mode(std::string_view text);

struct Stage {
  std::string name;
  std::string resource;  // compute engine on `node`; unused for link stages
  std::string node = "gap8";
  std::string link_to;  // when set, the stage is a transfer over node->link_to
  Micros duration_us = 0;
  double us_per_byte = 0.0;
  std::size_t bytes = 0;
  std::vector<std::string> after;  // upstream stages; the producer has none
  bool holds_buffer = true;        // frame buffer stays claimed until this stage is sent

  bool is_link() const { return !link_to.empty(); }
  /// Compute service time: duration + ceil(us_per_byte * bytes).
  Micros compute_time() const;
};

struct PipelineConfig {
  std::vector<Stage> stages;
  ExecutionMode mode = ExecutionMode::Pipelined;
  std::size_t pool_size = 2;
  std::size_t buffer_bytes = 0;
  std::uint64_t frames = 100;
  double trigger_hz = 0.0;  // 0 = free-running producer
  Micros start_us = 0;
  // Streaming source: a tick that finds no Free buffer, or that passed while
  // the producer was busy, is dropped instead of delaying the schedule.
  bool drop_when_busy = false;
  Micros min_interval_us = 0;  // free-running producers: minimum start spacing
};

/// Stage indices in dependency order, producer first. Throws ConfigError on
/// unknown or duplicate names, cycles, or anything but exactly one producer.
std::vector<std::size_t> topological_order(const std::vector<Stage>& stages);

/// Index of the last stage in dependency order.
std::size_t sink_stage(const std::vector<Stage>& stages);

/// One pipeline instance bound to a node graph.
class Pipeline {
 public:
  Pipeline(vnode::NodeGraph& graph, PipelineConfig config);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Spawns the stage tasks. Drive the graph's clock afterwards.
  void start();
  bool finished() const;

  const PipelineConfig& config() const { return config_; }
  BufferPool& pool() { return *pool_; }
  const std::vector<std::size_t>& order() const { return order_; }
  /// Scheduled start of producer tick `tick` (global time).
  Micros trigger_time(std::uint64_t tick) const;
  std::uint64_t dropped() const { return dropped_; }

 private:
  struct StageTask;
  static void pipelined_body(coro::Context& ctx);
  static void serialized_body(coro::Context& ctx);

  coro::Event& done(std::size_t stage, std::uint64_t frame) {
    return done_[static_cast<std::size_t>(frame) * config_.stages.size() + stage];
  }
  void submit(std::size_t stage, std::uint64_t frame, coro::Event* sent);
  void after_sent(std::size_t stage, std::uint64_t frame);
  Micros next_tick(StageTask& t);
  bool try_take(StageTask& t);
  void drop(std::uint64_t tick);

  vnode::NodeGraph* graph_;
  PipelineConfig config_;
  std::vector<std::size_t> order_;
  std::size_t producer_ = 0;
  std::vector<std::vector<std::size_t>> preds_;
  std::uint32_t consumer_holders_ = 0;
  std::vector<vnode::Device*> devices_;
  std::unique_ptr<BufferPool> pool_;
  std::deque<coro::Event> done_;
  std::vector<FrameBuffer*> frame_buffers_;
  std::deque<StageTask> tasks_;
  std::optional<Micros> last_start_;
  std::uint64_t dropped_ = 0;
  bool started_ = false;
};

/// Runs `stages` on standalone compute engines (one per resource name, on the
/// stages' nodes, zero clock offsets) and returns the full trace.
Trace pipeline_run(const std::vector<Stage>& stages, ExecutionMode mode, std::size_t pool_size,
                   std::uint64_t frames, double trigger_hz = 0.0);

/// (t_n - t_1) / (n - 1) over StageEnd records of `stage` with frame >= from_frame.
/// Returns nullopt with fewer than two samples.
std::optional<double> steady_state_period_us(const Trace& trace, std::string_view stage,
                                             std::int64_t from_frame = 10);

}  // namespace nanopipe::pipeline
