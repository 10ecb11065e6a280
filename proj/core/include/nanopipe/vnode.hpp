#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nanopipe/buffer.hpp"
#include "nanopipe/coro.hpp"

namespace nanopipe::vnode {

/// Global virtual times at which the first and last byte reached the peer.
struct Delivery {
  Micros first_byte = 0;
  Micros last_byte = 0;
};

struct Job {
  std::string subject;  // stage name; empty suppresses Stage* trace records
  std::int64_t frame = -1;
  std::size_t bytes = 0;
  Micros duration = 0;
  coro::Event* sent = nullptr;  // completes when the resource is released
  std::function<void(const Delivery&)> on_delivered;
};

/// Single-server resource with a FIFO job queue, driven by a worker
/// coroutine on its node's loop. Overlapping submissions queue up.
class Device {
 public:
  Device(coro::EventLoop& loop, std::string name);
  virtual ~Device() = default;
  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;

  /// Queues `job`; `done` (may be null) completes when the output is
  /// available downstream.
  void submit(Job job, coro::Event* done);

  const std::string& name() const { return name_; }
  coro::EventLoop& loop() const { return *loop_; }
  std::size_t queued() const { return queue_.size(); }
  bool busy() const { return current_.has_value(); }
  std::uint64_t jobs_completed() const { return jobs_completed_; }
  Micros busy_time() const { return busy_time_; }

 protected:
  /// Rejects a job at submission time.
  virtual void check(const Job&) const {}
  virtual Micros service_time(const Job& job) = 0;
  virtual Micros delivery_latency(const Job&) const { return 0; }
  virtual coro::EventLoop& delivery_loop() const { return *loop_; }
  virtual void on_start(const Job& job);
  virtual void on_delivered(const Job& job, Delivery& d);

 private:
  struct Entry {
    Job job;
    coro::Event* done = nullptr;
  };
  static void worker(coro::Context& ctx);
  void deliver(Entry& entry, const Delivery& d);

  coro::EventLoop* loop_;
  std::string name_;
  std::deque<Entry> queue_;
  std::optional<Entry> current_;
  Micros start_ = 0;
  Micros busy_time_ = 0;
  std::uint64_t jobs_completed_ = 0;
  coro::Event work_{"work"};
  coro::Event service_done_{"service"};
  coro::Context ctx_;
};

/// Timed compute engine (cluster, host GPU, DMA, ...). Service time is
/// the job's duration plus an optional per-byte cost.
class ComputeEngine : public Device {
 public:
  ComputeEngine(coro::EventLoop& loop, std::string name, double us_per_byte = 0.0)
      : Device(loop, std::move(name)), us_per_byte_(us_per_byte) {}

 protected:
  Micros service_time(const Job& job) override;

 private:
  double us_per_byte_;
};

struct ComputeResult {
  std::int64_t sequence = -1;
  Micros completed_at = 0;  // engine node's local clock
};

/// Runs `duration` of work on `engine` against a Ready/InUse buffer; `out`
/// is filled just before `done` completes.
void compute_async(ComputeEngine& engine, const pipeline::FrameBuffer& in, Micros duration,
                   ComputeResult* out, coro::Event& done, std::string subject = "inference");

struct LinkConfig {
  std::string name;
  std::string from;
  std::string to;
  std::uint64_t bandwidth_bps = 1'000'000;
  Micros base_latency_us = 0;
  std::size_t mtu = 1026;
  Micros injected_delay_us = 0;
  Micros jitter_mean_us = 0;  // exponential extra service time, seeded
  bool segmentation = true;

  /// ceil(bytes * 8 / bandwidth), in microseconds.
  Micros serialization_time(std::size_t bytes) const;
  /// base latency + serialization + injected delay.
  Micros transfer_time(std::size_t bytes) const;
  std::string edge() const { return from + "->" + to; }

  static LinkConfig uart(std::string from, std::string to);
  static LinkConfig spi(std::string from, std::string to);
  static LinkConfig crtp_radio(std::string from, std::string to);
  static LinkConfig wifi(std::string from, std::string to);
};

struct LinkStats {
  std::uint64_t transfers = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_delivered = 0;
  std::uint64_t segments_delivered = 0;
};

/// Directed point-to-point link. The sender is released at last-byte-out;
/// the peer sees the transfer base latency plus injected delay later.
class Link : public Device {
 public:
  Link(coro::EventLoop& tx, coro::EventLoop& rx, LinkConfig config, std::uint64_t seed = 1);

  const LinkConfig& config() const { return config_; }
  const LinkStats& stats() const { return stats_; }
  coro::EventLoop& rx_loop() const { return *rx_; }

  /// Per-segment delivery hook: (index, segment bytes, global arrival time).
  using SegmentHook = std::function<void(std::size_t, std::size_t, Micros)>;
  void set_segment_hook(SegmentHook hook) { segment_hook_ = std::move(hook); }

  /// link_send: queues `bytes` for transmission. Throws UsageError if the
  /// transfer exceeds the MTU with segmentation disabled.
  void send_async(std::size_t bytes, coro::Event* sent, coro::Event* delivered,
                  std::string subject = {}, std::int64_t frame = -1,
                  std::function<void(const Delivery&)> on_delivered = {});

 protected:
  void check(const Job& job) const override;
  Micros service_time(const Job& job) override;
  Micros delivery_latency(const Job& job) const override;
  coro::EventLoop& delivery_loop() const override { return *rx_; }
  void on_start(const Job& job) override;
  void on_delivered(const Job& job, Delivery& d) override;

 private:
  LinkConfig config_;
  coro::EventLoop* rx_;
  std::mt19937_64 rng_;
  LinkStats stats_;
  SegmentHook segment_hook_;
};

enum class CameraMode : std::uint8_t { Trigger, Streaming };

inline constexpr Micros kStreamingMinPeriodUs = 6667;       // 150 frame/s
inline constexpr Micros kTriggerMinIntervalUs = 33334;      // ~30 frame/s

struct CameraConfig {
  CameraMode mode = CameraMode::Trigger;
  Micros frame_period_us = 33334;
  std::uint32_t width = 160;
  std::uint32_t height = 96;
  std::uint32_t bytes_per_pixel = 1;
  Micros setup_us = 0;
  Micros readout_us = 8000;
  Micros min_trigger_interval_us = kTriggerMinIntervalUs;

  std::size_t frame_bytes() const { return std::size_t{width} * height * bytes_per_pixel; }
  /// Throws ConfigError on a streaming period under the 150 frame/s ceiling.
  void validate() const;
};

struct StreamStats {
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  Micros jitter_us = 0;  // max |delivery interval - frame period|
};

/// Camera on the CPI interface of its node.
class Camera {
 public:
  Camera(coro::EventLoop& loop, CameraConfig config, std::string name = "capture");
  Camera(const Camera&) = delete;
  Camera& operator=(const Camera&) = delete;

  const CameraConfig& config() const { return config_; }

  /// Trigger mode: fills `buf` (Free or Filling) after setup + readout,
  /// publishes it with the next sequence number and completes `done`.
  /// Consecutive triggers start at least min_trigger_interval apart.
  void capture_async(pipeline::BufferPool& pool, pipeline::FrameBuffer& buf, coro::Event& done);

  using Sink = std::function<void(pipeline::FrameBuffer&)>;
  /// Streaming mode: produces `frames` frames every frame_period starting at
  /// `start`. A frame with no Free buffer at its start is dropped; otherwise
  /// the Ready buffer is handed to `sink` once read out.
  void stream(pipeline::BufferPool& pool, std::uint64_t frames, Sink sink, Micros start = 0);
  const StreamStats& stream_stats() const { return stats_; }
  bool streaming_done() const { return stream_done_; }

 private:
  static void stream_body(coro::Context& ctx);

  coro::EventLoop* loop_;
  CameraConfig config_;
  std::string name_;
  std::int64_t next_sequence_ = 0;
  Micros busy_until_ = 0;
  std::optional<Micros> last_trigger_;

  pipeline::BufferPool* pool_ = nullptr;
  Sink sink_;
  std::uint64_t frames_ = 0;
  std::uint64_t tick_ = 0;
  Micros start_ = 0;
  std::optional<Micros> last_delivery_;
  StreamStats stats_;
  bool stream_done_ = false;
  coro::Event tick_event_{"camera_tick"};
  std::optional<coro::Task> stream_task_;
};

struct NodeSpec {
  std::string name;
  Micros clock_offset_us = 0;
};

/// Simulated nodes, each with its own loop and clock offset, multiplexed on
/// one virtual clock, plus the directed links between them.
class NodeGraph {
 public:
  NodeGraph(std::vector<NodeSpec> nodes, std::vector<LinkConfig> links, std::uint64_t seed = 1);
  /// stm32, nrf51, gap8, esp32, host with UART, SPI, CRTP radio and Wi-Fi links.
  static NodeGraph default_topology(std::uint64_t seed = 1);
  static std::vector<NodeSpec> default_nodes();
  static std::vector<LinkConfig> default_links();

  NodeGraph(const NodeGraph&) = delete;
  NodeGraph& operator=(const NodeGraph&) = delete;

  coro::VirtualClock& clock() { return clock_; }
  bool has_node(const std::string& name) const { return loops_.count(name) != 0; }
  coro::EventLoop& loop(const std::string& node);
  bool has_link(const std::string& from, const std::string& to) const;
  /// Throws ConfigError if the edge does not exist.
  Link& link(const std::string& from, const std::string& to);
  std::vector<std::string> node_names() const;
  std::vector<const Link*> links() const;

  /// Finds (or creates) a compute engine named `resource` on `node`.
  ComputeEngine& engine(const std::string& node, const std::string& resource);

  void set_trace(Trace* trace, bool coroutine_events = false);
  void run() { clock_.run(); }
  void run_until(Micros t) { clock_.run_until(t); }

 private:
  coro::VirtualClock clock_;
  std::map<std::string, std::unique_ptr<coro::EventLoop>> loops_;
  std::vector<std::string> order_;
  std::map<std::string, std::unique_ptr<Link>> links_;
  std::map<std::string, std::unique_ptr<ComputeEngine>> engines_;
};

}  // namespace nanopipe::vnode
