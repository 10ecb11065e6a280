#include "nanopipe/vnode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "nanopipe/errors.hpp"

namespace nanopipe::vnode {

// ---------------------------------------------------------------------------
// Device

Device::Device(coro::EventLoop& loop, std::string name)
    : loop_(&loop),
      name_(std::move(name)),
      ctx_(coro::Context::init(coro::register_coroutine("device_worker", &Device::worker), this)) {
  loop_->spawn(ctx_);
}

void Device::submit(Job job, coro::Event* done) {
  check(job);
  queue_.push_back(Entry{std::move(job), done});
  if (!work_.completed()) loop_->complete(work_);
}

void Device::on_start(const Job& job) {
  if (!job.subject.empty()) loop_->record(TraceKind::StageStart, job.subject, job.frame);
}

void Device::on_delivered(const Job& job, Delivery&) {
  if (!job.subject.empty()) delivery_loop().record(TraceKind::StageEnd, job.subject, job.frame);
}

void Device::deliver(Entry& entry, const Delivery& d) {
  Delivery delivery = d;
  on_delivered(entry.job, delivery);
  if (entry.job.on_delivered) entry.job.on_delivered(delivery);
  if (entry.done != nullptr) delivery_loop().complete(*entry.done);
}

void Device::worker(coro::Context& ctx) {
  auto& d = ctx.args_as<Device>();
  NP_CO_BEGIN(ctx);
  for (;;) {
    while (d.queue_.empty()) {
      d.work_.reset();
      NP_CO_WAIT(ctx, d.work_);
    }
    d.current_ = std::move(d.queue_.front());
    d.queue_.pop_front();
    d.start_ = d.loop_->now();
    d.on_start(d.current_->job);
    d.service_done_.reset();
    d.loop_->arm_timer(d.start_ + d.service_time(d.current_->job), d.service_done_);
    NP_CO_WAIT(ctx, d.service_done_);
    {
      Entry entry = std::move(*d.current_);
      d.current_.reset();
      const Micros end = d.loop_->now();
      d.busy_time_ += end - d.start_;
      ++d.jobs_completed_;
      if (entry.job.sent != nullptr) d.loop_->complete(*entry.job.sent);
      const Micros latency = d.delivery_latency(entry.job);
      const Delivery delivery{d.start_ + latency, end + latency};
      if (latency == 0) {
        d.deliver(entry, delivery);
      } else {
        d.loop_->call_at(end + latency, [&dev = d, entry = std::move(entry), delivery]() mutable {
          dev.deliver(entry, delivery);
        });
      }
    }
  }
  NP_CO_END(ctx);
}

// ---------------------------------------------------------------------------
// ComputeEngine

Micros ComputeEngine::service_time(const Job& job) {
  return job.duration + static_cast<Micros>(std::ceil(us_per_byte_ * static_cast<double>(job.bytes)));
}

void compute_async(ComputeEngine& engine, const pipeline::FrameBuffer& in, Micros duration,
                   ComputeResult* out, coro::Event& done, std::string subject) {
  if (in.state() != pipeline::BufferState::Ready && in.state() != pipeline::BufferState::InUse) {
    throw UsageError("compute on a buffer in state " + std::string(pipeline::to_string(in.state())));
  }
  Job job;
  job.subject = std::move(subject);
  job.frame = in.sequence();
  job.duration = duration;
  const std::int64_t seq = in.sequence();
  coro::EventLoop* loop = &engine.loop();
  job.on_delivered = [out, seq, loop](const Delivery&) {
    if (out != nullptr) *out = ComputeResult{seq, loop->local_now()};
  };
  engine.submit(std::move(job), &done);
}

// ---------------------------------------------------------------------------
// Links

Micros LinkConfig::serialization_time(std::size_t bytes) const {
  if (bandwidth_bps == 0) throw ConfigError("link '" + name + "' has zero bandwidth");
  const std::uint64_t bits_us = static_cast<std::uint64_t>(bytes) * 8ULL * 1'000'000ULL;
  return static_cast<Micros>((bits_us + bandwidth_bps - 1) / bandwidth_bps);
}

Micros LinkConfig::transfer_time(std::size_t bytes) const {
  return base_latency_us + serialization_time(bytes) + injected_delay_us;
}

LinkConfig LinkConfig::uart(std::string from, std::string to) {
  return LinkConfig{"uart", std::move(from), std::move(to), 1'000'000, 50, 64, 0, 0, true};
}

LinkConfig LinkConfig::spi(std::string from, std::string to) {
  return LinkConfig{"spi", std::move(from), std::move(to), 16'000'000, 20, 1026, 0, 0, true};
}

LinkConfig LinkConfig::crtp_radio(std::string from, std::string to) {
  return LinkConfig{"crtp", std::move(from), std::move(to), 250'000, 1000, 31, 0, 0, true};
}

LinkConfig LinkConfig::wifi(std::string from, std::string to) {
  return LinkConfig{"wifi", std::move(from), std::move(to), 15'000'000, 10'000, 1026, 0, 0, true};
}

Link::Link(coro::EventLoop& tx, coro::EventLoop& rx, LinkConfig config, std::uint64_t seed)
    : Device(tx, config.name.empty() ? config.edge() : config.name),
      config_(std::move(config)),
      rx_(&rx),
      rng_(seed) {
  if (config_.bandwidth_bps == 0) throw ConfigError("link '" + name() + "' has zero bandwidth");
  if (config_.mtu == 0) throw ConfigError("link '" + name() + "' has zero mtu");
}

void Link::send_async(std::size_t bytes, coro::Event* sent, coro::Event* delivered,
                      std::string subject, std::int64_t frame,
                      std::function<void(const Delivery&)> on_delivered) {
  Job job;
  job.subject = std::move(subject);
  job.frame = frame;
  job.bytes = bytes;
  job.sent = sent;
  job.on_delivered = std::move(on_delivered);
  submit(std::move(job), delivered);
}

void Link::check(const Job& job) const {
  if (!config_.segmentation && job.bytes > config_.mtu) {
    throw UsageError("transfer of " + std::to_string(job.bytes) + " B exceeds mtu of link '" +
                     name() + "' with segmentation disabled");
  }
}

Micros Link::service_time(const Job& job) {
  Micros jitter = 0;
  if (config_.jitter_mean_us > 0) {
    // 53-bit uniform in [0, 1) from the raw engine output, so the sample
    // sequence depends only on the seed.
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    jitter = static_cast<Micros>(std::llround(-static_cast<double>(config_.jitter_mean_us) *
                                              std::log1p(-u)));
  }
  return jitter + config_.serialization_time(job.bytes);
}

Micros Link::delivery_latency(const Job&) const {
  return config_.base_latency_us + config_.injected_delay_us;
}

void Link::on_start(const Job& job) {
  ++stats_.transfers;
  stats_.bytes_sent += job.bytes;
  loop().record(TraceKind::LinkTxStart, name(), job.frame);
  Device::on_start(job);
}

void Link::on_delivered(const Job& job, Delivery& d) {
  const Micros first = d.last_byte - config_.serialization_time(job.bytes);
  d.first_byte = first;
  const std::size_t segments =
      job.bytes == 0 ? 1 : (job.bytes + config_.mtu - 1) / config_.mtu;
  std::size_t cumulative = 0;
  for (std::size_t i = 0; i < segments; ++i) {
    const std::size_t seg = std::min(config_.mtu, job.bytes - cumulative);
    cumulative += seg;
    ++stats_.segments_delivered;
    if (segment_hook_) segment_hook_(i, seg, first + config_.serialization_time(cumulative));
  }
  stats_.bytes_delivered += job.bytes;
  rx_->record(TraceKind::LinkRxEnd, name(), job.frame);
  Device::on_delivered(job, d);
}

// ---------------------------------------------------------------------------
// Camera

void CameraConfig::validate() const {
  if (mode == CameraMode::Streaming && frame_period_us < kStreamingMinPeriodUs) {
    throw ConfigError("streaming period " + std::to_string(frame_period_us) +
                      " us exceeds the 150 frame/s ceiling");
  }
  if (setup_us < 0 || readout_us < 0 || frame_period_us <= 0) {
    throw ConfigError("camera timings must be non-negative with a positive period");
  }
}

Camera::Camera(coro::EventLoop& loop, CameraConfig config, std::string name)
    : loop_(&loop), config_(config), name_(std::move(name)) {
  config_.validate();
}

void Camera::capture_async(pipeline::BufferPool& pool, pipeline::FrameBuffer& buf,
                           coro::Event& done) {
  if (config_.mode != CameraMode::Trigger) throw UsageError("capture requested in streaming mode");
  if (buf.state() == pipeline::BufferState::Free) {
    pool.begin_fill(buf);
  } else if (buf.state() != pipeline::BufferState::Filling) {
    throw UsageError("capture into a buffer in state " + std::string(pipeline::to_string(buf.state())));
  }
  Micros start = std::max(loop_->now(), busy_until_);
  if (last_trigger_) start = std::max(start, *last_trigger_ + config_.min_trigger_interval_us);
  last_trigger_ = start;
  const Micros readout = config_.frame_bytes() == 0 ? 0 : config_.readout_us;
  const Micros end = start + config_.setup_us + readout;
  busy_until_ = end;
  const std::int64_t seq = next_sequence_++;
  loop_->call_at(start, [this, seq] { loop_->record(TraceKind::StageStart, name_, seq); });
  loop_->call_at(end, [this, &pool, &buf, &done, seq] {
    buf.set_sequence(seq);
    buf.mark_filled();
    pool.publish(buf);
    loop_->record(TraceKind::StageEnd, name_, seq);
    loop_->complete(done);
  });
}

void Camera::stream(pipeline::BufferPool& pool, std::uint64_t frames, Sink sink, Micros start) {
  if (config_.mode != CameraMode::Streaming) throw UsageError("stream requested in trigger mode");
  if (stream_task_ && stream_task_->ctx.state() != coro::State::Ended) {
    throw UsageError("camera is already streaming");
  }
  pool_ = &pool;
  sink_ = std::move(sink);
  frames_ = frames;
  tick_ = 0;
  start_ = start;
  last_delivery_.reset();
  stats_ = {};
  stream_done_ = false;
  stream_task_.emplace(coro::register_coroutine("camera_stream", &Camera::stream_body), this);
  loop_->spawn(stream_task_->ctx);
}

void Camera::stream_body(coro::Context& ctx) {
  auto& cam = ctx.args_as<Camera>();
  NP_CO_BEGIN(ctx);
  for (; cam.tick_ < cam.frames_; ++cam.tick_) {
    cam.tick_event_.reset();
    cam.loop_->arm_timer(cam.start_ + static_cast<Micros>(cam.tick_) * cam.config_.frame_period_us,
                         cam.tick_event_);
    NP_CO_WAIT(ctx, cam.tick_event_);
    {
      const auto seq = static_cast<std::int64_t>(cam.tick_);
      pipeline::FrameBuffer* buf = cam.pool_->try_acquire();
      if (buf == nullptr) {
        ++cam.stats_.dropped;
        cam.loop_->record(TraceKind::Drop, cam.name_, seq);
        continue;
      }
      cam.loop_->record(TraceKind::StageStart, cam.name_, seq);
      cam.loop_->call_at(cam.loop_->now() + cam.config_.readout_us, [&cam, buf, seq] {
        buf->set_sequence(seq);
        buf->mark_filled();
        cam.pool_->publish(*buf);
        cam.loop_->record(TraceKind::StageEnd, cam.name_, seq);
        const Micros now = cam.loop_->now();
        if (cam.last_delivery_) {
          const Micros deviation = std::abs(now - *cam.last_delivery_ - cam.config_.frame_period_us);
          cam.stats_.jitter_us = std::max(cam.stats_.jitter_us, deviation);
        }
        cam.last_delivery_ = now;
        ++cam.stats_.delivered;
        if (cam.sink_) cam.sink_(*buf);
      });
    }
  }
  cam.stream_done_ = true;
  NP_CO_END(ctx);
}

// ---------------------------------------------------------------------------
// NodeGraph

NodeGraph::NodeGraph(std::vector<NodeSpec> nodes, std::vector<LinkConfig> links, std::uint64_t seed) {
  for (auto& n : nodes) {
    if (loops_.count(n.name) != 0) throw ConfigError("duplicate node '" + n.name + "'");
    loops_.emplace(n.name, std::make_unique<coro::EventLoop>(clock_, n.name, n.clock_offset_us));
    order_.push_back(n.name);
  }
  std::uint64_t link_seed = seed;
  for (auto& cfg : links) {
    if (!has_node(cfg.from) || !has_node(cfg.to)) {
      throw ConfigError("link '" + cfg.edge() + "' references an unknown node");
    }
    const std::string edge = cfg.edge();
    if (links_.count(edge) != 0) throw ConfigError("duplicate link '" + edge + "'");
    auto& tx = *loops_.at(cfg.from);
    auto& rx = *loops_.at(cfg.to);
    if (cfg.name.empty()) cfg.name = edge;
    // Distinct, seed-derived streams per link.
    links_.emplace(edge, std::make_unique<Link>(tx, rx, std::move(cfg), link_seed++ * 0x9E3779B97F4A7C15ULL));
  }
}

std::vector<NodeSpec> NodeGraph::default_nodes() {
  return {{"stm32", 0}, {"nrf51", 0}, {"gap8", 0}, {"esp32", 0}, {"host", 0}};
}

std::vector<LinkConfig> NodeGraph::default_links() {
  auto named = [](LinkConfig c) {
    c.name = c.edge();
    return c;
  };
  return {
      named(LinkConfig::uart("stm32", "nrf51")),      named(LinkConfig::uart("nrf51", "stm32")),
      named(LinkConfig::uart("stm32", "gap8")),       named(LinkConfig::uart("gap8", "stm32")),
      named(LinkConfig::spi("gap8", "esp32")),        named(LinkConfig::spi("esp32", "gap8")),
      named(LinkConfig::crtp_radio("nrf51", "host")), named(LinkConfig::crtp_radio("host", "nrf51")),
      named(LinkConfig::wifi("esp32", "host")),       named(LinkConfig::wifi("host", "esp32")),
  };
}

NodeGraph NodeGraph::default_topology(std::uint64_t seed) {
  return NodeGraph(default_nodes(), default_links(), seed);
}

coro::EventLoop& NodeGraph::loop(const std::string& node) {
  auto it = loops_.find(node);
  if (it == loops_.end()) throw ConfigError("unknown node '" + node + "'");
  return *it->second;
}

bool NodeGraph::has_link(const std::string& from, const std::string& to) const {
  return links_.count(from + "->" + to) != 0;
}

Link& NodeGraph::link(const std::string& from, const std::string& to) {
  auto it = links_.find(from + "->" + to);
  if (it == links_.end()) throw ConfigError("no link " + from + "->" + to);
  return *it->second;
}

std::vector<std::string> NodeGraph::node_names() const { return order_; }

std::vector<const Link*> NodeGraph::links() const {
  std::vector<const Link*> out;
  for (const auto& [_, l] : links_) out.push_back(l.get());
  return out;
}

ComputeEngine& NodeGraph::engine(const std::string& node, const std::string& resource) {
  const std::string key = node + "/" + resource;
  auto it = engines_.find(key);
  if (it != engines_.end()) return *it->second;
  auto& eng = engines_.emplace(key, std::make_unique<ComputeEngine>(loop(node), resource)).first->second;
  return *eng;
}

void NodeGraph::set_trace(Trace* trace, bool coroutine_events) {
  for (auto& [_, l] : loops_) l->set_trace(trace, coroutine_events);
}

}  // namespace nanopipe::vnode
