#include "nanopipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "nanopipe/errors.hpp"

namespace nanopipe::pipeline {

std::string_view to_string(ExecutionMode mode) {
  return mode == ExecutionMode::Serialized ? "serialized" : "pipelined";
}

ExecutionMode parse_mode(std::string_view text) {
  if (text == "serialized") return ExecutionMode::Serialized;
  if (text == "pipelined") return ExecutionMode::Pipelined;
  throw ConfigError("unknown execution mode '" + std::string(text) + "'");
}

Micros Stage::compute_time() const {
  return duration_us + static_cast<Micros>(std::ceil(us_per_byte * static_cast<double>(bytes)));
}

std::vector<std::size_t> topological_order(const std::vector<Stage>& stages) {
  if (stages.empty()) throw ConfigError("pipeline has no stages");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].name.empty()) throw ConfigError("stage without a name");
    if (!index.emplace(stages[i].name, i).second) {
      throw ConfigError("duplicate stage '" + stages[i].name + "'");
    }
  }
  std::vector<std::size_t> indegree(stages.size(), 0);
  std::vector<std::vector<std::size_t>> succ(stages.size());
  std::size_t producers = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].after.empty()) ++producers;
    std::set<std::string> seen;
    for (const auto& up : stages[i].after) {
      auto it = index.find(up);
      if (it == index.end()) {
        throw ConfigError("stage '" + stages[i].name + "' depends on unknown stage '" + up + "'");
      }
      if (!seen.insert(up).second) continue;
      succ[it->second].push_back(i);
      ++indegree[i];
    }
  }
  if (producers != 1) {
    throw ConfigError("pipeline needs exactly one producer stage, found " + std::to_string(producers));
  }
  // Kahn's algorithm, smallest declaration index first for a stable order.
  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (indegree[i] == 0) ready.insert(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t s = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(s);
    for (std::size_t n : succ[s]) {
      if (--indegree[n] == 0) ready.insert(n);
    }
  }
  if (order.size() != stages.size()) throw ConfigError("stage graph has a cycle");
  return order;
}

std::size_t sink_stage(const std::vector<Stage>& stages) { return topological_order(stages).back(); }

// ---------------------------------------------------------------------------

struct Pipeline::StageTask {
  StageTask(Pipeline& p, std::size_t s, coro::Body body)
      : pipeline(&p), stage(s), task(coro::register_coroutine(
                                          body == &Pipeline::serialized_body ? "pipeline_serialized"
                                                                             : "pipeline_stage",
                                          body),
                                      this) {}

  Pipeline* pipeline;
  std::size_t stage;
  std::uint64_t frame = 0;
  std::uint64_t ticks = 0;
  Micros tick_at = 0;
  std::size_t step = 0;
  coro::Event tick{"trigger"};
  coro::Event acquired{"acquire"};
  coro::Event sent{"sent"};
  coro::Task task;
};

Pipeline::Pipeline(vnode::NodeGraph& graph, PipelineConfig config)
    : graph_(&graph), config_(std::move(config)) {
  order_ = topological_order(config_.stages);
  producer_ = order_.front();
  if (config_.pool_size == 0) throw ConfigError("buffer pool needs at least one buffer");
  if (config_.trigger_hz < 0) throw ConfigError("negative trigger rate");
  if (config_.drop_when_busy && config_.trigger_hz <= 0) {
    throw ConfigError("a dropping source needs a frame rate");
  }

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < config_.stages.size(); ++i) index[config_.stages[i].name] = i;
  preds_.resize(config_.stages.size());
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    for (const auto& up : config_.stages[i].after) {
      const std::size_t u = index.at(up);
      if (std::find(preds_[i].begin(), preds_[i].end(), u) == preds_[i].end()) preds_[i].push_back(u);
    }
    if (i != producer_ && config_.stages[i].holds_buffer) ++consumer_holders_;
  }

  for (const auto& st : config_.stages) {
    if (st.is_link()) {
      devices_.push_back(&graph_->link(st.node, st.link_to));
    } else {
      if (st.resource.empty()) throw ConfigError("stage '" + st.name + "' has no resource");
      devices_.push_back(&graph_->engine(st.node, st.resource));
    }
  }
  if (config_.stages[producer_].is_link()) throw ConfigError("the producer stage cannot be a link");
  pool_ = std::make_unique<BufferPool>(graph_->loop(config_.stages[producer_].node),
                                       config_.pool_size, config_.buffer_bytes);
}

Pipeline::~Pipeline() = default;

Micros Pipeline::trigger_time(std::uint64_t tick) const {
  if (config_.trigger_hz <= 0) return config_.start_us;
  return config_.start_us +
         static_cast<Micros>(std::floor(static_cast<double>(tick) * 1e6 / config_.trigger_hz));
}

Micros Pipeline::next_tick(StageTask& t) {
  coro::EventLoop& loop = *t.task.ctx.loop();
  if (config_.trigger_hz <= 0) {
    Micros at = std::max(loop.now(), config_.start_us);
    if (last_start_) at = std::max(at, *last_start_ + config_.min_interval_us);
    return at;
  }
  if (config_.drop_when_busy) {
    while (trigger_time(t.ticks) < loop.now()) drop(t.ticks++);
  }
  return trigger_time(t.ticks);
}

bool Pipeline::try_take(StageTask& t) {
  FrameBuffer* buf = pool_->try_acquire();
  if (buf != nullptr) {
    frame_buffers_[static_cast<std::size_t>(t.frame)] = buf;
    return true;
  }
  drop(t.ticks++);
  t.tick_at = next_tick(t);
  return false;
}

void Pipeline::drop(std::uint64_t tick) {
  ++dropped_;
  graph_->loop(config_.stages[producer_].node)
      .record(TraceKind::Drop, config_.stages[producer_].name, static_cast<std::int64_t>(tick));
}

void Pipeline::start() {
  if (started_) throw UsageError("pipeline already started");
  started_ = true;
  const std::size_t n = config_.stages.size() * static_cast<std::size_t>(config_.frames);
  for (std::size_t i = 0; i < n; ++i) done_.emplace_back("stage_done");
  frame_buffers_.assign(static_cast<std::size_t>(config_.frames), nullptr);
  if (config_.frames == 0) return;

  if (config_.mode == ExecutionMode::Serialized) {
    auto& t = tasks_.emplace_back(*this, producer_, &Pipeline::serialized_body);
    graph_->loop(config_.stages[producer_].node).spawn(t.task.ctx);
    return;
  }
  for (std::size_t s : order_) {
    auto& t = tasks_.emplace_back(*this, s, &Pipeline::pipelined_body);
    graph_->loop(config_.stages[s].node).spawn(t.task.ctx);
  }
}

bool Pipeline::finished() const {
  if (!started_) return false;
  return std::all_of(done_.begin(), done_.end(), [](const coro::Event& e) { return e.completed(); });
}

void Pipeline::submit(std::size_t stage, std::uint64_t frame, coro::Event* sent) {
  const Stage& st = config_.stages[stage];
  vnode::Job job;
  job.subject = st.name;
  job.frame = static_cast<std::int64_t>(frame);
  job.bytes = st.bytes;
  job.duration = st.is_link() ? 0 : st.compute_time();
  job.sent = sent;
  devices_[stage]->submit(std::move(job), &done(stage, frame));
}

void Pipeline::after_sent(std::size_t stage, std::uint64_t frame) {
  FrameBuffer* buf = frame_buffers_[static_cast<std::size_t>(frame)];
  if (stage == producer_) {
    buf->set_sequence(static_cast<std::int64_t>(frame));
    buf->mark_filled();
    pool_->publish(*buf);
    if (consumer_holders_ == 0) {
      pool_->claim(*buf);
      pool_->release(*buf);
    } else {
      pool_->claim(*buf, consumer_holders_);
    }
  } else if (config_.stages[stage].holds_buffer) {
    pool_->release(*buf);
  }
}

void Pipeline::pipelined_body(coro::Context& ctx) {
  auto& t = ctx.args_as<StageTask>();
  Pipeline& p = *t.pipeline;
  NP_CO_BEGIN(ctx);
  for (; t.frame < p.config_.frames; ++t.frame) {
    if (t.stage == p.producer_) {
      t.tick_at = p.next_tick(t);
      if (t.tick_at > ctx.loop()->now()) {
        t.tick.reset();
        ctx.loop()->arm_timer(t.tick_at, t.tick);
        NP_CO_WAIT(ctx, t.tick);
      }
      if (p.config_.drop_when_busy) {
        while (!p.try_take(t)) {
          t.tick.reset();
          ctx.loop()->arm_timer(t.tick_at, t.tick);
          NP_CO_WAIT(ctx, t.tick);
        }
      } else {
        t.acquired.reset();
        p.pool_->acquire_async(&p.frame_buffers_[static_cast<std::size_t>(t.frame)], t.acquired);
        NP_CO_WAIT(ctx, t.acquired);
      }
      p.last_start_ = ctx.loop()->now();
      ++t.ticks;
    } else {
      for (t.step = 0; t.step < p.preds_[t.stage].size(); ++t.step) {
        NP_CO_WAIT(ctx, p.done(p.preds_[t.stage][t.step], t.frame));
      }
    }
    t.sent.reset();
    p.submit(t.stage, t.frame, &t.sent);
    NP_CO_WAIT(ctx, t.sent);
    p.after_sent(t.stage, t.frame);
  }
  NP_CO_END(ctx);
}

void Pipeline::serialized_body(coro::Context& ctx) {
  auto& t = ctx.args_as<StageTask>();
  Pipeline& p = *t.pipeline;
  NP_CO_BEGIN(ctx);
  for (; t.frame < p.config_.frames; ++t.frame) {
    t.tick_at = p.next_tick(t);
    if (t.tick_at > ctx.loop()->now()) {
      t.tick.reset();
      ctx.loop()->arm_timer(t.tick_at, t.tick);
      NP_CO_WAIT(ctx, t.tick);
    }
    if (p.config_.drop_when_busy) {
      while (!p.try_take(t)) {
        t.tick.reset();
        ctx.loop()->arm_timer(t.tick_at, t.tick);
        NP_CO_WAIT(ctx, t.tick);
      }
    } else {
      t.acquired.reset();
      p.pool_->acquire_async(&p.frame_buffers_[static_cast<std::size_t>(t.frame)], t.acquired);
      NP_CO_WAIT(ctx, t.acquired);
    }
    p.last_start_ = ctx.loop()->now();
    ++t.ticks;
    for (t.step = 0; t.step < p.order_.size(); ++t.step) {
      t.sent.reset();
      p.submit(p.order_[t.step], t.frame, &t.sent);
      NP_CO_WAIT(ctx, p.done(p.order_[t.step], t.frame));
      p.after_sent(p.order_[t.step], t.frame);
    }
  }
  NP_CO_END(ctx);
}

// ---------------------------------------------------------------------------

Trace pipeline_run(const std::vector<Stage>& stages, ExecutionMode mode, std::size_t pool_size,
                   std::uint64_t frames, double trigger_hz) {
  std::vector<vnode::NodeSpec> nodes;
  for (const auto& st : stages) {
    if (st.is_link()) throw ConfigError("pipeline_run has no links; stage '" + st.name + "' is one");
    if (std::none_of(nodes.begin(), nodes.end(), [&](const auto& n) { return n.name == st.node; })) {
      nodes.push_back({st.node, 0});
    }
  }
  vnode::NodeGraph graph(std::move(nodes), {});
  Trace trace;
  graph.set_trace(&trace);
  PipelineConfig cfg;
  cfg.stages = stages;
  cfg.mode = mode;
  cfg.pool_size = pool_size;
  cfg.frames = frames;
  cfg.trigger_hz = trigger_hz;
  Pipeline pipeline(graph, std::move(cfg));
  pipeline.start();
  graph.run();
  if (!pipeline.finished()) throw UsageError("pipeline stalled before all frames completed");
  return trace;
}

std::optional<double> steady_state_period_us(const Trace& trace, std::string_view stage,
                                             std::int64_t from_frame) {
  std::map<std::int64_t, Micros> ends;
  for (const auto& ev : trace.events()) {
    if (ev.kind == TraceKind::StageEnd && ev.subject == stage && ev.frame >= from_frame) {
      ends.emplace(ev.frame, ev.t);
    }
  }
  if (ends.size() < 2) return std::nullopt;
  const Micros first = ends.begin()->second;
  const Micros last = ends.rbegin()->second;
  return static_cast<double>(last - first) / static_cast<double>(ends.size() - 1);
}

}  // namespace nanopipe::pipeline
