#include "nanopipe/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <queue>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nanopipe/errors.hpp"

#ifndef NANOPIPE_DEFAULT_SCENARIO_DIR
#define NANOPIPE_DEFAULT_SCENARIO_DIR "scenarios"
#endif

namespace nanopipe::scenarios {

using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Schema helpers

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) schema_error(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      schema_error(where, "unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, const std::string& where, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    schema_error(where + "." + key, "wrong type");
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) schema_error(where, "missing required key '" + std::string(key) + "'");
  return get_or<T>(obj, key, where, T{});
}

Micros get_micros(const json& obj, const char* key, const std::string& where, Micros fallback) {
  const auto v = get_or<std::int64_t>(obj, key, where, fallback);
  if (v < 0) schema_error(where + "." + key, "must not be negative");
  return v;
}

vnode::LinkConfig parse_link(const json& j, const std::string& where) {
  check_keys(j, where,
             {"preset", "name", "from", "to", "duplex", "bandwidth_bps", "base_latency_us", "mtu",
              "injected_delay_us", "jitter_mean_us", "segmentation", "note"});
  const auto from = require<std::string>(j, "from", where);
  const auto to = require<std::string>(j, "to", where);
  const auto preset = get_or<std::string>(j, "preset", where, "");
  vnode::LinkConfig c;
  if (preset == "uart") {
    c = vnode::LinkConfig::uart(from, to);
  } else if (preset == "spi") {
    c = vnode::LinkConfig::spi(from, to);
  } else if (preset == "crtp") {
    c = vnode::LinkConfig::crtp_radio(from, to);
  } else if (preset == "wifi") {
    c = vnode::LinkConfig::wifi(from, to);
  } else if (preset.empty()) {
    c.from = from;
    c.to = to;
  } else {
    schema_error(where + ".preset", "unknown preset '" + preset + "'");
  }
  c.name = get_or<std::string>(j, "name", where, c.name);
  c.bandwidth_bps = get_or<std::uint64_t>(j, "bandwidth_bps", where, c.bandwidth_bps);
  c.base_latency_us = get_micros(j, "base_latency_us", where, c.base_latency_us);
  c.mtu = get_or<std::size_t>(j, "mtu", where, c.mtu);
  c.injected_delay_us = get_micros(j, "injected_delay_us", where, c.injected_delay_us);
  c.jitter_mean_us = get_micros(j, "jitter_mean_us", where, c.jitter_mean_us);
  c.segmentation = get_or<bool>(j, "segmentation", where, c.segmentation);
  if (c.bandwidth_bps == 0) schema_error(where + ".bandwidth_bps", "must be positive");
  if (c.mtu == 0) schema_error(where + ".mtu", "must be positive");
  return c;
}

pipeline::Stage parse_stage(const json& j, const std::string& where) {
  check_keys(j, where,
             {"name", "resource", "node", "link_to", "duration_us", "us_per_byte", "bytes", "after",
              "holds_buffer", "duration_source"});
  pipeline::Stage st;
  st.name = require<std::string>(j, "name", where);
  st.node = require<std::string>(j, "node", where);
  st.resource = get_or<std::string>(j, "resource", where, "");
  st.link_to = get_or<std::string>(j, "link_to", where, "");
  st.duration_us = get_micros(j, "duration_us", where, 0);
  st.us_per_byte = get_or<double>(j, "us_per_byte", where, 0.0);
  st.bytes = get_or<std::size_t>(j, "bytes", where, 0);
  st.after = get_or<std::vector<std::string>>(j, "after", where, {});
  if (st.us_per_byte < 0) schema_error(where + ".us_per_byte", "must not be negative");
  if (st.is_link() && !st.resource.empty()) schema_error(where, "a link stage has no resource");
  if (st.is_link() && st.duration_us != 0) schema_error(where, "link stage time comes from the link");
  if (!st.is_link() && st.resource.empty()) schema_error(where, "needs 'resource' or 'link_to'");
  if (j.contains("holds_buffer")) st.holds_buffer = get_or<bool>(j, "holds_buffer", where, true);
  return st;
}

// ---------------------------------------------------------------------------
// Streaming workload: camera -> SPI -> router -> Wi-Fi -> sink

constexpr const char* kHostSink = "host_sink";

class StreamingRig {
 public:
  StreamingRig(const Scenario& s, vnode::NodeGraph& graph, double rate_hz)
      : source_(graph.loop(s.stream.source)),
        dest_(cpx::node_id(s.stream.dest)),
        src_id_(cpx::node_id(s.stream.source)),
        spi_(graph.link(s.stream.source, s.stream.router)),
        pool_(source_, s.pool_size, s.camera.frame_bytes()),
        camera_(source_, camera_config(s, rate_hz), s.metrics.capture),
        router_(graph.loop(s.stream.router), s.router),
        sender_(coro::register_coroutine("stream_sender", &StreamingRig::sender_body), this),
        frames_(s.frames) {
    coro::EventLoop& sink_loop = graph.loop(s.stream.dest);
    router_.add_interface(dest_, graph.link(s.stream.router, s.stream.dest),
                          [this, &sink_loop](const cpx::CpxPacket& pkt, const vnode::Delivery&) {
                            max_copy_count_ = std::max(max_copy_count_, pkt.copy_count);
                            if (pkt.last_fragment) sink_loop.record(TraceKind::StageEnd, kHostSink, pkt.frame);
                          });
  }

  static vnode::CameraConfig camera_config(const Scenario& s, double rate_hz) {
    vnode::CameraConfig c;
    c.mode = vnode::CameraMode::Streaming;
    c.frame_period_us = static_cast<Micros>(std::llround(1e6 / rate_hz));
    c.width = s.camera.width;
    c.height = s.camera.height;
    c.bytes_per_pixel = s.camera.bytes_per_pixel;
    c.readout_us = s.camera.readout_us;
    c.min_trigger_interval_us = s.camera.min_trigger_interval_us;
    c.validate();
    return c;
  }

  void start() {
    source_.spawn(sender_.ctx);
    camera_.stream(pool_, frames_, [this](pipeline::FrameBuffer& buf) {
      pool_.claim(buf);
      ready_.push_back(&buf);
      if (!work_.completed()) source_.complete(work_);
    });
  }

  const cpx::Router& router() const { return router_; }
  std::uint64_t max_copy_count() const { return max_copy_count_; }

 private:
  static void sender_body(coro::Context& ctx) {
    auto& r = ctx.args_as<StreamingRig>();
    NP_CO_BEGIN(ctx);
    for (;;) {
      while (r.ready_.empty()) {
        r.work_.reset();
        NP_CO_WAIT(ctx, r.work_);
      }
      r.buf_ = r.ready_.front();
      r.ready_.pop_front();
      r.frags_ = cpx::fragment(r.src_id_, r.dest_, cpx::kFunctionAppStream, r.buf_->bytes(), r.buf_,
                               r.buf_->sequence());
      r.source_.record(TraceKind::StageStart, "stream_tx", r.buf_->sequence());
      for (r.index_ = 0; r.index_ < r.frags_.size(); ++r.index_) {
        r.credit_.reset();
        r.router_.acquire_credit_async(r.dest_, r.credit_);
        NP_CO_WAIT(ctx, r.credit_);
        r.sent_.reset();
        r.spi_.send_async(r.frags_[r.index_].wire_size(), &r.sent_, nullptr, {}, r.buf_->sequence(),
                          [&r, pkt = r.frags_[r.index_]](const vnode::Delivery& d) mutable {
                            cpx::timestamp_ingress(r.router_loop(), pkt, d.first_byte);
                            r.router_.forward(pkt);
                          });
        NP_CO_WAIT(ctx, r.sent_);
      }
      r.pool_.release(*r.buf_);
    }
    NP_CO_END(ctx);
  }

  coro::EventLoop& router_loop() const { return spi_.rx_loop(); }

  coro::EventLoop& source_;
  cpx::NodeId dest_;
  cpx::NodeId src_id_;
  vnode::Link& spi_;
  pipeline::BufferPool pool_;
  vnode::Camera camera_;
  cpx::Router router_;
  coro::Task sender_;
  std::uint64_t frames_;
  std::deque<pipeline::FrameBuffer*> ready_;
  pipeline::FrameBuffer* buf_ = nullptr;
  std::vector<cpx::CpxPacket> frags_;
  std::size_t index_ = 0;
  std::uint64_t max_copy_count_ = 0;
  coro::Event work_{"sender_work"};
  coro::Event credit_{"credit"};
  coro::Event sent_{"spi_sent"};
};

const vnode::LinkConfig& find_link(const Scenario& s, const std::string& from, const std::string& to) {
  for (const auto& l : s.links) {
    if (l.from == from && l.to == to) return l;
  }
  throw ConfigError("scenario '" + s.name + "' has no link " + from + "->" + to);
}

std::string reference_node(const Scenario& s) {
  if (s.kind == ScenarioKind::Streaming) return s.stream.source;
  return s.stages[pipeline::topological_order(s.stages).front()].node;
}

double effective_rate(const Scenario& s, std::optional<double> override_hz) {
  const double hz = override_hz.value_or(s.camera.rate_hz);
  if (hz < 0) throw ConfigError("negative source rate");
  if (s.camera.mode == vnode::CameraMode::Streaming) {
    if (hz <= 0) throw ConfigError("streaming camera needs a frame rate");
    if (1e6 / hz < static_cast<double>(vnode::kStreamingMinPeriodUs) - 0.5) {
      throw ConfigError("streaming rate " + std::to_string(hz) + " Hz exceeds the 150 frame/s ceiling");
    }
  } else if (hz > 0 && 1e6 / hz < static_cast<double>(s.camera.min_trigger_interval_us) - 0.5) {
    throw ConfigError("trigger rate " + std::to_string(hz) + " Hz exceeds the camera trigger ceiling");
  }
  return hz;
}

}  // namespace

bool Scenario::is_remote() const {
  bool wifi = false;
  bool host_compute = false;
  for (const auto& st : stages) {
    if (st.is_link()) {
      for (const auto& l : links) {
        if (l.from == st.node && l.to == st.link_to && l.name == "wifi") wifi = true;
      }
    } else if (st.node == "host") {
      host_compute = true;
    }
  }
  return wifi && host_compute;
}

// ---------------------------------------------------------------------------
// Loading

Scenario parse_scenario(std::string_view json_text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  const std::string w = origin;
  check_keys(doc, w,
             {"name", "description", "kind", "mode", "router", "pool_size", "frames", "seed", "nodes",
              "links", "camera", "stages", "metrics", "stream", "sweep_hz", "notes"});

  Scenario s;
  s.name = require<std::string>(doc, "name", w);
  s.description = get_or<std::string>(doc, "description", w, "");
  const auto kind = get_or<std::string>(doc, "kind", w, "pipeline");
  if (kind == "pipeline") {
    s.kind = ScenarioKind::Pipeline;
  } else if (kind == "streaming") {
    s.kind = ScenarioKind::Streaming;
  } else {
    schema_error(w + ".kind", "unknown kind '" + kind + "'");
  }
  s.mode = pipeline::parse_mode(get_or<std::string>(doc, "mode", w, "pipelined"));
  s.pool_size = get_or<std::size_t>(doc, "pool_size", w, 2);
  s.frames = get_or<std::uint64_t>(doc, "frames", w, 200);
  s.seed = get_or<std::uint64_t>(doc, "seed", w, 1);
  s.sweep_hz = get_or<std::vector<double>>(doc, "sweep_hz", w, {});
  if (s.pool_size == 0) schema_error(w + ".pool_size", "must be at least 1");
  if (s.frames < 50) schema_error(w + ".frames", "steady-state metrics need at least 50 frames");

  if (doc.contains("router")) {
    const auto& r = doc["router"];
    const std::string rw = w + ".router";
    check_keys(r, rw, {"mode", "queue_capacity", "copy_ns_per_byte", "note"});
    s.router.mode = cpx::parse_router_mode(get_or<std::string>(r, "mode", rw, "zerocopy"));
    s.router.queue_capacity = get_or<std::size_t>(r, "queue_capacity", rw, s.router.queue_capacity);
    s.router.copy_ns_per_byte = get_or<double>(r, "copy_ns_per_byte", rw, 0.0);
    if (s.router.queue_capacity == 0) schema_error(rw + ".queue_capacity", "must be at least 1");
    if (s.router.copy_ns_per_byte < 0) schema_error(rw + ".copy_ns_per_byte", "must not be negative");
  }

  if (doc.contains("nodes")) {
    if (!doc["nodes"].is_array()) schema_error(w + ".nodes", "expected an array");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc["nodes"].size(); ++i) {
      const auto& n = doc["nodes"][i];
      const std::string nw = w + ".nodes[" + std::to_string(i) + "]";
      check_keys(n, nw, {"name", "clock_offset_us"});
      vnode::NodeSpec spec{require<std::string>(n, "name", nw),
                           get_or<std::int64_t>(n, "clock_offset_us", nw, 0)};
      if (!seen.insert(spec.name).second) schema_error(nw, "duplicate node '" + spec.name + "'");
      s.nodes.push_back(spec);
    }
  } else {
    s.nodes = vnode::NodeGraph::default_nodes();
  }
  auto has_node = [&](const std::string& n) {
    return std::any_of(s.nodes.begin(), s.nodes.end(), [&](const auto& x) { return x.name == n; });
  };

  if (doc.contains("links")) {
    if (!doc["links"].is_array()) schema_error(w + ".links", "expected an array");
    std::set<std::string> edges;
    for (std::size_t i = 0; i < doc["links"].size(); ++i) {
      const std::string lw = w + ".links[" + std::to_string(i) + "]";
      auto link = parse_link(doc["links"][i], lw);
      std::vector<vnode::LinkConfig> made{link};
      if (get_or<bool>(doc["links"][i], "duplex", lw, false)) {
        auto back = link;
        std::swap(back.from, back.to);
        made.push_back(back);
      }
      for (auto& l : made) {
        if (!has_node(l.from) || !has_node(l.to)) schema_error(lw, "link references an unknown node");
        if (!edges.insert(l.edge()).second) schema_error(lw, "duplicate link " + l.edge());
        s.links.push_back(std::move(l));
      }
    }
  } else {
    s.links = vnode::NodeGraph::default_links();
  }

  if (doc.contains("camera")) {
    const auto& c = doc["camera"];
    const std::string cw = w + ".camera";
    check_keys(c, cw,
               {"mode", "rate_hz", "width", "height", "bytes_per_pixel", "readout_us",
                "min_trigger_interval_us", "note"});
    const auto mode = get_or<std::string>(c, "mode", cw, "trigger");
    if (mode == "trigger") {
      s.camera.mode = vnode::CameraMode::Trigger;
    } else if (mode == "streaming") {
      s.camera.mode = vnode::CameraMode::Streaming;
    } else {
      schema_error(cw + ".mode", "unknown camera mode '" + mode + "'");
    }
    s.camera.rate_hz = get_or<double>(c, "rate_hz", cw, 0.0);
    s.camera.width = get_or<std::uint32_t>(c, "width", cw, s.camera.width);
    s.camera.height = get_or<std::uint32_t>(c, "height", cw, s.camera.height);
    s.camera.bytes_per_pixel = get_or<std::uint32_t>(c, "bytes_per_pixel", cw, s.camera.bytes_per_pixel);
    s.camera.readout_us = get_micros(c, "readout_us", cw, s.camera.readout_us);
    s.camera.min_trigger_interval_us =
        get_micros(c, "min_trigger_interval_us", cw, s.camera.min_trigger_interval_us);
  }
  effective_rate(s, std::nullopt);
  for (double hz : s.sweep_hz) effective_rate(s, hz);

  if (doc.contains("metrics")) {
    const auto& m = doc["metrics"];
    const std::string mw = w + ".metrics";
    check_keys(m, mw, {"capture", "sink", "inference", "rtt_from", "rtt_to", "steady_from"});
    s.metrics.capture = get_or<std::string>(m, "capture", mw, s.metrics.capture);
    s.metrics.sink = get_or<std::string>(m, "sink", mw, s.metrics.sink);
    s.metrics.inference = get_or<std::string>(m, "inference", mw, s.metrics.inference);
    s.metrics.rtt_from = get_or<std::string>(m, "rtt_from", mw, "");
    s.metrics.rtt_to = get_or<std::string>(m, "rtt_to", mw, "");
    s.metrics.steady_from = get_or<std::int64_t>(m, "steady_from", mw, s.metrics.steady_from);
    if (s.metrics.rtt_from.empty() != s.metrics.rtt_to.empty()) {
      schema_error(mw, "rtt_from and rtt_to go together");
    }
  }

  if (s.kind == ScenarioKind::Pipeline) {
    if (!doc.contains("stages") || !doc["stages"].is_array()) {
      schema_error(w, "a pipeline scenario needs a 'stages' array");
    }
    if (doc.contains("stream")) schema_error(w, "'stream' only applies to streaming scenarios");
    for (std::size_t i = 0; i < doc["stages"].size(); ++i) {
      const std::string sw = w + ".stages[" + std::to_string(i) + "]";
      s.stages.push_back(parse_stage(doc["stages"][i], sw));
    }
    const auto order = pipeline::topological_order(s.stages);
    const std::string& home = s.stages[order.front()].node;
    for (std::size_t i = 0; i < s.stages.size(); ++i) {
      auto& st = s.stages[i];
      const std::string sw = w + ".stages[" + std::to_string(i) + "]";
      if (!has_node(st.node)) schema_error(sw, "unknown node '" + st.node + "'");
      if (st.is_link()) {
        find_link(s, st.node, st.link_to);
      }
    }
    // By default the frame buffer is held by the run of stages that stay on
    // the capture node, up to the first hop away from it.
    for (std::size_t i : order) {
      auto& st = s.stages[i];
      if (doc["stages"][i].contains("holds_buffer")) continue;
      st.holds_buffer = st.node == home;
      for (const auto& up : st.after) {
        for (const auto& other : s.stages) {
          if (other.name == up && !other.holds_buffer) st.holds_buffer = false;
        }
      }
    }
    auto known = [&](const std::string& n) {
      return std::any_of(s.stages.begin(), s.stages.end(), [&](const auto& st) { return st.name == n; });
    };
    for (const auto* name : {&s.metrics.capture, &s.metrics.sink, &s.metrics.rtt_from, &s.metrics.rtt_to}) {
      if (!name->empty() && !known(*name)) schema_error(w + ".metrics", "unknown stage '" + *name + "'");
    }
    if (!s.metrics.inference.empty() && !known(s.metrics.inference)) {
      schema_error(w + ".metrics", "unknown stage '" + s.metrics.inference + "'");
    }
  } else {
    if (doc.contains("stages")) schema_error(w, "a streaming scenario has no 'stages'");
    if (s.camera.mode != vnode::CameraMode::Streaming) {
      schema_error(w + ".camera", "a streaming scenario needs a streaming camera");
    }
    if (doc.contains("stream")) {
      const auto& st = doc["stream"];
      const std::string tw = w + ".stream";
      check_keys(st, tw, {"source", "router", "dest"});
      s.stream.source = get_or<std::string>(st, "source", tw, s.stream.source);
      s.stream.router = get_or<std::string>(st, "router", tw, s.stream.router);
      s.stream.dest = get_or<std::string>(st, "dest", tw, s.stream.dest);
    }
    find_link(s, s.stream.source, s.stream.router);
    find_link(s, s.stream.router, s.stream.dest);
    cpx::node_id(s.stream.source);
    cpx::node_id(s.stream.dest);
    if (!doc.contains("metrics") || !doc["metrics"].contains("sink")) s.metrics.sink = kHostSink;
    if (!doc.contains("metrics") || !doc["metrics"].contains("inference")) s.metrics.inference.clear();
  }
  return s;
}

Scenario load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scenario file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.filename().string());
}

std::filesystem::path scenario_dir() {
  if (const char* env = std::getenv("NANOPIPE_SCENARIO_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return NANOPIPE_DEFAULT_SCENARIO_DIR;
}

std::filesystem::path resolve_scenario(std::string_view name_or_path) {
  const std::filesystem::path direct{std::string(name_or_path)};
  if (std::filesystem::is_regular_file(direct)) return direct;
  const auto candidate = scenario_dir() / (std::string(name_or_path) + ".json");
  if (std::filesystem::is_regular_file(candidate)) return candidate;
  throw ConfigError("unknown scenario '" + std::string(name_or_path) + "' (looked in " +
                    scenario_dir().string() + ")");
}

Scenario load_scenario(std::string_view name_or_path) {
  return load_scenario_file(resolve_scenario(name_or_path));
}

std::vector<std::string> list_scenarios(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      names.push_back(entry.path().stem().string());
    }
  }
  if (ec) throw ConfigError("cannot list scenario directory '" + dir.string() + "'");
  std::sort(names.begin(), names.end());
  return names;
}

// ---------------------------------------------------------------------------
// Metrics

Metrics compute_metrics(const Trace& trace, const MetricInputs& inputs) {
  const MetricSpec& spec = inputs.spec;
  auto global = [&](const TraceEvent& ev) {
    auto it = inputs.clock_offsets_us.find(ev.node);
    if (it == inputs.clock_offsets_us.end()) {
      throw UsageError("no clock offset for node '" + ev.node + "'");
    }
    return static_cast<double>(ev.t) - it->second;
  };

  std::map<std::int64_t, const TraceEvent*> capture_start, sink_end, inf_start, inf_end, rtt_start, rtt_end;
  Metrics m;
  for (const auto& ev : trace.events()) {
    if (ev.kind == TraceKind::Drop) {
      ++m.frames_dropped;
      continue;
    }
    if (ev.kind == TraceKind::StageEnd && ev.subject == spec.sink) ++m.frames_delivered;
    if (ev.frame < spec.steady_from) continue;
    if (ev.kind == TraceKind::StageStart) {
      if (ev.subject == spec.capture) capture_start.emplace(ev.frame, &ev);
      if (ev.subject == spec.inference) inf_start.emplace(ev.frame, &ev);
      if (!spec.rtt_from.empty() && ev.subject == spec.rtt_from) rtt_start.emplace(ev.frame, &ev);
    } else if (ev.kind == TraceKind::StageEnd) {
      if (ev.subject == spec.sink) sink_end.emplace(ev.frame, &ev);
      if (ev.subject == spec.inference) inf_end.emplace(ev.frame, &ev);
      if (!spec.rtt_to.empty() && ev.subject == spec.rtt_to) rtt_end.emplace(ev.frame, &ev);
    }
  }
  if (sink_end.size() < 10) {
    throw UsageError("only " + std::to_string(sink_end.size()) + " steady-state receipts at '" + spec.sink +
                     "'; need at least 10");
  }

  std::vector<double> receipts;
  for (const auto& [_, ev] : sink_end) receipts.push_back(global(*ev));
  std::sort(receipts.begin(), receipts.end());
  const double span = receipts.back() - receipts.front();
  if (span <= 0) throw UsageError("sink receipts do not span any time");
  m.closed_loop_hz = static_cast<double>(receipts.size() - 1) * 1e6 / span;

  double inf_total = 0;
  std::size_t inf_n = 0;
  for (const auto& [f, start] : inf_start) {
    auto it = inf_end.find(f);
    if (it == inf_end.end()) continue;
    inf_total += global(*it->second) - global(*start);
    ++inf_n;
  }
  if (inf_n > 0 && inf_total > 0) {
    m.inference_hz = 1e6 / (inf_total / static_cast<double>(inf_n));
  } else if (inputs.source_hz > 0) {
    m.inference_hz = inputs.source_hz;
  } else {
    m.inference_hz = m.closed_loop_hz;
  }
  m.drop_pct = (1.0 - m.closed_loop_hz / m.inference_hz) * 100.0;

  std::vector<double> e2e;
  for (const auto& [f, end] : sink_end) {
    auto it = capture_start.find(f);
    if (it != capture_start.end()) e2e.push_back((global(*end) - global(*it->second)) / 1000.0);
  }
  if (!e2e.empty()) {
    double sum = 0;
    for (double v : e2e) sum += v;
    m.e2e_mean_ms = sum / static_cast<double>(e2e.size());
    std::sort(e2e.begin(), e2e.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(e2e.size())));
    m.e2e_p95_ms = e2e[std::max<std::size_t>(rank, 1) - 1];
  }

  double rtt_sum = 0;
  std::size_t rtt_n = 0;
  for (const auto& [f, start] : rtt_start) {
    auto it = rtt_end.find(f);
    if (it == rtt_end.end()) continue;
    rtt_sum += (global(*it->second) - global(*start)) / 1000.0;
    ++rtt_n;
  }
  if (rtt_n > 0) m.rtt_mean_ms = rtt_sum / static_cast<double>(rtt_n);
  return m;
}

std::string metrics_to_json(const Metrics& m, const MetricInputs& in) {
  json j;
  j["closed_loop_hz"] = m.closed_loop_hz;
  j["inference_hz"] = m.inference_hz;
  j["drop_pct"] = m.drop_pct;
  j["e2e_latency_ms"] = {{"mean", m.e2e_mean_ms}, {"p95", m.e2e_p95_ms}};
  j["rtt_ms"] = m.rtt_mean_ms ? json{{"mean", *m.rtt_mean_ms}} : json(nullptr);
  j["frames_delivered"] = m.frames_delivered;
  j["frames_dropped"] = m.frames_dropped;
  j["inputs"] = {
      {"capture", in.spec.capture},
      {"sink", in.spec.sink},
      {"inference", in.spec.inference},
      {"rtt_from", in.spec.rtt_from},
      {"rtt_to", in.spec.rtt_to},
      {"steady_from", in.spec.steady_from},
      {"clock_offsets_us", in.clock_offsets_us},
      {"source_hz", in.source_hz},
  };
  return j.dump(2) + "\n";
}

std::pair<Metrics, MetricInputs> metrics_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    Metrics m;
    m.closed_loop_hz = j.at("closed_loop_hz").get<double>();
    m.inference_hz = j.at("inference_hz").get<double>();
    m.drop_pct = j.at("drop_pct").get<double>();
    m.e2e_mean_ms = j.at("e2e_latency_ms").at("mean").get<double>();
    m.e2e_p95_ms = j.at("e2e_latency_ms").at("p95").get<double>();
    if (!j.at("rtt_ms").is_null()) m.rtt_mean_ms = j.at("rtt_ms").at("mean").get<double>();
    m.frames_delivered = j.at("frames_delivered").get<std::uint64_t>();
    m.frames_dropped = j.at("frames_dropped").get<std::uint64_t>();
    MetricInputs in;
    const auto& i = j.at("inputs");
    in.spec.capture = i.at("capture").get<std::string>();
    in.spec.sink = i.at("sink").get<std::string>();
    in.spec.inference = i.at("inference").get<std::string>();
    in.spec.rtt_from = i.at("rtt_from").get<std::string>();
    in.spec.rtt_to = i.at("rtt_to").get<std::string>();
    in.spec.steady_from = i.at("steady_from").get<std::int64_t>();
    in.clock_offsets_us = i.at("clock_offsets_us").get<std::map<std::string, double>>();
    in.source_hz = i.at("source_hz").get<double>();
    return {m, in};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Clock offsets

std::map<std::string, double> estimate_offsets(const Scenario& s) {
  // Synchronisation probes see the raw links: injected workload delay and
  // jitter are not part of the propagation path.
  auto links = s.links;
  for (auto& l : links) {
    l.injected_delay_us = 0;
    l.jitter_mean_us = 0;
  }
  vnode::NodeGraph graph(s.nodes, links, s.seed);
  const std::string ref = reference_node(s);
  std::map<std::string, double> offsets{{ref, 0.0}};
  std::queue<std::string> todo;
  todo.push(ref);
  while (!todo.empty()) {
    const std::string a = todo.front();
    todo.pop();
    for (const auto& b : graph.node_names()) {
      if (offsets.count(b) != 0 || !graph.has_link(a, b) || !graph.has_link(b, a)) continue;
      offsets[b] = offsets[a] + cpx::estimate_clock_offset(graph, a, b);
      todo.push(b);
    }
  }
  return offsets;
}

// ---------------------------------------------------------------------------
// Oracle

pipeline::OracleResult scenario_oracle(const Scenario& s) {
  const double hz = s.camera.rate_hz;
  if (s.kind == ScenarioKind::Streaming) {
    if (s.pool_size < 2) return {std::nullopt, "streaming oracle needs at least two buffers"};
    const auto& spi = find_link(s, s.stream.source, s.stream.router);
    const auto& wifi = find_link(s, s.stream.router, s.stream.dest);
    if (spi.jitter_mean_us > 0 || wifi.jitter_mean_us > 0) return {std::nullopt, "stochastic link delay"};
    const std::size_t bytes = s.camera.frame_bytes();
    const std::size_t n = cpx::fragment_count(bytes);
    double t_spi = 0, t_wifi = 0, serial = 0;
    Micros worst_cycle = 0, worst_slot = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t payload = std::min(cpx::kMaxPayload, bytes - i * cpx::kMaxPayload);
      const std::size_t wire = payload + cpx::kHeaderBytes;
      const Micros a = spi.serialization_time(wire);
      const Micros b = wifi.serialization_time(wire);
      Micros copy = 0;
      if (s.router.mode == cpx::RouterMode::Baseline) {
        copy = static_cast<Micros>(std::ceil(s.router.copy_ns_per_byte * static_cast<double>(payload) / 1000.0));
      }
      t_spi += static_cast<double>(a);
      t_wifi += static_cast<double>(b + copy);
      serial += static_cast<double>(a + spi.base_latency_us + spi.injected_delay_us + copy + b);
      worst_cycle = std::max(worst_cycle, a + spi.base_latency_us + spi.injected_delay_us + copy + b);
      worst_slot = std::max(worst_slot, std::max(a, b + copy));
    }
    const double camera = hz > 0 ? 1e6 / hz : 0.0;
    if (s.router.mode == cpx::RouterMode::Baseline || s.router.queue_capacity == 1) {
      return {std::max(serial, camera), {}};
    }
    // Enough slots to keep both links busy across one fragment's round trip.
    if (static_cast<double>(s.router.queue_capacity) * static_cast<double>(worst_slot) <
        static_cast<double>(worst_cycle)) {
      return {std::nullopt, "router queue too shallow to overlap the links"};
    }
    return {std::max({t_spi, t_wifi, camera}), {}};
  }

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < s.stages.size(); ++i) index[s.stages[i].name] = i;
  std::vector<pipeline::OracleStage> stages;
  for (const auto& st : s.stages) {
    pipeline::OracleStage o;
    o.holds_buffer = st.holds_buffer;
    if (st.is_link()) {
      const auto& l = find_link(s, st.node, st.link_to);
      o.resource = "link:" + l.edge();
      o.occupancy = l.serialization_time(st.bytes);
      o.latency = l.base_latency_us + l.injected_delay_us;
      o.jitter = l.jitter_mean_us > 0;
    } else {
      o.resource = st.node + "/" + st.resource;
      o.occupancy = st.compute_time();
    }
    for (const auto& up : st.after) o.after.push_back(index.at(up));
    stages.push_back(std::move(o));
  }
  const bool on_demand = s.mode == pipeline::ExecutionMode::Serialized ||
                         (s.camera.mode == vnode::CameraMode::Trigger && hz <= 0);
  double trigger = hz;
  if (on_demand) {
    trigger = s.camera.min_trigger_interval_us > 0
                  ? 1e6 / static_cast<double>(s.camera.min_trigger_interval_us)
                  : 0.0;
  }
  auto result = pipeline::analytic_oracle(stages, s.mode, s.pool_size, trigger);
  if (result.period_us && !on_demand && s.camera.mode == vnode::CameraMode::Streaming &&
      *result.period_us > 1e6 / hz + 1.0) {
    return {std::nullopt, "source outpaces the pipeline; dropped ticks alias the period"};
  }
  return result;
}

// ---------------------------------------------------------------------------
// Running

RunResult run_scenario(const Scenario& s, std::optional<double> source_hz) {
  const double hz = effective_rate(s, source_hz);
  Scenario effective = s;
  effective.camera.rate_hz = hz;

  RunResult r;
  r.inputs.spec = s.metrics;
  r.inputs.clock_offsets_us = estimate_offsets(s);
  r.inputs.source_hz = hz;
  r.oracle = scenario_oracle(effective);

  vnode::NodeGraph graph(s.nodes, s.links, s.seed);
  graph.set_trace(&r.trace);
  if (s.kind == ScenarioKind::Streaming) {
    StreamingRig rig(effective, graph, hz);
    rig.start();
    graph.run();
    r.router = rig.router().stats();
  } else {
    pipeline::PipelineConfig cfg;
    cfg.stages = s.stages;
    cfg.mode = s.mode;
    cfg.pool_size = s.pool_size;
    cfg.frames = s.frames;
    if (s.mode == pipeline::ExecutionMode::Serialized) {
      // One frame at a time: the camera is triggered when the loop is ready.
      cfg.min_interval_us = s.camera.min_trigger_interval_us;
    } else {
      cfg.trigger_hz = hz;
      cfg.drop_when_busy = s.camera.mode == vnode::CameraMode::Streaming;
      if (s.camera.mode == vnode::CameraMode::Trigger) cfg.min_interval_us = s.camera.min_trigger_interval_us;
    }
    pipeline::Pipeline p(graph, std::move(cfg));
    p.start();
    graph.run();
    if (!p.finished()) throw UsageError("scenario '" + s.name + "' stalled");
  }
  r.metrics = compute_metrics(r.trace, r.inputs);
  r.period_us = pipeline::steady_state_period_us(r.trace, s.metrics.sink, s.metrics.steady_from);
  return r;
}

RunResult run_remote_scenario(const Scenario& s, std::optional<double> source_hz) {
  if (s.kind != ScenarioKind::Pipeline || !s.is_remote()) {
    throw ConfigError("scenario '" + s.name + "' does not offload inference over Wi-Fi");
  }
  return run_scenario(s, source_hz);
}

}  // namespace nanopipe::scenarios
