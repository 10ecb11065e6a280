#include "nanopipe/cpx.hpp"

#include <algorithm>
#include <cmath>

#include "nanopipe/errors.hpp"

namespace nanopipe::cpx {

namespace {

constexpr std::pair<NodeId, std::string_view> kNodeNames[] = {
    {NodeId::Stm32, "stm32"}, {NodeId::Esp32, "esp32"}, {NodeId::Host, "host"},
    {NodeId::Gap8, "gap8"},   {NodeId::Nrf51, "nrf51"},
};

}  // namespace

std::string_view node_name(NodeId id) {
  for (const auto& [n, name] : kNodeNames) {
    if (n == id) return name;
  }
  return "unknown";
}

NodeId node_id(std::string_view name) {
  for (const auto& [n, s] : kNodeNames) {
    if (s == name) return n;
  }
  throw ConfigError("node '" + std::string(name) + "' has no CPX id");
}

std::array<std::uint8_t, kHeaderBytes> encode_header(const CpxPacket& pkt, std::size_t payload_len) {
  const auto src = static_cast<unsigned>(pkt.source);
  const auto dst = static_cast<unsigned>(pkt.destination);
  if (payload_len > kMaxPayload) {
    throw UsageError("payload of " + std::to_string(payload_len) + " B exceeds " +
                     std::to_string(kMaxPayload) + " B per fragment");
  }
  if (src > 7 || dst > 7) throw UsageError("node id does not fit in 3 bits");
  if (pkt.function > 63) throw UsageError("function id does not fit in 6 bits");
  if (pkt.version > 3) throw UsageError("version does not fit in 2 bits");

  const auto length = static_cast<std::uint16_t>(payload_len + 2);
  return {static_cast<std::uint8_t>(length & 0xFF), static_cast<std::uint8_t>(length >> 8),
          static_cast<std::uint8_t>((dst << 5) | (src << 2) | (pkt.last_fragment ? 0x02 : 0x00)),
          static_cast<std::uint8_t>((pkt.version << 6) | pkt.function)};
}

std::vector<std::uint8_t> encode(const CpxPacket& pkt) {
  const auto header = encode_header(pkt, pkt.payload.size());
  std::vector<std::uint8_t> out(pkt.wire_size());
  std::copy(header.begin(), header.end(), out.begin());
  std::copy(pkt.payload.begin(), pkt.payload.end(), out.begin() + kHeaderBytes);
  return out;
}

CpxPacket decode(std::span<const std::uint8_t> wire) {
  if (wire.size() < kHeaderBytes) {
    throw DecodeError("frame of " + std::to_string(wire.size()) + " B is shorter than the header");
  }
  const std::size_t length = wire[0] | (std::size_t{wire[1]} << 8);
  if (length + 2 != wire.size()) {
    throw DecodeError("length field " + std::to_string(length) + " does not match a " +
                      std::to_string(wire.size()) + " B frame");
  }
  if (length - 2 > kMaxPayload) throw DecodeError("payload exceeds the fragment limit");
  const std::uint8_t route = wire[2];
  if (route & 0x01) throw DecodeError("reserved route bit set");

  CpxPacket pkt;
  pkt.destination = static_cast<NodeId>(route >> 5);
  pkt.source = static_cast<NodeId>((route >> 2) & 0x07);
  pkt.last_fragment = (route & 0x02) != 0;
  pkt.version = static_cast<std::uint8_t>(wire[3] >> 6);
  pkt.function = static_cast<std::uint8_t>(wire[3] & 0x3F);
  pkt.payload = wire.subspan(kHeaderBytes);
  return pkt;
}

std::vector<CpxPacket> fragment(NodeId src, NodeId dst, std::uint8_t function,
                                std::span<const std::uint8_t> payload,
                                const pipeline::FrameBuffer* owner, std::int64_t frame) {
  const std::size_t n = fragment_count(payload.size());
  std::vector<CpxPacket> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CpxPacket p;
    p.source = src;
    p.destination = dst;
    p.function = function;
    p.last_fragment = i + 1 == n;
    const std::size_t off = i * kMaxPayload;
    p.payload = payload.subspan(off, std::min(kMaxPayload, payload.size() - off));
    p.owner = owner;
    p.frame = frame;
    out.push_back(p);
  }
  return out;
}

void timestamp_ingress(const coro::EventLoop& node, CpxPacket& pkt, Micros first_byte) {
  pkt.ingress_ts = first_byte + node.clock_offset();
}

double estimate_clock_offset(vnode::NodeGraph& graph, const std::string& a, const std::string& b,
                             std::uint32_t rounds, std::size_t probe_bytes) {
  if (rounds == 0) throw ConfigError("clock offset estimation needs at least one round");
  vnode::Link& ab = graph.link(a, b);
  vnode::Link& ba = graph.link(b, a);
  coro::EventLoop& la = graph.loop(a);
  coro::EventLoop& lb = graph.loop(b);

  struct Exchange {
    Micros t1 = 0, t2 = 0, t3 = 0;
    std::uint32_t done = 0;
    double sum = 0;
    std::function<void()> start;
  } x;
  x.start = [&] {
    x.t1 = la.local_now();
    ab.send_async(probe_bytes, nullptr, nullptr, {}, -1, [&](const vnode::Delivery&) {
      x.t2 = lb.local_now();
      x.t3 = lb.local_now();
      ba.send_async(probe_bytes, nullptr, nullptr, {}, -1, [&](const vnode::Delivery&) {
        const Micros t4 = la.local_now();
        x.sum += static_cast<double>((x.t2 - x.t1) + (x.t3 - t4)) / 2.0;
        if (++x.done < rounds) x.start();
      });
    });
  };
  x.start();
  graph.run();
  if (x.done != rounds) throw UsageError("clock offset exchange did not finish");
  return x.sum / rounds;
}

// ---------------------------------------------------------------------------
// Router

std::string_view to_string(RouterMode mode) {
  return mode == RouterMode::ZeroCopy ? "zerocopy" : "baseline";
}

RouterMode parse_router_mode(std::string_view text) {
  if (text == "zerocopy") return RouterMode::ZeroCopy;
  if (text == "baseline") return RouterMode::Baseline;
  throw ConfigError("unknown router mode '" + std::string(text) + "'");
}

Router::Interface::Interface(Router& r, NodeId d, vnode::Link& l, Sink s)
    : router(&r),
      dest(d),
      link(&l),
      sink(std::move(s)),
      task(coro::register_coroutine("router_egress", &Router::egress_body), this) {}

Router::Router(coro::EventLoop& loop, RouterConfig config)
    : loop_(&loop),
      config_(config),
      capacity_(config.mode == RouterMode::Baseline ? 1 : config.queue_capacity) {
  if (capacity_ == 0) throw ConfigError("router queue capacity must be at least 1");
  if (config_.copy_ns_per_byte < 0) throw ConfigError("negative copy cost");
}

void Router::add_interface(NodeId dest, vnode::Link& egress, Sink sink) {
  if (&egress.loop() != loop_) throw ConfigError("egress link does not leave the router node");
  if (has_interface(dest)) throw ConfigError("duplicate interface for " + std::string(node_name(dest)));
  auto itf = std::make_unique<Interface>(*this, dest, egress, std::move(sink));
  loop_->spawn(itf->task.ctx);
  interfaces_.emplace(dest, std::move(itf));
}

std::size_t Router::occupancy(NodeId dest) const {
  auto it = interfaces_.find(dest);
  return it == interfaces_.end() ? 0 : it->second->queue.size() + it->second->held;
}

std::size_t Router::reserved(NodeId dest) const {
  auto it = interfaces_.find(dest);
  return it == interfaces_.end() ? 0 : it->second->reserved;
}

std::size_t Router::pending_credits(NodeId dest) const {
  auto it = interfaces_.find(dest);
  return it == interfaces_.end() ? 0 : it->second->waiting.size();
}

std::uint64_t Router::in_flight() const {
  std::uint64_t n = 0;
  for (const auto& [_, itf] : interfaces_) n += itf->queue.size() + itf->staged + itf->on_wire;
  return n;
}

void Router::acquire_credit_async(NodeId dest, coro::Event& granted) {
  auto it = interfaces_.find(dest);
  if (it == interfaces_.end()) {
    loop_->complete(granted);
    return;
  }
  Interface& itf = *it->second;
  const std::size_t used = itf.queue.size() + itf.held + itf.reserved;
  if (itf.waiting.empty() && used < capacity_) {
    ++itf.reserved;
    loop_->complete(granted);
  } else {
    ++stats_.credit_waits;
    itf.waiting.push_back(&granted);
    loop_->record(TraceKind::QueueFull, node_name(dest));
  }
  notify();
}

void Router::forward(const CpxPacket& pkt) {
  auto it = interfaces_.find(pkt.destination);
  if (it == interfaces_.end()) {
    ++stats_.unknown_destination;
    loop_->record(TraceKind::Drop, "cpx_error_sink", pkt.frame);
    return;
  }
  Interface& itf = *it->second;
  if (itf.reserved == 0) throw UsageError("forward without a credit");
  --itf.reserved;
  itf.queue.push_back(pkt);
  ++stats_.enqueued;
  stats_.max_occupancy = std::max(stats_.max_occupancy, occupancy(pkt.destination));
  if (!itf.work.completed()) loop_->complete(itf.work);
  notify();
}

void Router::release_slot(Interface& itf) {
  --itf.held;
  if (!itf.waiting.empty()) {
    coro::Event* next = itf.waiting.front();
    itf.waiting.pop_front();
    ++itf.reserved;
    loop_->complete(*next);
  }
}

void Router::egress_body(coro::Context& ctx) {
  auto& itf = ctx.args_as<Interface>();
  Router& r = *itf.router;
  NP_CO_BEGIN(ctx);
  for (;;) {
    while (itf.queue.empty()) {
      itf.work.reset();
      NP_CO_WAIT(ctx, itf.work);
    }
    itf.current = itf.queue.front();
    itf.queue.pop_front();
    ++itf.held;
    ++itf.staged;
    if (r.config_.mode == RouterMode::Baseline) {
      // The original stack copies the payload into a TX buffer first.
      ++itf.current->copy_count;
      ++r.stats_.payload_copies;
      if (r.config_.copy_ns_per_byte > 0) {
        itf.copied.reset();
        r.loop_->arm_timer(
            r.loop_->now() + static_cast<Micros>(std::ceil(
                                 r.config_.copy_ns_per_byte * static_cast<double>(itf.current->payload.size()) / 1000.0)),
            itf.copied);
        NP_CO_WAIT(ctx, itf.copied);
      }
    }
    --itf.staged;
    ++itf.on_wire;
    itf.sent.reset();
    itf.link->send_async(itf.current->wire_size(), &itf.sent, nullptr, {}, itf.current->frame,
                         [&itf, pkt = *itf.current](const vnode::Delivery& d) mutable {
                           timestamp_ingress(itf.link->rx_loop(), pkt, d.first_byte);
                           --itf.on_wire;
                           ++itf.router->stats_.delivered;
                           if (itf.sink) itf.sink(pkt, d);
                           itf.router->notify();
                         });
    r.notify();
    NP_CO_WAIT(ctx, itf.sent);
    itf.current.reset();
    r.release_slot(itf);
    r.notify();
  }
  NP_CO_END(ctx);
}

}  // namespace nanopipe::cpx
