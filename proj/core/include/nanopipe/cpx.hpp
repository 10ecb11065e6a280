#pragma once

// CPX-compatible packet layer.
//
// Wire frame:
//   length   u16 LE   route + function + payload byte count
//   route    u8       destination[7:5] source[4:2] last_fragment[1] reserved[0]
//   function u8       version[7:6] function[5:0]
//   payload  0..1022 B

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nanopipe/buffer.hpp"
#include "nanopipe/coro.hpp"
#include "nanopipe/vnode.hpp"

namespace nanopipe::cpx {

enum class NodeId : std::uint8_t { Stm32 = 1, Esp32 = 2, Host = 3, Gap8 = 4, Nrf51 = 5 };

std::string_view node_name(NodeId id);
/// Inverse of node_name; throws ConfigError for names without an id.
NodeId node_id(std::string_view name);

inline constexpr std::uint8_t kFunctionAppStream = 5;
inline constexpr std::size_t kHeaderBytes = 4;
inline constexpr std::size_t kMaxPayload = 1022;
inline constexpr std::size_t kMaxFrame = kHeaderBytes + kMaxPayload;

struct CpxPacket {
  NodeId source = NodeId::Gap8;
  NodeId destination = NodeId::Host;
  bool last_fragment = true;
  std::uint8_t function = kFunctionAppStream;
  std::uint8_t version = 0;
  std::span<const std::uint8_t> payload;  // view; never owns bytes
  const pipeline::FrameBuffer* owner = nullptr;
  std::int64_t frame = -1;
  Micros ingress_ts = 0;
  std::uint64_t copy_count = 0;

  std::size_t wire_size() const { return kHeaderBytes + payload.size(); }
  bool same_header(const CpxPacket& o) const {
    return source == o.source && destination == o.destination &&
           last_fragment == o.last_fragment && function == o.function && version == o.version;
  }
};

/// Header bytes for a frame carrying `payload_len` bytes. Throws UsageError
/// for oversize payloads or fields wider than their bit slots.
std::array<std::uint8_t, kHeaderBytes> encode_header(const CpxPacket& pkt, std::size_t payload_len);
/// Full wire frame (header + payload copy).
std::vector<std::uint8_t> encode(const CpxPacket& pkt);
/// Parses one frame; the payload views into `wire`. Throws DecodeError on a
/// short frame, a length field that disagrees with the frame size, or a set
/// reserved bit.
CpxPacket decode(std::span<const std::uint8_t> wire);

inline std::size_t fragment_count(std::size_t bytes) {
  return bytes == 0 ? 1 : (bytes + kMaxPayload - 1) / kMaxPayload;
}
/// Splits `payload` into <= 1022 B fragments that view into it; only the
/// final fragment has last_fragment set.
std::vector<CpxPacket> fragment(NodeId src, NodeId dst, std::uint8_t function,
                                std::span<const std::uint8_t> payload,
                                const pipeline::FrameBuffer* owner = nullptr, std::int64_t frame = -1);

/// Stamps `pkt` with `node`'s local clock at the global time `first_byte`.
/// A later hop overwrites the earlier stamp.
void timestamp_ingress(const coro::EventLoop& node, CpxPacket& pkt, Micros first_byte);
inline void timestamp_ingress(const coro::EventLoop& node, CpxPacket& pkt) {
  timestamp_ingress(node, pkt, node.now());
}

/// Two-way exchange over a->b and b->a:
///   offset = ((t2 - t1) + (t3 - t4)) / 2, averaged over `rounds`.
/// Drives the graph clock until the exchange finishes, so call it on an idle
/// graph. Returns clock(b) - clock(a). Asymmetric link delays bias the
/// estimate by half the difference.
double estimate_clock_offset(vnode::NodeGraph& graph, const std::string& a, const std::string& b,
                             std::uint32_t rounds = 8, std::size_t probe_bytes = 16);

enum class RouterMode : std::uint8_t { ZeroCopy, Baseline };

std::string_view to_string(RouterMode mode);
/// "zerocopy" | "baseline"; throws ConfigError otherwise.
RouterMode parse_router_mode(std::string_view text);

struct RouterConfig {
  RouterMode mode = RouterMode::ZeroCopy;
  std::size_t queue_capacity = 4;  // packets per output interface
  double copy_ns_per_byte = 0.0;   // baseline only: payload copy into the TX buffer
};

struct RouterStats {
  std::uint64_t enqueued = 0;
  std::uint64_t delivered = 0;
  std::uint64_t unknown_destination = 0;
  std::uint64_t payload_copies = 0;
  std::uint64_t credit_waits = 0;  // senders suspended on a full queue
  std::size_t max_occupancy = 0;
};

/// Multi-buffer router (the ESP32 role). Each output interface owns a
/// bounded FIFO of packet handles and a forwarding coroutine draining it
/// onto its egress link. Senders take a credit before transmitting towards
/// the router and are suspended, never dropped, while none is available.
/// A slot is freed once the egress link has sent the packet's last byte.
///
/// Baseline mode models the original stack: one slot per interface, and the
/// payload is copied into a TX buffer before sending.
class Router {
 public:
  using Sink = std::function<void(const CpxPacket&, const vnode::Delivery&)>;
  using Observer = std::function<void(const Router&)>;

  Router(coro::EventLoop& loop, RouterConfig config);
  Router(const Router&) = delete;
  Router& operator=(const Router&) = delete;

  /// Packets to `dest` leave on `egress`; `sink` sees each one on arrival.
  void add_interface(NodeId dest, vnode::Link& egress, Sink sink = {});
  bool has_interface(NodeId dest) const { return interfaces_.count(dest) != 0; }

  /// Reserves one slot towards `dest`; `granted` completes once reserved.
  /// Unknown destinations are granted at once (they end in the error sink).
  void acquire_credit_async(NodeId dest, coro::Event& granted);
  /// Enqueues a packet that holds a credit. Never copies the payload.
  void forward(const CpxPacket& pkt);

  const RouterConfig& config() const { return config_; }
  std::size_t capacity() const { return capacity_; }
  const RouterStats& stats() const { return stats_; }
  /// Queued plus transmitting packets on one interface.
  std::size_t occupancy(NodeId dest) const;
  /// Credits reserved but not yet used by forward().
  std::size_t reserved(NodeId dest) const;
  std::size_t pending_credits(NodeId dest) const;
  /// Packets accepted but not delivered: queued, transmitting or on the wire.
  std::uint64_t in_flight() const;

  /// Called after every change of queue state.
  void set_observer(Observer obs) { observer_ = std::move(obs); }

 private:
  struct Interface {
    Interface(Router& r, NodeId d, vnode::Link& l, Sink s);
    Router* router;
    NodeId dest;
    vnode::Link* link;
    Sink sink;
    std::deque<CpxPacket> queue;
    std::deque<coro::Event*> waiting;
    std::size_t reserved = 0;  // credits granted, packet not yet forwarded
    std::size_t held = 0;      // slots of packets popped but not yet sent
    std::size_t staged = 0;    // popped, not yet handed to the link
    std::uint64_t on_wire = 0;
    std::optional<CpxPacket> current;
    coro::Event work{"router_work"};
    coro::Event copied{"router_copy"};
    coro::Event sent{"router_sent"};
    coro::Task task;
  };
  static void egress_body(coro::Context& ctx);
  void release_slot(Interface& itf);
  void notify() const {
    if (observer_) observer_(*this);
  }

  coro::EventLoop* loop_;
  RouterConfig config_;
  std::size_t capacity_;
  std::map<NodeId, std::unique_ptr<Interface>> interfaces_;
  RouterStats stats_;
  Observer observer_;
};

}  // namespace nanopipe::cpx
