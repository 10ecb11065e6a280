#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace nanopipe {

using Micros = std::int64_t;

enum class TraceKind : std::uint8_t {
  Spawn,
  Suspend,
  Resume,
  EventComplete,
  StageStart,
  StageEnd,
  LinkTxStart,
  LinkRxEnd,
  Drop,
  QueueFull,
};

std::string_view to_string(TraceKind kind);
TraceKind trace_kind_from_string(std::string_view name);

/// One timestamped record. `t` is the recording node's local clock.
struct TraceEvent {
  Micros t = 0;
  std::string node;
  TraceKind kind = TraceKind::Spawn;
  std::string subject;
  std::int64_t frame = -1;

  bool operator==(const TraceEvent&) const = default;
};

inline constexpr std::string_view kTraceCsvHeader = "t_us,node,kind,subject,frame";

class Trace {
 public:
  void add(TraceEvent ev) { events_.push_back(std::move(ev)); }
  void add(Micros t, std::string_view node, TraceKind kind, std::string_view subject,
           std::int64_t frame = -1) {
    events_.push_back(TraceEvent{t, std::string(node), kind, std::string(subject), frame});
  }

  const std::vector<TraceEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  void clear() { events_.clear(); }

  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
  /// Throws ConfigError on a bad header or malformed row.
  static Trace from_csv(std::istream& in);

  bool operator==(const Trace&) const = default;

 private:
  std::vector<TraceEvent> events_;
};

}  // namespace nanopipe
