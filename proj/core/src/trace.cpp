#include "nanopipe/trace.hpp"

#include <array>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "nanopipe/errors.hpp"

namespace nanopipe {
namespace {

constexpr std::array<std::string_view, 10> kKindNames = {
    "Spawn",    "Suspend",  "Resume",      "EventComplete", "StageStart",
    "StageEnd", "LinkTxStart", "LinkRxEnd", "Drop",          "QueueFull",
};

template <typename T>
T parse_int(std::string_view field, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ConfigError("trace csv line " + std::to_string(line_no) + ": bad integer '" +
                      std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(TraceKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

TraceKind trace_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<TraceKind>(i);
  }
  throw ConfigError("unknown trace kind '" + std::string(name) + "'");
}

void Trace::write_csv(std::ostream& out) const {
  out << kTraceCsvHeader << '\n';
  for (const auto& ev : events_) {
    out << ev.t << ',' << ev.node << ',' << to_string(ev.kind) << ',' << ev.subject << ','
        << ev.frame << '\n';
  }
}

std::string Trace::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

Trace Trace::from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceCsvHeader) {
    throw ConfigError("trace csv: missing or unexpected header");
  }
  Trace trace;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<std::string_view, 5> fields;
    std::string_view rest = line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      auto comma = rest.find(',');
      if (i + 1 < fields.size()) {
        if (comma == std::string_view::npos) {
          throw ConfigError("trace csv line " + std::to_string(line_no) + ": too few fields");
        }
        fields[i] = rest.substr(0, comma);
        rest.remove_prefix(comma + 1);
      } else {
        if (comma != std::string_view::npos) {
          throw ConfigError("trace csv line " + std::to_string(line_no) + ": too many fields");
        }
        fields[i] = rest;
      }
    }
    trace.add(TraceEvent{parse_int<Micros>(fields[0], line_no), std::string(fields[1]),
                         trace_kind_from_string(fields[2]), std::string(fields[3]),
                         parse_int<std::int64_t>(fields[4], line_no)});
  }
  return trace;
}

}  // namespace nanopipe
