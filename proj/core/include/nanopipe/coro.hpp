#pragma once

// Stackless cooperative coroutines over a single event loop.
//
// A coroutine body is a plain function `void body(coro::Context&)` delimited
// by NP_CO_BEGIN / NP_CO_END. Each NP_CO_WAIT or NP_CO_YIELD is a suspension
// point; its id is the source line, stored as a 16-bit resume point. Bodies
// share the caller's stack, so locals do not survive a suspension: anything
// that must persist lives behind the context's `args` pointer.
//
//   struct Job { coro::Event* a; coro::Event* b; int hits = 0; };
//
//   void join_two(coro::Context& ctx) {
//     auto& job = ctx.args_as<Job>();
//     NP_CO_BEGIN(ctx);
//     NP_CO_WAIT(ctx, *job.a);
//     NP_CO_WAIT(ctx, *job.b);
//     ++job.hits;
//     NP_CO_END(ctx);
//   }

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nanopipe/trace.hpp"

namespace nanopipe::coro {

using CoroutineId = std::uint16_t;
using ResumePoint = std::uint16_t;

inline constexpr ResumePoint kStartPoint = 0;
inline constexpr ResumePoint kEndedPoint = 0xFFFF;

enum class State : std::uint8_t { Start, Running, Suspended, Ended };

std::string_view to_string(State state);

class Context;
class Event;
class EventLoop;

using Body = void (*)(Context&);

/// Maps coroutine ids to bodies. Ids start at 1; registering the same body
/// twice returns the existing id.
class Registry {
 public:
  static Registry& global();

  CoroutineId add(std::string_view name, Body body);
  bool contains(CoroutineId id) const;
  Body body(CoroutineId id) const;
  const std::string& name(CoroutineId id) const;
  std::optional<CoroutineId> find(std::string_view name) const;

 private:
  struct Entry {
    std::string name;
    Body body;
  };
  std::vector<Entry> entries_;
};

/// Registers `body` in the global registry under `name`.
CoroutineId register_coroutine(std::string_view name, Body body);

/// Execution context of one coroutine instance.
///
/// Contexts are linked intrusively into either a loop's ready list or an
/// event's waiter list, never both, so they are pinned in memory.
class Context {
 public:
  /// A fresh context in Start state. Throws ConfigError for an unknown id.
  static Context init(CoroutineId id, void* args = nullptr);

  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  State state() const { return state_; }
  ResumePoint resume_point() const { return resume_point_; }
  CoroutineId coroutine_id() const { return id_; }
  EventLoop* loop() const { return loop_; }
  void* args() const { return args_; }
  template <typename T>
  T& args_as() const {
    return *static_cast<T*>(args_);
  }

  /// Applies a state-machine transition; throws UsageError if illegal.
  void transition(State to);
  static bool is_legal_transition(State from, State to);

  // Primitives behind the NP_CO_* macros.
  bool suspend_on(Event& ev, ResumePoint point);
  void yield_at(ResumePoint point);
  void finish();

 private:
  friend class EventLoop;
  friend class Event;

  Context(CoroutineId id, Body body, void* args) : body_(body), args_(args), id_(id) {}

  Context* next_ = nullptr;  // resume task link: ready list or waiter list
  EventLoop* loop_ = nullptr;
  Body body_ = nullptr;
  void* args_ = nullptr;
  ResumePoint resume_point_ = kStartPoint;
  CoroutineId id_ = 0;
  State state_ = State::Start;
};

/// Owning wrapper that lets a context live in containers and optionals.
struct Task {
  explicit Task(CoroutineId id, void* args = nullptr) : ctx(Context::init(id, args)) {}
  Context ctx;
};

/// Runtime bookkeeping of a context, everything except the user args pointer.
inline constexpr std::size_t kContextBookkeepingBytes = sizeof(Context) - sizeof(void*);

/// Completion flag plus FIFO waiter list. Completing wakes every registered
/// waiter exactly once, in registration order. Completing twice without a
/// reset is a UsageError.
class Event {
 public:
  Event() = default;
  explicit Event(std::string_view label) : label_(label) {}
  Event(const Event&) = delete;
  Event& operator=(const Event&) = delete;

  bool completed() const { return completed_; }
  std::uint32_t completion_count() const { return completion_count_; }
  std::size_t waiter_count() const;
  std::string_view label() const { return label_; }

  /// Re-arms a completed event. Throws UsageError if waiters are pending.
  void reset();

 private:
  friend class Context;
  friend class EventLoop;

  void push_waiter(Context* ctx);

  Context* head_ = nullptr;
  Context* tail_ = nullptr;
  std::string_view label_ = "event";
  bool completed_ = false;
  std::uint32_t completion_count_ = 0;
};

enum class ClockMode : std::uint8_t { VirtualTime, RealTime };

/// Time base and timer queue shared by every loop attached to it. In virtual
/// mode time only advances when all attached ready lists are empty.
class VirtualClock {
 public:
  explicit VirtualClock(ClockMode mode = ClockMode::VirtualTime);
  VirtualClock(const VirtualClock&) = delete;
  VirtualClock& operator=(const VirtualClock&) = delete;

  ClockMode mode() const { return mode_; }
  Micros now() const;

  void attach(EventLoop& loop);
  void detach(EventLoop& loop);

  void arm(Micros deadline, Event& ev, EventLoop* owner = nullptr);
  void call_at(Micros deadline, std::function<void()> fn);
  std::size_t pending_timers() const { return timers_.size(); }

  /// Runs until no ready task and no timer remain.
  void run();
  /// Runs until idle or until the next timer lies beyond `until`; `now` is
  /// then advanced to `until`.
  void run_until(Micros until);

 private:
  struct Timer {
    Micros deadline;
    std::uint64_t seq;
    Event* event;
    EventLoop* owner;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Timer& a, const Timer& b) const {
      return a.deadline != b.deadline ? a.deadline > b.deadline : a.seq > b.seq;
    }
  };

  void run_impl(std::optional<Micros> until);
  bool drain_ready();
  void fire_due();
  void advance_to(Micros t);

  ClockMode mode_;
  Micros now_ = 0;
  std::chrono::steady_clock::time_point origin_;
  std::uint64_t seq_ = 0;
  std::priority_queue<Timer, std::vector<Timer>, Later> timers_;
  std::vector<EventLoop*> loops_;
};

struct LoopStats {
  std::uint64_t steps = 0;        // body invocations
  std::uint64_t spawns = 0;
  std::uint64_t suspensions = 0;  // waits that actually suspended, plus yields
  std::uint64_t resumes = 0;
  std::uint64_t completions = 0;
};

/// FIFO ready list of runnable contexts for one node. A loop either owns its
/// clock (standalone) or shares one with sibling loops.
class EventLoop {
 public:
  explicit EventLoop(ClockMode mode = ClockMode::VirtualTime);
  EventLoop(VirtualClock& clock, std::string node, Micros clock_offset = 0);
  ~EventLoop();
  EventLoop(const EventLoop&) = delete;
  EventLoop& operator=(const EventLoop&) = delete;

  VirtualClock& clock() { return *clock_; }
  const std::string& node() const { return node_; }
  Micros clock_offset() const { return offset_; }
  /// Global virtual time.
  Micros now() const { return clock_->now(); }
  /// This node's local clock (global time plus the configured offset).
  Micros local_now() const { return clock_->now() + offset_; }

  void spawn(Context& ctx);
  void complete(Event& ev);

  /// Loop-owned event completing at `deadline` (immediately if in the past).
  Event& sleep_until(Micros deadline);
  void arm_timer(Micros deadline, Event& ev);
  void call_at(Micros deadline, std::function<void()> fn);

  /// Loop-owned event completing once every input has completed.
  /// An empty list yields an already-completed event.
  Event& join_all(std::span<Event* const> events);

  void run() { clock_->run(); }
  void run_until(Micros t) { clock_->run_until(t); }
  /// Runs every ready context, including ones made ready meanwhile.
  /// Returns true if anything ran.
  bool run_ready();

  bool has_ready() const { return ready_head_ != nullptr; }
  Context* current() const { return current_; }
  const LoopStats& stats() const { return stats_; }

  void set_trace(Trace* trace, bool coroutine_events = true) {
    trace_ = trace;
    trace_coroutines_ = coroutine_events;
  }
  Trace* trace() const { return trace_; }
  void record(TraceKind kind, std::string_view subject, std::int64_t frame = -1);

 private:
  friend class Context;

  struct Join {
    Join(std::vector<Event*> in, Event& result);
    std::vector<Event*> inputs;
    std::size_t index = 0;
    Event* out;
    Context ctx;
  };
  static void join_body(Context& ctx);

  void enqueue(Context* ctx);
  void record_coroutine(TraceKind kind, const Context& ctx);

  std::optional<VirtualClock> own_clock_;
  VirtualClock* clock_;
  std::string node_;
  Micros offset_ = 0;
  Context* ready_head_ = nullptr;
  Context* ready_tail_ = nullptr;
  Context* current_ = nullptr;
  LoopStats stats_;
  Trace* trace_ = nullptr;
  bool trace_coroutines_ = false;
  std::deque<Event> owned_events_;
  std::deque<Join> joins_;
};

}  // namespace nanopipe::coro

#define NP_CO_BEGIN(ctx)                    \
  switch ((ctx).resume_point()) {           \
    case ::nanopipe::coro::kStartPoint:

#define NP_CO_WAIT(ctx, ev)                                  \
  do {                                                       \
    if ((ctx).suspend_on((ev), __LINE__)) return;            \
    [[fallthrough]];                                         \
    case __LINE__:;                                          \
  } while (0)

#define NP_CO_YIELD(ctx)          \
  do {                            \
    (ctx).yield_at(__LINE__);     \
    return;                       \
    case __LINE__:;               \
  } while (0)

#define NP_CO_END(ctx) \
  default:;            \
  }                    \
  (ctx).finish()
