#include "nanopipe/coro.hpp"

#include <algorithm>
#include <thread>

#include "nanopipe/errors.hpp"

namespace nanopipe::coro {

std::string_view to_string(State state) {
  switch (state) {
    case State::Start: return "Start";
    case State::Running: return "Running";
    case State::Suspended: return "Suspended";
    case State::Ended: return "Ended";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Registry

Registry& Registry::global() {
  static Registry registry;
  return registry;
}

CoroutineId Registry::add(std::string_view name, Body body) {
  if (body == nullptr) throw ConfigError("coroutine '" + std::string(name) + "' has no body");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].body == body) return static_cast<CoroutineId>(i + 1);
  }
  if (entries_.size() + 1 >= kEndedPoint) throw ConfigError("coroutine registry full");
  entries_.push_back(Entry{std::string(name), body});
  return static_cast<CoroutineId>(entries_.size());
}

bool Registry::contains(CoroutineId id) const { return id >= 1 && id <= entries_.size(); }

Body Registry::body(CoroutineId id) const {
  if (!contains(id)) throw ConfigError("unknown coroutine id " + std::to_string(id));
  return entries_[id - 1].body;
}

const std::string& Registry::name(CoroutineId id) const {
  if (!contains(id)) throw ConfigError("unknown coroutine id " + std::to_string(id));
  return entries_[id - 1].name;
}

std::optional<CoroutineId> Registry::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return static_cast<CoroutineId>(i + 1);
  }
  return std::nullopt;
}

CoroutineId register_coroutine(std::string_view name, Body body) {
  return Registry::global().add(name, body);
}

// ---------------------------------------------------------------------------
// Context

Context Context::init(CoroutineId id, void* args) {
  return Context(id, Registry::global().body(id), args);
}

bool Context::is_legal_transition(State from, State to) {
  switch (from) {
    case State::Start: return to == State::Running;
    case State::Running: return to == State::Suspended || to == State::Ended;
    case State::Suspended: return to == State::Running;
    case State::Ended: return false;
  }
  return false;
}

void Context::transition(State to) {
  if (!is_legal_transition(state_, to)) {
    throw UsageError("illegal coroutine transition " + std::string(coro::to_string(state_)) +
                     " -> " + std::string(coro::to_string(to)));
  }
  state_ = to;
  if (to == State::Ended) resume_point_ = kEndedPoint;
}

bool Context::suspend_on(Event& ev, ResumePoint point) {
  if (state_ != State::Running || loop_ == nullptr || loop_->current_ != this) {
    throw UsageError("wait outside a running coroutine");
  }
  if (ev.completed_) return false;
  resume_point_ = point;
  transition(State::Suspended);
  ev.push_waiter(this);
  ++loop_->stats_.suspensions;
  loop_->record_coroutine(TraceKind::Suspend, *this);
  return true;
}

void Context::yield_at(ResumePoint point) {
  if (state_ != State::Running || loop_ == nullptr || loop_->current_ != this) {
    throw UsageError("yield outside a running coroutine");
  }
  resume_point_ = point;
  transition(State::Suspended);
  ++loop_->stats_.suspensions;
  loop_->record_coroutine(TraceKind::Suspend, *this);
  loop_->enqueue(this);
}

void Context::finish() { transition(State::Ended); }

// ---------------------------------------------------------------------------
// Event

std::size_t Event::waiter_count() const {
  std::size_t n = 0;
  for (const Context* c = head_; c != nullptr; c = c->next_) ++n;
  return n;
}

void Event::reset() {
  if (head_ != nullptr) throw UsageError("reset of an event with pending waiters");
  completed_ = false;
}

void Event::push_waiter(Context* ctx) {
  ctx->next_ = nullptr;
  if (tail_ == nullptr) {
    head_ = tail_ = ctx;
  } else {
    tail_->next_ = ctx;
    tail_ = ctx;
  }
}

// ---------------------------------------------------------------------------
// VirtualClock

VirtualClock::VirtualClock(ClockMode mode) : mode_(mode), origin_(std::chrono::steady_clock::now()) {}

Micros VirtualClock::now() const {
  if (mode_ == ClockMode::RealTime) {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                                 origin_)
        .count();
  }
  return now_;
}

void VirtualClock::attach(EventLoop& loop) { loops_.push_back(&loop); }

void VirtualClock::detach(EventLoop& loop) { std::erase(loops_, &loop); }

void VirtualClock::arm(Micros deadline, Event& ev, EventLoop* owner) {
  timers_.push(Timer{std::max(deadline, now()), seq_++, &ev, owner, {}});
}

void VirtualClock::call_at(Micros deadline, std::function<void()> fn) {
  timers_.push(Timer{std::max(deadline, now()), seq_++, nullptr, nullptr, std::move(fn)});
}

void VirtualClock::run() { run_impl(std::nullopt); }

void VirtualClock::run_until(Micros until) { run_impl(until); }

bool VirtualClock::drain_ready() {
  bool any = false;
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t i = 0; i < loops_.size(); ++i) {
      if (loops_[i]->run_ready()) progress = any = true;
    }
  }
  return any;
}

void VirtualClock::advance_to(Micros t) {
  if (mode_ == ClockMode::RealTime) {
    std::this_thread::sleep_until(origin_ + std::chrono::microseconds(t));
    return;
  }
  now_ = std::max(now_, t);
}

void VirtualClock::fire_due() {
  const Micros t = now();
  while (!timers_.empty() && timers_.top().deadline <= t) {
    Timer timer = timers_.top();
    timers_.pop();
    if (timer.event != nullptr) {
      // Completion only touches the waiters' loops; the owner is used for tracing.
      EventLoop* loop = timer.owner != nullptr ? timer.owner : loops_.front();
      loop->complete(*timer.event);
    } else {
      timer.fn();
    }
  }
}

void VirtualClock::run_impl(std::optional<Micros> until) {
  for (;;) {
    drain_ready();
    fire_due();
    bool ready = false;
    for (auto* loop : loops_) ready = ready || loop->has_ready();
    if (ready) continue;
    if (timers_.empty()) break;
    const Micros next = timers_.top().deadline;
    if (until && next > *until) {
      advance_to(*until);
      return;
    }
    advance_to(next);
  }
  if (until) advance_to(*until);
}

// ---------------------------------------------------------------------------
// EventLoop

EventLoop::EventLoop(ClockMode mode) : own_clock_(std::in_place, mode), clock_(&*own_clock_) {
  clock_->attach(*this);
}

EventLoop::EventLoop(VirtualClock& clock, std::string node, Micros clock_offset)
    : clock_(&clock), node_(std::move(node)), offset_(clock_offset) {
  clock_->attach(*this);
}

EventLoop::~EventLoop() { clock_->detach(*this); }

void EventLoop::enqueue(Context* ctx) {
  ctx->next_ = nullptr;
  if (ready_tail_ == nullptr) {
    ready_head_ = ready_tail_ = ctx;
  } else {
    ready_tail_->next_ = ctx;
    ready_tail_ = ctx;
  }
}

void EventLoop::spawn(Context& ctx) {
  if (ctx.state_ != State::Start || ctx.loop_ != nullptr) {
    throw UsageError("spawn of a context that is not in Start state");
  }
  ctx.loop_ = this;
  ++stats_.spawns;
  record_coroutine(TraceKind::Spawn, ctx);
  enqueue(&ctx);
}

void EventLoop::complete(Event& ev) {
  if (ev.completed_) throw UsageError("event completed twice without reset");
  ev.completed_ = true;
  ++ev.completion_count_;
  ++stats_.completions;
  if (trace_ != nullptr && trace_coroutines_) record(TraceKind::EventComplete, ev.label_);
  Context* c = ev.head_;
  ev.head_ = ev.tail_ = nullptr;
  while (c != nullptr) {
    Context* next = c->next_;
    c->loop_->enqueue(c);
    c = next;
  }
}

Event& EventLoop::sleep_until(Micros deadline) {
  Event& ev = owned_events_.emplace_back("sleep");
  if (deadline <= now()) {
    complete(ev);
  } else {
    clock_->arm(deadline, ev, this);
  }
  return ev;
}

void EventLoop::arm_timer(Micros deadline, Event& ev) { clock_->arm(deadline, ev, this); }

void EventLoop::call_at(Micros deadline, std::function<void()> fn) {
  clock_->call_at(deadline, std::move(fn));
}

EventLoop::Join::Join(std::vector<Event*> in, Event& result)
    : inputs(std::move(in)),
      out(&result),
      ctx(Context::init(register_coroutine("join_all", &EventLoop::join_body), this)) {}

void EventLoop::join_body(Context& ctx) {
  auto& join = ctx.args_as<Join>();
  NP_CO_BEGIN(ctx);
  while (join.index < join.inputs.size()) {
    NP_CO_WAIT(ctx, *join.inputs[join.index]);
    ++join.index;
  }
  ctx.loop()->complete(*join.out);
  NP_CO_END(ctx);
}

Event& EventLoop::join_all(std::span<Event* const> events) {
  Event& out = owned_events_.emplace_back("join_all");
  const bool all_done =
      std::all_of(events.begin(), events.end(), [](const Event* e) { return e->completed(); });
  if (all_done) {
    complete(out);
    return out;
  }
  Join& join = joins_.emplace_back(std::vector<Event*>(events.begin(), events.end()), out);
  spawn(join.ctx);
  return out;
}

bool EventLoop::run_ready() {
  bool any = false;
  while (ready_head_ != nullptr) {
    Context* ctx = ready_head_;
    ready_head_ = ctx->next_;
    if (ready_head_ == nullptr) ready_tail_ = nullptr;
    ctx->next_ = nullptr;
    any = true;

    const bool resuming = ctx->state_ == State::Suspended;
    ctx->transition(State::Running);
    if (resuming) {
      ++stats_.resumes;
      record_coroutine(TraceKind::Resume, *ctx);
    }
    ++stats_.steps;
    current_ = ctx;
    ctx->body_(*ctx);
    current_ = nullptr;
    if (ctx->state_ == State::Running) {
      throw UsageError("coroutine body returned without suspending or ending");
    }
  }
  return any;
}

void EventLoop::record(TraceKind kind, std::string_view subject, std::int64_t frame) {
  if (trace_ != nullptr) trace_->add(local_now(), node_, kind, subject, frame);
}

void EventLoop::record_coroutine(TraceKind kind, const Context& ctx) {
  if (trace_ == nullptr || !trace_coroutines_) return;
  record(kind, Registry::global().name(ctx.id_));
}

}  // namespace nanopipe::coro
