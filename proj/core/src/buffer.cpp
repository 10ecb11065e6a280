#include "nanopipe/buffer.hpp"

#include <algorithm>
#include <string>

#include "nanopipe/errors.hpp"

namespace nanopipe::pipeline {

std::string_view to_string(BufferState state) {
  switch (state) {
    case BufferState::Free: return "Free";
    case BufferState::Filling: return "Filling";
    case BufferState::Ready: return "Ready";
    case BufferState::InUse: return "InUse";
  }
  return "?";
}

void FrameBuffer::fill(std::span<const std::uint8_t> src, std::size_t offset) {
  if (offset + src.size() > data_.size()) throw UsageError("fill past buffer capacity");
  std::copy(src.begin(), src.end(), data_.begin() + static_cast<std::ptrdiff_t>(offset));
  ++copy_count_;
}

BufferPool::BufferPool(coro::EventLoop& loop, std::size_t n, std::size_t capacity)
    : loop_(&loop), capacity_(capacity) {
  if (n == 0) throw ConfigError("buffer pool needs at least one buffer");
  for (std::size_t i = 0; i < n; ++i) buffers_.emplace_back(static_cast<std::uint32_t>(i), capacity);
}

std::size_t BufferPool::free_count() const {
  return static_cast<std::size_t>(std::count_if(
      buffers_.begin(), buffers_.end(), [](const FrameBuffer& b) { return b.state_ == BufferState::Free; }));
}

FrameBuffer& BufferPool::own(FrameBuffer& buf) {
  if (buf.id_ >= buffers_.size() || &buffers_[buf.id_] != &buf) {
    throw UsageError("buffer does not belong to this pool");
  }
  return buf;
}

FrameBuffer* BufferPool::try_acquire() {
  for (auto& b : buffers_) {
    if (b.state_ == BufferState::Free) {
      b.state_ = BufferState::Filling;
      return &b;
    }
  }
  return nullptr;
}

void BufferPool::acquire_async(FrameBuffer** out, coro::Event& done) {
  if (pending_.empty()) {
    if (FrameBuffer* b = try_acquire()) {
      *out = b;
      loop_->complete(done);
      return;
    }
  }
  pending_.push_back(Pending{out, &done});
}

void BufferPool::begin_fill(FrameBuffer& buf) {
  if (own(buf).state_ != BufferState::Free) {
    throw UsageError("fill of a buffer in state " + std::string(to_string(buf.state_)));
  }
  buf.state_ = BufferState::Filling;
}

void BufferPool::publish(FrameBuffer& buf) {
  if (own(buf).state_ != BufferState::Filling) {
    throw UsageError("publish of a buffer in state " + std::string(to_string(buf.state_)));
  }
  buf.state_ = BufferState::Ready;
}

void BufferPool::claim(FrameBuffer& buf, std::uint32_t consumers) {
  own(buf);
  if (consumers == 0) throw UsageError("claim of zero consumers");
  if (buf.state_ != BufferState::Ready && buf.state_ != BufferState::InUse) {
    throw UsageError("claim of a buffer in state " + std::string(to_string(buf.state_)));
  }
  buf.state_ = BufferState::InUse;
  buf.in_use_ += consumers;
}

void BufferPool::release(FrameBuffer& buf) {
  if (own(buf).state_ != BufferState::InUse || buf.in_use_ == 0) {
    throw UsageError("release of a buffer in state " + std::string(to_string(buf.state_)));
  }
  if (--buf.in_use_ == 0) make_free(buf);
}

void BufferPool::discard(FrameBuffer& buf) {
  if (own(buf).state_ != BufferState::Filling) {
    throw UsageError("discard of a buffer in state " + std::string(to_string(buf.state_)));
  }
  make_free(buf);
}

void BufferPool::make_free(FrameBuffer& buf) {
  buf.state_ = BufferState::Free;
  if (!pending_.empty()) {
    Pending p = pending_.front();
    pending_.pop_front();
    buf.state_ = BufferState::Filling;
    *p.out = &buf;
    loop_->complete(*p.done);
  }
}

}  // namespace nanopipe::pipeline
