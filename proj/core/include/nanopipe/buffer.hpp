#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "nanopipe/coro.hpp"

namespace nanopipe::pipeline {

enum class BufferState : std::uint8_t { Free, Filling, Ready, InUse };

std::string_view to_string(BufferState state);

/// One reusable image buffer. Lifecycle: Free -> Filling -> Ready -> InUse(n) -> Free.
class FrameBuffer {
 public:
  FrameBuffer(std::uint32_t id, std::size_t capacity) : id_(id), data_(capacity) {}

  std::uint32_t id() const { return id_; }
  std::size_t capacity() const { return data_.size(); }
  BufferState state() const { return state_; }
  std::uint32_t in_use() const { return in_use_; }
  std::int64_t sequence() const { return sequence_; }
  std::uint64_t copy_count() const { return copy_count_; }

  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  /// Producer writes `src` at `offset`; counts as one payload copy.
  void fill(std::span<const std::uint8_t> src, std::size_t offset = 0);
  /// Producer fill without payload bytes (timing-only simulations); still one copy.
  void mark_filled() { ++copy_count_; }
  void set_sequence(std::int64_t seq) { sequence_ = seq; }

 private:
  friend class BufferPool;

  std::uint32_t id_;
  std::vector<std::uint8_t> data_;
  BufferState state_ = BufferState::Free;
  std::uint32_t in_use_ = 0;
  std::int64_t sequence_ = -1;
  std::uint64_t copy_count_ = 0;
};

/// Fixed set of N buffers. Acquisition suspends when none is Free; the pool
/// never allocates after construction. Waiting acquirers are served FIFO.
class BufferPool {
 public:
  /// Throws ConfigError when n == 0.
  BufferPool(coro::EventLoop& loop, std::size_t n, std::size_t capacity);
  BufferPool(const BufferPool&) = delete;
  BufferPool& operator=(const BufferPool&) = delete;

  std::size_t size() const { return buffers_.size(); }
  std::size_t buffer_capacity() const { return capacity_; }
  std::size_t total_bytes() const { return buffers_.size() * capacity_; }
  std::size_t free_count() const;
  FrameBuffer& at(std::size_t i) { return buffers_.at(i); }
  const FrameBuffer& at(std::size_t i) const { return buffers_.at(i); }

  /// Free -> Filling without waiting; nullptr if nothing is Free.
  FrameBuffer* try_acquire();
  /// Stores a Filling buffer into `*out` and completes `done`, immediately if
  /// one is Free, otherwise as soon as one is released.
  void acquire_async(FrameBuffer** out, coro::Event& done);
  std::size_t pending_acquires() const { return pending_.size(); }

  /// Free -> Filling for a specific buffer; throws UsageError otherwise.
  void begin_fill(FrameBuffer& buf);
  /// Filling -> Ready.
  void publish(FrameBuffer& buf);
  /// Registers `consumers` holders: Ready/InUse -> InUse(count + consumers).
  void claim(FrameBuffer& buf, std::uint32_t consumers = 1);
  /// One holder is done. InUse(1) -> Free. Double release is a UsageError.
  void release(FrameBuffer& buf);
  /// Filling -> Free, for a fill that was abandoned.
  void discard(FrameBuffer& buf);

 private:
  struct Pending {
    FrameBuffer** out;
    coro::Event* done;
  };
  void make_free(FrameBuffer& buf);
  FrameBuffer& own(FrameBuffer& buf);

  coro::EventLoop* loop_;
  std::size_t capacity_;
  std::deque<FrameBuffer> buffers_;
  std::deque<Pending> pending_;
};

}  // namespace nanopipe::pipeline
