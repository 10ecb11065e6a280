#pragma once

#include <stdexcept>
#include <string>

namespace nanopipe {

/// Invalid scenario, registry lookup or topology.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse detected at runtime (double complete, double release, illegal
/// state transition, waiting outside a coroutine).
class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed wire bytes.
class DecodeError : public std::runtime_error {
 public:
  explicit DecodeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nanopipe
