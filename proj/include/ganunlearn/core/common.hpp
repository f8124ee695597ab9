#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gu {

// Runtime scalar for training and evaluation. Test suites that compare
// analytic gradients against finite differences instantiate the templated
// numeric core with double instead; both types share all code paths.
using real = float;

// Image side used by the whole toy world. Every module assumes square
// 64x64 RGB images in [0,1]; other sizes are out of scope.
inline constexpr int kImageSide = 64;

// Error taxonomy. The CLI maps these onto process exit codes:
//   ConfigError -> 2, MissingDependencyError -> 3, NumericError -> 4.
// Everything else is a plain bug and may propagate as std::logic_error.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct MissingDependencyError : std::runtime_error {
  explicit MissingDependencyError(const std::string& m) : std::runtime_error(m) {}
};

// FNV-1a, used for config hashing and seed splitting. Stable across
// platforms; do not change the constants, checkpoints record the hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace gu
