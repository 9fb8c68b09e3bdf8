#pragma once

// Shared primitives: error types, deterministic RNG with named sub-seeds,
// and small numeric helpers used across the library.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pami {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad key, out-of-range value).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Malformed input to a pure function (shape mismatch, bad token, bad simplex).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value or divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// No well-posed item could be produced for the request; callers resample.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// The requested augmentation cannot be realized for this clip.
class AugmentationUnavailable : public Error {
 public:
  using Error::Error;
};

/// API misuse (for example backpropagating from a foreign node).
class UsageError : public Error {
 public:
  using Error::Error;
};

// splitmix64 finalizer; used for seed derivation.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named sub-seed derivation: derive_seed(root, "augment", epoch, example).
/// Every random stream in the pipeline is reachable from one root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  return mix64(root ^ fnv1a(name));
}

template <typename... Ints>
std::uint64_t derive_seed(std::uint64_t root, std::string_view name, Ints... ids) {
  std::uint64_t h = derive_seed(root, name);
  ((h = mix64(h ^ static_cast<std::uint64_t>(ids))), ...);
  return h;
}

/// xoshiro256** seeded through splitmix64. Draw helpers are implemented here
/// rather than through <random> distributions so that streams are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) {
      throw UsageError("Rng::below called with n = 0");
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = next();
    while (r >= limit) {
      r = next();
    }
    return r % n;
  }

  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4]{};
};

inline constexpr double kLn2 = 0.69314718055994530942;

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  if (x > 0.0) {
    return x + std::log1p(std::exp(-x));
  }
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) {
    m = std::max(m, x);
  }
  double s = 0.0;
  for (double x : xs) {
    s += std::exp(x - m);
  }
  return m + std::log(s);
}

/// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> xs) {
  std::vector<double> out(xs.size());
  if (xs.empty()) {
    return out;
  }
  double m = xs[0];
  for (double x : xs) {
    m = std::max(m, x);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - m);
    s += out[i];
  }
  for (double& o : out) {
    o /= s;
  }
  return out;
}

inline std::vector<double> log_softmax(std::span<const double> xs) {
  const double lse = log_sum_exp(xs);
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = xs[i] - lse;
  }
  return out;
}

inline bool all_finite(std::span<const double> xs) noexcept {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

}  // namespace pami
