#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace shunted {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape/dimension mismatch between operands.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid configuration (bad preset, non-divisible rates, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Out-of-range index (e.g. a class label >= num_classes).
class IndexError : public Error {
 public:
  explicit IndexError(const std::string& msg) : Error(msg) {}
};

/// File format / serialization error. Carries the byte offset at which
/// parsing failed.
class IOError : public Error {
 public:
  IOError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Non-finite value detected while finite checks are enabled.
class NumericsError : public Error {
 public:
  explicit NumericsError(const std::string& msg) : Error(msg) {}
};

inline std::string shape_to_string(const std::vector<long>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Debug toggles
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<bool>& finite_checks_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{1};
  return n;
}
}  // namespace detail

/// Enable/disable NaN/Inf detection after every kernel. Off by default.
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }
inline bool finite_checks_enabled() { return detail::finite_checks_flag(); }

/// Keeps large freed buffers on the heap free-list instead of returning them
/// to the OS; the tape reallocates same-sized tensors every step, so this
/// removes most page-fault overhead. Call once from main(). No effect on
/// results.
void tune_allocator_for_training();

/// Worker-thread count for the optional parallel batch map. 1 = fully
/// deterministic single-threaded execution (the default).
inline void set_num_threads(int n) { detail::thread_count() = n < 1 ? 1 : n; }
inline int num_threads() { return detail::thread_count(); }

/// Runs fn(i) for i in [0, n). With more than one thread the index range is
/// split into contiguous chunks; callers must guarantee disjoint writes per
/// index. Every numeric call sees the same operands either way, so results
/// are bitwise identical to the serial order.
template <class F>
void parallel_for(long n, F&& fn) {
  int nt = num_threads();
  if (nt <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  if (nt > n) nt = static_cast<int>(n);
  std::vector<std::thread> workers;
  workers.reserve(nt);
  long chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    long lo = t * chunk;
    long hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &fn] {
      for (long i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

/// splitmix64 step; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named sub-stream (train/test split, per-image, per-epoch).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Deterministic random source. The generator is std::mt19937_64 (a fixed
/// algorithm in the standard); the uniform and normal mappings below are
/// spelled out here rather than delegated to distribution classes, so the
/// whole stream is pinned down by this file.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0,1): top 53 bits scaled by 2^-53.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, rejection-sampled (no modulo bias).
  long uniform_int(long lo, long hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return lo + static_cast<long>(x % span);
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal(0, stddev) resampled until |x| <= bound (used for weight init).
  double truncated_normal(double stddev, double bound) {
    double x;
    do {
      x = stddev * normal();
    } while (std::abs(x) > bound);
    return x;
  }

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace shunted
