#pragma once

#include <Eigen/Core>

#include <cstdlib>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "shunted/common.hpp"

namespace shunted {

template <class Scalar>
using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MapMat = Eigen::Map<MatRM<Scalar>>;
template <class Scalar>
using CMapMat = Eigen::Map<const MatRM<Scalar>>;
template <class Scalar>
using MapVec = Eigen::Map<VecX<Scalar>>;
template <class Scalar>
using CMapVec = Eigen::Map<const VecX<Scalar>>;
template <class Scalar>
using MapArr = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <class Scalar>
using CMapArr = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

/// 64-byte-aligned allocator. Keeping every buffer at one fixed alignment
/// pins down the SIMD loop peeling inside Eigen reductions, which keeps
/// results bitwise reproducible run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    void* p = nullptr;
    if (posix_memalign(&p, alignment, n * sizeof(T)) != 0) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
  template <class U>
  bool operator!=(const AlignedAllocator<U>&) const {
    return false;
  }
};

template <class S>
using AlignedVec = std::vector<S, AlignedAllocator<S>>;

/// Dense row-major tensor of float or double. Shape entries are
/// non-negative; the empty shape is a scalar with one element.
template <class Scalar>
class TensorT {
  static_assert(std::is_floating_point_v<Scalar>);

 public:
  using value_type = Scalar;

  TensorT() : shape_{}, data_(1, Scalar(0)) {}

  explicit TensorT(std::vector<long> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), Scalar(0)) {}

  TensorT(std::vector<long> shape, AlignedVec<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long>(data_.size()) != checked_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
  }

  static TensorT zeros(std::vector<long> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<long> shape, Scalar v) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static TensorT scalar(Scalar v) {
    TensorT t;
    t.data_[0] = v;
    return t;
  }

  static TensorT from(std::vector<long> shape, std::initializer_list<Scalar> vals) {
    return TensorT(std::move(shape), AlignedVec<Scalar>(vals));
  }

  /// Identity matrix [n,n].
  static TensorT eye(long n) {
    TensorT t({n, n});
    for (long i = 0; i < n; ++i) t.data_[i * n + i] = Scalar(1);
    return t;
  }

  const std::vector<long>& shape() const { return shape_; }
  long ndim() const { return static_cast<long>(shape_.size()); }
  long dim(long i) const { return shape_[static_cast<std::size_t>(i)]; }
  long numel() const { return static_cast<long>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  AlignedVec<Scalar>& vec() { return data_; }
  const AlignedVec<Scalar>& vec() const { return data_; }

  Scalar& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  Scalar& operator()(long i, long j) { return data_[i * shape_[1] + j]; }
  Scalar operator()(long i, long j) const { return data_[i * shape_[1] + j]; }
  Scalar& operator()(long i, long j, long k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(long i, long j, long k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar& operator()(long i, long j, long k, long l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  Scalar operator()(long i, long j, long k, long l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  /// Copy with a new shape; element count must be preserved.
  TensorT reshaped(std::vector<long> new_shape) const {
    TensorT out(std::move(new_shape), data_);
    return out;
  }

  /// View of the flat data as a rows x cols row-major matrix.
  MapMat<Scalar> mat(long rows, long cols) {
    return MapMat<Scalar>(data_.data(), rows, cols);
  }
  CMapMat<Scalar> mat(long rows, long cols) const {
    return CMapMat<Scalar>(data_.data(), rows, cols);
  }
  MapArr<Scalar> arr() { return MapArr<Scalar>(data_.data(), numel()); }
  CMapArr<Scalar> arr() const { return CMapArr<Scalar>(data_.data(), numel()); }

  void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }

  void add_(const TensorT& o) {
    if (!same_shape(o))
      throw ShapeError("add_: shape " + shape_to_string(shape_) + " vs " +
                       shape_to_string(o.shape_));
    arr() += o.arr();
  }

  void scale_(Scalar s) { arr() *= s; }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool bitwise_equal(const TensorT& o) const {
    return shape_ == o.shape_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(Scalar)) == 0;
  }

  static long checked_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(shape));
      n *= d;
    }
    return n;
  }

 private:
  std::vector<long> shape_;
  AlignedVec<Scalar> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

/// Explicit precision conversion; the only way to move between float32 and
/// float64 tensors.
template <class To, class From>
TensorT<To> cast(const TensorT<From>& t) {
  AlignedVec<To> data(t.vec().begin(), t.vec().end());
  return TensorT<To>(t.shape(), std::move(data));
}

/// Throws NumericsError if finite checks are on and t holds NaN/Inf.
template <class Scalar>
inline void ensure_finite(const TensorT<Scalar>& t, const char* op) {
  if (finite_checks_enabled() && !t.all_finite())
    throw NumericsError(std::string("non-finite value produced by ") + op);
}

template <class Scalar>
TensorT<Scalar> random_normal(std::vector<long> shape, Rng& rng, double stddev = 1.0) {
  TensorT<Scalar> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(rng.normal() * stddev);
  return t;
}

template <class Scalar>
TensorT<Scalar> random_uniform(std::vector<long> shape, Rng& rng, double lo, double hi) {
  TensorT<Scalar> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

/// Truncated normal weight init: N(0, stddev) resampled beyond 2*stddev.
template <class Scalar>
TensorT<Scalar> trunc_normal(std::vector<long> shape, Rng& rng, double stddev = 0.02) {
  TensorT<Scalar> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i)
    t[i] = static_cast<Scalar>(rng.truncated_normal(stddev, 2.0 * stddev));
  return t;
}

}  // namespace shunted
