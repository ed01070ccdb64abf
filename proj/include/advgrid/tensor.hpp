#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace advgrid {

using Shape = std::vector<std::size_t>;

/// Raised whenever two tensors (or a tensor and an expected layout) disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Allocator returning 64-byte aligned blocks. Eigen picks its vectorized
/// reduction order from the buffer address, so every tensor must start on the
/// same boundary for results to be reproducible across copies.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_length();
  }

  Tensor(Shape shape, std::initializer_list<double> data)
      : shape_(std::move(shape)), data_(data) {
    check_length();
  }

  Tensor(Shape shape, AlignedDoubles data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_length();
  }

  const Shape& shape() const noexcept { return shape_; }

  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double> storage() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same data, new shape; element count must match.
  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " +
                       to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(*this, other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static void require_same_shape(const Tensor& a, const Tensor& b,
                                 const char* what) {
    if (a.shape_ != b.shape_) {
      throw ShapeError(std::string(what) + ": shape " + to_string(a.shape_) +
                       " vs " + to_string(b.shape_));
    }
  }

 private:
  void check_length() const {
    check_dims();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("zero-sized dimension in " + to_string(shape_));
    }
  }

  Shape shape_;
  AlignedDoubles data_;
};

}  // namespace advgrid
