#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfrflow {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

inline void check_shape(const Shape& shape) {
  for (Index d : shape) {
    if (d < 1) throw ShapeError("dimension sizes must be >= 1, got " + to_string(shape));
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

/// Dense row-major n-dimensional array backed by an Eigen column vector.
/// A rank-0 tensor (empty shape) holds a single scalar.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() : data_(Storage::Zero(1)) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Storage::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (static_cast<Index>(values.size()) != shape_size(shape_)) {
      throw ShapeError("initializer length does not match shape " + to_string(shape_));
    }
    data_.resize(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(Scalar v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index flat) { return data_[flat]; }
  const Scalar& operator[](Index flat) const { return data_[flat]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  const Scalar& operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  Shape strides() const {
    Shape s(shape_.size(), 1);
    for (Index i = rank() - 2; i >= 0; --i) {
      s[static_cast<std::size_t>(i)] =
          s[static_cast<std::size_t>(i + 1)] * shape_[static_cast<std::size_t>(i + 1)];
    }
    return s;
  }

  Tensor reshaped(Shape shape) const {
    check_shape(shape);
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>().eval());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  void set_zero() { data_.setZero(); }

 private:
  template <typename... I>
  Index offset(I... idx) const {
    constexpr std::size_t n = sizeof...(I);
    if (n != shape_.size()) throw ShapeError("index rank does not match " + to_string(shape_));
    const Index list[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t i = 0; i < n; ++i) off = off * shape_[i] + list[i];
    return off;
  }

  Shape shape_;
  Storage data_;
};

/// Boolean tensor used for validity masks and support sets.
using Mask = Tensor<std::uint8_t>;

inline Mask complement(const Mask& m) {
  Mask out(m.shape());
  out.array() = (m.array() == 0).template cast<std::uint8_t>();
  return out;
}

inline Index count_true(const Mask& m) { return (m.array() != 0).count(); }

}  // namespace mfrflow
