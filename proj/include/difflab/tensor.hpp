#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "difflab/errors.hpp"

namespace difflab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

// Row-major element offsets per axis.
inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

/// Dense n-dimensional array stored contiguously in row-major ("raster") order.
///
/// A rank-0 tensor holds a single scalar. Storage is an Eigen column array so
/// elementwise maps and reductions can use Eigen expressions directly; matrix
/// views are exposed through row-major Eigen::Map.
template <typename Scalar_>
class BasicTensor {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  BasicTensor() : data_(Storage::Zero(1)) {}

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_ = Storage::Zero(shape_size(shape_));
  }

  BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), Storage(Eigen::Map<const Storage>(
                                          values.begin(), static_cast<Index>(values.size())))) {}

  BasicTensor(Shape shape, std::span<const Scalar> values)
      : BasicTensor(std::move(shape),
                    Storage(Eigen::Map<const Storage>(values.data(), static_cast<Index>(values.size())))) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  static BasicTensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, Storage::Constant(1, value)); }
  static BasicTensor vector(std::initializer_list<Scalar> values) {
    return BasicTensor(Shape{static_cast<Index>(values.size())}, values);
  }
  static BasicTensor identity(Index n) {
    BasicTensor t({n, n});
    for (Index i = 0; i < n; ++i) t.data_[i * n + i] = Scalar(1);
    return t;
  }
  static BasicTensor from_matrix(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>& m) {
    BasicTensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(normalize_axis(axis))); }
  Shape strides() const { return row_major_strides(shape_); }

  Index normalize_axis(Index axis) const {
    const Index r = rank();
    if (axis < -r || axis >= r)
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
    return axis < 0 ? axis + r : axis;
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  std::span<const Scalar> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Index flat) { return data_[flat]; }
  const Scalar& operator[](Index flat) const { return data_[flat]; }

  template <typename... Is>
  Scalar& operator()(Is... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... Is>
  const Scalar& operator()(Is... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  Index offset(std::initializer_list<Index> idx) const {
    assert(static_cast<Index>(idx.size()) == rank());
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      assert(i >= 0 && i < shape_[axis]);
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() requires a single-element tensor, got " + to_string(shape_));
    return data_[0];
  }

  // Rank-2 views.
  MatrixMap matrix() {
    require_rank(2);
    return MatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatrixMap matrix() const {
    require_rank(2);
    return ConstMatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  // Treat the tensor as (prod(leading), last) matrix.
  ConstMatrixMap rows_view() const {
    const Index cols = rank() == 0 ? 1 : shape_.back();
    return ConstMatrixMap(data_.data(), cols == 0 ? 0 : size() / cols, cols);
  }
  MatrixMap rows_view() {
    const Index cols = rank() == 0 ? 1 : shape_.back();
    return MatrixMap(data_.data(), cols == 0 ? 0 : size() / cols, cols);
  }

  BasicTensor reshaped(Shape shape) const {
    Index inferred = -1;
    Index known = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == -1) {
        if (inferred >= 0) throw DimensionError("reshape allows a single inferred (-1) extent");
        inferred = static_cast<Index>(i);
      } else {
        known *= shape[i];
      }
    }
    if (inferred >= 0 && known != 0) shape[static_cast<std::size_t>(inferred)] = size() / known;
    if (shape_size(shape) != size())
      throw DimensionError("cannot reshape " + to_string(shape_) + " into " + to_string(shape));
    return BasicTensor(std::move(shape), data_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>());
  }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

 private:
  void check_extents() const {
    for (Index e : shape_)
      if (e < 0) throw DimensionError("negative extent in shape " + to_string(shape_));
  }
  void require_rank(Index r) const {
    if (rank() != r)
      throw DimensionError("expected rank-" + std::to_string(r) + " tensor, got shape " + to_string(shape_));
  }

  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<double>;

}  // namespace difflab
