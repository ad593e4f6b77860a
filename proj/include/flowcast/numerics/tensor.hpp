// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLOWCAST__NUMERICS__TENSOR_HPP_
#define FLOWCAST__NUMERICS__TENSOR_HPP_

#include "flowcast/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flowcast
{

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape & shape)
{
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape & shape)
{
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Row-major strides for `shape` (last axis contiguous).
inline Shape shape_strides(const Shape & shape)
{
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

/**
 * Dense n-dimensional array in row-major order.
 *
 * The storage is an Eigen column vector so that any trailing-axis view can
 * be mapped as a row-major matrix without copying. Scalars are shape {1}.
 */
template <typename Scalar>
class Tensor
{
public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape))
  {
    validate_shape();
    data_ = Vector::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape))
  {
    validate_shape();
    if (static_cast<Index>(values.size()) != shape_size(shape_)) {
      throw ShapeError(
        "tensor of shape " + shape_string(shape_) + " cannot hold " +
        std::to_string(values.size()) + " values");
    }
    data_ = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  }

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), data_(std::move(values))
  {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(Scalar value) { return Tensor({1}, value); }

  static Tensor random_normal(Shape shape, std::mt19937_64 & rng, Scalar stddev = Scalar(1))
  {
    Tensor out(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Index i = 0; i < out.size(); ++i) out.data_[i] = static_cast<Scalar>(stddev * dist(rng));
    return out;
  }

  static Tensor random_uniform(Shape shape, std::mt19937_64 & rng, Scalar lo, Scalar hi)
  {
    Tensor out(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (Index i = 0; i < out.size(); ++i) out.data_[i] = static_cast<Scalar>(dist(rng));
    return out;
  }

  const Shape & shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  bool empty() const { return shape_.empty(); }

  Scalar * data() { return data_.data(); }
  const Scalar * data() const { return data_.data(); }
  Vector & flat() { return data_; }
  const Vector & flat() const { return data_; }
  std::span<const Scalar> values() const
  {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar & operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar & at(std::initializer_list<Index> index) { return data_[offset(index)]; }
  Scalar at(std::initializer_list<Index> index) const { return data_[offset(index)]; }

  /// View as [size / last, last].
  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Tensor reshaped(Shape shape) const
  {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const
  {
    return Tensor<Other>(shape_, typename Tensor<Other>::Vector(data_.template cast<Other>()));
  }

  bool all_finite() const { return data_.allFinite(); }

  bool operator==(const Tensor & other) const
  {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  Scalar max_abs_diff(const Tensor & other) const
  {
    if (shape_ != other.shape_) {
      throw ShapeError(
        "shape mismatch " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    return size() == 0 ? Scalar(0) : (data_ - other.data_).cwiseAbs().maxCoeff();
  }

private:
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }

  Index offset(std::initializer_list<Index> index) const
  {
    if (static_cast<std::size_t>(index.size()) != shape_.size()) {
      throw ShapeError("index rank does not match tensor rank " + shape_string(shape_));
    }
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : index) {
      if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range");
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  void validate_shape() const
  {
    for (Index extent : shape_) {
      if (extent < 0) throw ShapeError("negative extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  Vector data_;
};

/// Generic axis permutation: out.shape[i] = in.shape[perm[i]].
template <typename Scalar>
Tensor<Scalar> permute_tensor(const Tensor<Scalar> & in, const std::vector<Index> & perm)
{
  const Index rank = in.rank();
  if (static_cast<Index>(perm.size()) != rank) throw ShapeError("permutation rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  for (Index i = 0; i < rank; ++i) {
    const Index p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)]) {
      throw ShapeError("invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = in.dim(p);
  }
  Tensor<Scalar> out(out_shape);
  if (out.size() == 0) return out;

  const Shape in_strides = shape_strides(in.shape());
  Shape src_strides(static_cast<std::size_t>(rank));
  for (Index i = 0; i < rank; ++i) {
    src_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  // Copy contiguous runs along the last output axis.
  const Index inner = out_shape.back();
  const Index inner_stride = src_strides.back();
  const Index outer = out.size() / inner;
  std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
  Index src = 0;
  const Scalar * in_data = in.data();
  Scalar * out_data = out.data();
  for (Index o = 0; o < outer; ++o) {
    Scalar * dst = out_data + o * inner;
    for (Index j = 0; j < inner; ++j) dst[j] = in_data[src + j * inner_stride];
    for (Index axis = rank - 2; axis >= 0; --axis) {
      auto a = static_cast<std::size_t>(axis);
      ++counter[a];
      src += src_strides[a];
      if (counter[a] < out_shape[a]) break;
      src -= src_strides[a] * out_shape[a];
      counter[a] = 0;
    }
  }
  return out;
}

inline std::vector<Index> inverse_permutation(const std::vector<Index> & perm)
{
  std::vector<Index> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<Index>(i);
  return inv;
}

}  // namespace flowcast

#endif  // FLOWCAST__NUMERICS__TENSOR_HPP_
