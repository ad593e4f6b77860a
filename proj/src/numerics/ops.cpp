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

#include "flowcast/numerics/ops.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace flowcast
{
namespace
{

template <typename S>
void require_same_shape(const Var<S> & a, const Var<S> & b, const char * op)
{
  if (a.shape() != b.shape()) {
    throw ShapeError(
      std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
      shape_string(b.shape()));
  }
}

bool is_suffix(const Shape & full, const Shape & tail)
{
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

Index checked_axis(Index axis, Index rank, const char * op)
{
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  }
  return axis;
}

/// Split a shape around `axis` into (outer, extent, inner).
struct AxisSplit
{
  Index outer;
  Index extent;
  Index inner;
};

AxisSplit split_at(const Shape & shape, Index axis)
{
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename S, typename Forward, typename Derivative>
Var<S> unary(Var<S> a, Forward f, Derivative df)
{
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat().unaryExpr(f);
  Tensor<S> saved = out;
  return a.tape().record(
    std::move(out), {a},
    [a, saved = std::move(saved), df](Tape<S> & tape, const Tensor<S> & g) {
      auto & ga = tape.grad_buffer(a).flat();
      const auto & x = a.value().flat();
      const auto & y = saved.flat();
      for (Index i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
}

}  // namespace

template <typename S>
Var<S> add(Var<S> a, Var<S> b)
{
  require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat() + b.value().flat();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<S> & tape, const Tensor<S> & g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b)
{
  require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat() - b.value().flat();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<S> & tape, const Tensor<S> & g) {
    tape.accumulate(a, g);
    if (b.requires_grad()) tape.grad_buffer(b).flat() -= g.flat();
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b)
{
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat().cwiseProduct(b.value().flat());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<S> & tape, const Tensor<S> & g) {
    if (a.requires_grad()) tape.grad_buffer(a).flat() += g.flat().cwiseProduct(b.value().flat());
    if (b.requires_grad()) tape.grad_buffer(b).flat() += g.flat().cwiseProduct(a.value().flat());
  });
}

template <typename S>
Var<S> scale(Var<S> a, S factor)
{
  Tensor<S> out(a.shape());
  out.flat() = a.value().flat() * factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape<S> & tape, const Tensor<S> & g) {
    tape.grad_buffer(a).flat() += g.flat() * factor;
  });
}

template <typename S>
Var<S> square(Var<S> a)
{
  return unary(a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Var<S> relu(Var<S> a)
{
  // Subgradient 0 at the kink.
  return unary(
    a, [](S x) { return x > S(0) ? x : S(0); }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> tanh(Var<S> a)
{
  return unary(a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(Var<S> a)
{
  return unary(
    a, [](S x) { return S(1) / (S(1) + std::exp(-x)); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> exp(Var<S> a)
{
  return unary(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> log(Var<S> a)
{
  if (a.value().size() > 0 && !(a.value().flat().minCoeff() > S(0))) {
    throw NumericalError("log: non-positive input");
  }
  return unary(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Var<S> add_broadcast(Var<S> a, Var<S> b)
{
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(
      "add_broadcast: " + shape_string(b.shape()) + " is not a suffix of " +
      shape_string(a.shape()));
  }
  const Index inner = b.value().size();
  const Index outer = inner == 0 ? 0 : a.value().size() / inner;
  Tensor<S> out = a.value();
  {
    Eigen::Map<typename Tensor<S>::RowMatrix> o(out.data(), outer, inner);
    o.rowwise() += b.value().flat().transpose();
  }
  return a.tape().record(
    std::move(out), {a, b}, [a, b, outer, inner](Tape<S> & tape, const Tensor<S> & g) {
      tape.accumulate(a, g);
      if (b.requires_grad()) {
        Eigen::Map<const typename Tensor<S>::RowMatrix> gm(g.data(), outer, inner);
        tape.grad_buffer(b).flat() += gm.colwise().sum().transpose();
      }
    });
}

template <typename S>
Var<S> mul_constant(Var<S> a, const Tensor<S> & c)
{
  if (!is_suffix(a.shape(), c.shape())) {
    throw ShapeError(
      "mul_constant: " + shape_string(c.shape()) + " is not a suffix of " +
      shape_string(a.shape()));
  }
  const Index inner = c.size();
  const Index outer = inner == 0 ? 0 : a.value().size() / inner;
  Tensor<S> out = a.value();
  {
    Eigen::Map<typename Tensor<S>::RowMatrix> o(out.data(), outer, inner);
    o.array().rowwise() *= c.flat().transpose().array();
  }
  return a.tape().record(
    std::move(out), {a}, [a, c, outer, inner](Tape<S> & tape, const Tensor<S> & g) {
      Eigen::Map<const typename Tensor<S>::RowMatrix> gm(g.data(), outer, inner);
      Eigen::Map<typename Tensor<S>::RowMatrix> ga(tape.grad_buffer(a).data(), outer, inner);
      ga.array() += gm.array().rowwise() * c.flat().transpose().array();
    });
}

template <typename S>
Var<S> mask_rows(Var<S> a, const Tensor<S> & mask)
{
  Shape rows_shape(a.shape().begin(), a.shape().end() - 1);
  if (mask.shape() != rows_shape && !(rows_shape.empty() && mask.size() == 1)) {
    throw ShapeError(
      "mask_rows: mask " + shape_string(mask.shape()) + " does not match rows of " +
      shape_string(a.shape()));
  }
  Tensor<S> out = a.value();
  out.matrix().array().colwise() *= mask.flat().array();
  return a.tape().record(std::move(out), {a}, [a, mask](Tape<S> & tape, const Tensor<S> & g) {
    tape.grad_buffer(a).matrix().array() += g.matrix().array().colwise() * mask.flat().array();
  });
}

template <typename S>
Var<S> sum(Var<S> a)
{
  auto out = Tensor<S>::scalar(a.value().flat().sum());
  return a.tape().record(std::move(out), {a}, [a](Tape<S> & tape, const Tensor<S> & g) {
    tape.grad_buffer(a).flat().array() += g[0];
  });
}

template <typename S>
Var<S> mean(Var<S> a)
{
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), S(1) / static_cast<S>(n));
}

template <typename S>
Var<S> sum_axis(Var<S> a, Index axis)
{
  checked_axis(axis, a.rank(), "sum_axis");
  const AxisSplit s = split_at(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  Tensor<S> out(shape);
  const S * x = a.value().data();
  S * y = out.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index e = 0; e < s.extent; ++e) {
      const S * src = x + (o * s.extent + e) * s.inner;
      S * dst = y + o * s.inner;
      for (Index i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return a.tape().record(std::move(out), {a}, [a, s](Tape<S> & tape, const Tensor<S> & g) {
    S * ga = tape.grad_buffer(a).data();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index e = 0; e < s.extent; ++e) {
        S * dst = ga + (o * s.extent + e) * s.inner;
        const S * src = g.data() + o * s.inner;
        for (Index i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename S>
Var<S> mean_axis(Var<S> a, Index axis)
{
  checked_axis(axis, a.rank(), "mean_axis");
  const Index n = a.dim(axis);
  if (n == 0) throw ShapeError("mean_axis over empty axis");
  return scale(sum_axis(a, axis), S(1) / static_cast<S>(n));
}

template <typename S>
Var<S> reshape(Var<S> a, Shape shape)
{
  Tensor<S> out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape<S> & tape, const Tensor<S> & g) {
    tape.grad_buffer(a).flat() += g.flat();
  });
}

template <typename S>
Var<S> permute(Var<S> a, std::vector<Index> perm)
{
  Tensor<S> out = permute_tensor(a.value(), perm);
  return a.tape().record(
    std::move(out), {a}, [a, inv = inverse_permutation(perm)](Tape<S> & tape, const Tensor<S> & g) {
      tape.grad_buffer(a).flat() += permute_tensor(g, inv).flat();
    });
}

template <typename S>
Var<S> slice(Var<S> a, Index axis, Index begin, Index end)
{
  checked_axis(axis, a.rank(), "slice");
  if (begin < 0 || end > a.dim(axis) || begin >= end) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
  }
  const AxisSplit s = split_at(a.shape(), axis);
  Shape shape = a.shape();
  shape[static_cast<std::size_t>(axis)] = end - begin;
  Tensor<S> out(shape);
  const Index width = (end - begin) * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    const S * src = a.value().data() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + width, out.data() + o * width);
  }
  return a.tape().record(
    std::move(out), {a}, [a, s, begin, width](Tape<S> & tape, const Tensor<S> & g) {
      S * ga = tape.grad_buffer(a).data();
      for (Index o = 0; o < s.outer; ++o) {
        S * dst = ga + (o * s.extent + begin) * s.inner;
        const S * src = g.data() + o * width;
        for (Index i = 0; i < width; ++i) dst[i] += src[i];
      }
    });
}

template <typename S>
Var<S> take(Var<S> a, Index axis, Index i)
{
  Var<S> s = slice(a, axis, i, i + 1);
  Shape shape = a.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  return reshape(s, shape);
}

template <typename S>
Var<S> expand(Var<S> a, Index axis, Index n)
{
  if (axis < 0 || axis > a.rank()) throw ShapeError("expand: axis out of range");
  if (n < 1) throw ShapeError("expand: extent must be positive");
  Shape shape = a.shape();
  shape.insert(shape.begin() + axis, n);
  Shape before(a.shape().begin(), a.shape().begin() + axis);
  const Index outer = shape_size(before);
  const Index inner = outer == 0 ? 0 : a.value().size() / outer;
  Tensor<S> out(shape);
  for (Index o = 0; o < outer; ++o) {
    const S * src = a.value().data() + o * inner;
    for (Index r = 0; r < n; ++r) std::copy(src, src + inner, out.data() + (o * n + r) * inner);
  }
  return a.tape().record(
    std::move(out), {a}, [a, outer, inner, n](Tape<S> & tape, const Tensor<S> & g) {
      S * ga = tape.grad_buffer(a).data();
      for (Index o = 0; o < outer; ++o) {
        for (Index r = 0; r < n; ++r) {
          const S * src = g.data() + (o * n + r) * inner;
          for (Index i = 0; i < inner; ++i) ga[o * inner + i] += src[i];
        }
      }
    });
}

template <typename S>
Var<S> matmul(Var<S> x, Var<S> w)
{
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw ShapeError(
      "matmul: cannot apply " + shape_string(w.shape()) + " to " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape.back() = w.dim(1);
  Tensor<S> out(shape);
  out.matrix().noalias() = x.value().matrix() * w.value().matrix();
  return x.tape().record(std::move(out), {x, w}, [x, w](Tape<S> & tape, const Tensor<S> & g) {
    if (x.requires_grad()) {
      tape.grad_buffer(x).matrix().noalias() += g.matrix() * w.value().matrix().transpose();
    }
    if (w.requires_grad()) {
      tape.grad_buffer(w).matrix().noalias() += x.value().matrix().transpose() * g.matrix();
    }
  });
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b)
{
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw ShapeError(
      "linear: cannot apply " + shape_string(w.shape()) + " to " + shape_string(x.shape()));
  }
  if (b.value().size() != w.dim(1)) throw ShapeError("linear: bias width mismatch");
  Shape shape = x.shape();
  shape.back() = w.dim(1);
  Tensor<S> out(shape);
  auto o = out.matrix();
  o.noalias() = x.value().matrix() * w.value().matrix();
  o.rowwise() += b.value().flat().transpose();
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b](Tape<S> & tape, const Tensor<S> & g) {
    const auto gm = g.matrix();
    if (x.requires_grad()) {
      tape.grad_buffer(x).matrix().noalias() += gm * w.value().matrix().transpose();
    }
    if (w.requires_grad()) {
      tape.grad_buffer(w).matrix().noalias() += x.value().matrix().transpose() * gm;
    }
    if (b.requires_grad()) tape.grad_buffer(b).flat() += gm.colwise().sum().transpose();
  });
}

template <typename S>
Var<S> softmax(Var<S> a)
{
  Tensor<S> out(a.shape());
  auto x = a.value().matrix();
  auto y = out.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Tensor<S> saved = out;
  return a.tape().record(
    std::move(out), {a}, [a, saved = std::move(saved)](Tape<S> & tape, const Tensor<S> & g) {
      auto p = saved.matrix();
      auto gm = g.matrix();
      auto ga = tape.grad_buffer(a).matrix();
      for (Index r = 0; r < p.rows(); ++r) {
        const S dot = p.row(r).dot(gm.row(r));
        ga.row(r).array() += p.row(r).array() * (gm.row(r).array() - dot);
      }
    });
}

template <typename S>
Var<S> log_softmax(Var<S> a)
{
  Tensor<S> out(a.shape());
  auto x = a.value().matrix();
  auto y = out.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    const S lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  Tensor<S> saved = out;
  return a.tape().record(
    std::move(out), {a}, [a, saved = std::move(saved)](Tape<S> & tape, const Tensor<S> & g) {
      auto ls = saved.matrix();
      auto gm = g.matrix();
      auto ga = tape.grad_buffer(a).matrix();
      for (Index r = 0; r < ls.rows(); ++r) {
        const S total = gm.row(r).sum();
        ga.row(r).array() += gm.row(r).array() - ls.row(r).array().exp() * total;
      }
    });
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, Index axis, S eps)
{
  checked_axis(axis, x.rank(), "layer_norm");
  if (axis != x.rank() - 1) {
    std::vector<Index> perm;
    for (Index i = 0; i < x.rank(); ++i) {
      if (i != axis) perm.push_back(i);
    }
    perm.push_back(axis);
    Var<S> moved = permute(x, perm);
    return permute(layer_norm(moved, gamma, beta, x.rank() - 1, eps), inverse_permutation(perm));
  }
  const Index width = x.shape().back();
  if (gamma.value().size() != width || beta.value().size() != width) {
    throw ShapeError("layer_norm: affine width mismatch");
  }
  Tensor<S> out(x.shape());
  Tensor<S> xhat(x.shape());
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(x.value().matrix().rows());
  auto xm = x.value().matrix();
  auto hm = xhat.matrix();
  auto ym = out.matrix();
  const auto gv = gamma.value().flat().transpose();
  const auto bv = beta.value().flat().transpose();
  for (Index r = 0; r < xm.rows(); ++r) {
    const S mu = xm.row(r).mean();
    const S var = (xm.row(r).array() - mu).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + eps);
    hm.row(r) = (xm.row(r).array() - mu) * inv_std[r];
    ym.row(r) = hm.row(r).cwiseProduct(gv) + bv;
  }
  return x.tape().record(
    std::move(out), {x, gamma, beta},
    [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
      Tape<S> & tape, const Tensor<S> & g) {
      auto gm = g.matrix();
      auto hm = xhat.matrix();
      if (gamma.requires_grad()) {
        tape.grad_buffer(gamma).flat() += gm.cwiseProduct(hm).colwise().sum().transpose();
      }
      if (beta.requires_grad()) tape.grad_buffer(beta).flat() += gm.colwise().sum().transpose();
      if (x.requires_grad()) {
        auto gx = tape.grad_buffer(x).matrix();
        const auto gv = gamma.value().flat().transpose();
        const S n = static_cast<S>(gm.cols());
        for (Index r = 0; r < gm.rows(); ++r) {
          const auto dh = gm.row(r).cwiseProduct(gv);
          const S sum_dh = dh.sum();
          const S sum_dh_h = dh.dot(hm.row(r));
          gx.row(r).array() +=
            (inv_std[r] / n) * (n * dh.array() - sum_dh - hm.row(r).array() * sum_dh_h);
        }
      }
    });
}

#define FLOWCAST_INSTANTIATE_OPS(S)                                       \
  template Var<S> add(Var<S>, Var<S>);                                    \
  template Var<S> sub(Var<S>, Var<S>);                                    \
  template Var<S> mul(Var<S>, Var<S>);                                    \
  template Var<S> scale(Var<S>, S);                                       \
  template Var<S> square(Var<S>);                                         \
  template Var<S> relu(Var<S>);                                           \
  template Var<S> tanh(Var<S>);                                           \
  template Var<S> sigmoid(Var<S>);                                        \
  template Var<S> exp(Var<S>);                                            \
  template Var<S> log(Var<S>);                                            \
  template Var<S> add_broadcast(Var<S>, Var<S>);                          \
  template Var<S> mul_constant(Var<S>, const Tensor<S> &);                \
  template Var<S> mask_rows(Var<S>, const Tensor<S> &);                   \
  template Var<S> sum(Var<S>);                                            \
  template Var<S> mean(Var<S>);                                           \
  template Var<S> sum_axis(Var<S>, Index);                                \
  template Var<S> mean_axis(Var<S>, Index);                               \
  template Var<S> reshape(Var<S>, Shape);                                 \
  template Var<S> permute(Var<S>, std::vector<Index>);                    \
  template Var<S> slice(Var<S>, Index, Index, Index);                     \
  template Var<S> take(Var<S>, Index, Index);                             \
  template Var<S> expand(Var<S>, Index, Index);                           \
  template Var<S> matmul(Var<S>, Var<S>);                                 \
  template Var<S> linear(Var<S>, Var<S>, Var<S>);                         \
  template Var<S> softmax(Var<S>);                                        \
  template Var<S> log_softmax(Var<S>);                                    \
  template Var<S> layer_norm(Var<S>, Var<S>, Var<S>, Index, S);

FLOWCAST_INSTANTIATE_OPS(float)
FLOWCAST_INSTANTIATE_OPS(double)
FLOWCAST_INSTANTIATE_OPS(long double)

#undef FLOWCAST_INSTANTIATE_OPS

}  // namespace flowcast
