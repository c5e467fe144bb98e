#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pali/numerics/tape.hpp"
#include "pali/numerics/tensor.hpp"

namespace pali {

// ---------------------------------------------------------------------------
// Value-level kernels. Each Var op below records one of these as its forward.
// ---------------------------------------------------------------------------

namespace detail {

struct AxisSplit {
  Index outer;
  Index n;
  Index inner;
};

inline AxisSplit split_axis(const Shape& shape, Index axis, const char* op) {
  const auto rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range for " + shape_string(shape));
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

inline Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(std::numbers::sqrt2 / 2)));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(std::numbers::sqrt2 / 2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw_shape_error("matmul", a.shape(), b.shape());
  Tensor<Scalar> out(Shape{a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

/// a * b^T
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) throw_shape_error("matmul_nt", a.shape(), b.shape());
  Tensor<Scalar> out(Shape{a.dim(0), b.dim(0)});
  out.matrix().noalias() = a.matrix() * b.matrix().transpose();
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1) {
  const auto s = detail::split_axis(x.shape(), axis, "softmax");
  Tensor<Scalar> out = x;
  Scalar* d = out.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index in = 0; in < s.inner; ++in) {
      Scalar* base = d + o * s.n * s.inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index i = 0; i < s.n; ++i) mx = std::max(mx, base[i * s.inner]);
      if (!std::isfinite(mx)) throw NumericError("softmax: row has no finite entry");
      Scalar sum = 0;
      for (Index i = 0; i < s.n; ++i) {
        base[i * s.inner] = std::exp(base[i * s.inner] - mx);
        sum += base[i * s.inner];
      }
      for (Index i = 0; i < s.n; ++i) base[i * s.inner] /= sum;
    }
  }
  return out;
}

/// Row-wise log-softmax over the last axis.
template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = x;
  auto m = out.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    const Scalar mx = m.row(r).maxCoeff();
    const Scalar lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    m.row(r).array() -= lse;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = x;
  out.vec() = x.vec().unaryExpr([](Scalar v) { return detail::gelu_scalar(v); });
  return out;
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps) {
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: epsilon must be positive");
  if (gamma.size() != x.cols() || beta.size() != x.cols()) throw_shape_error("layer_norm", x.shape(), gamma.shape());
  Tensor<Scalar> out(x.shape());
  auto xm = x.matrix();
  auto om = out.matrix();
  const auto n = static_cast<Scalar>(x.cols());
  for (Index r = 0; r < xm.rows(); ++r) {
    const Scalar mu = xm.row(r).sum() / n;
    const Scalar var = (xm.row(r).array() - mu).square().sum() / n;
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    om.row(r) = ((xm.row(r).array() - mu) * inv * gamma.vec().transpose().array() + beta.vec().transpose().array())
                    .matrix();
  }
  return out;
}

/// Bucket index of a relative offset (key position - query position), T5 style.
inline Index relative_position_bucket(Index relative_position, bool bidirectional, Index num_buckets,
                                      Index max_distance) {
  Index ret = 0;
  Index n = -relative_position;
  if (bidirectional) {
    num_buckets /= 2;
    if (n < 0) ret += num_buckets;
    n = n < 0 ? -n : n;
  } else {
    n = std::max<Index>(n, 0);
  }
  const Index max_exact = num_buckets / 2;
  if (n < max_exact) return ret + n;
  const double scaled = std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
                        std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact)) *
                        static_cast<double>(num_buckets - max_exact);
  const Index large = std::min<Index>(max_exact + static_cast<Index>(scaled), num_buckets - 1);
  return ret + large;
}

/// Options shared by the attention kernel and its tape op.
template <typename Scalar>
struct AttentionSpec {
  Index heads = 1;
  /// Additive mask [Tq, Tk]; entries may be -inf. Null tensor means no mask.
  Tensor<Scalar> mask;
};

namespace detail {

/// Attention probabilities of one head, [Tq, Tk].
template <typename Scalar>
typename Tensor<Scalar>::Matrix attention_probs(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                                const Tensor<Scalar>* bias, const Tensor<Scalar>& mask, Index head,
                                                Index head_dim) {
  using Matrix = typename Tensor<Scalar>::Matrix;
  const Index tq = q.dim(0);
  const Index tk = k.dim(0);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
  Matrix s = (q.matrix().middleCols(head * head_dim, head_dim) *
              k.matrix().middleCols(head * head_dim, head_dim).transpose()) *
             scale;
  if (bias) {
    s += Eigen::Map<const Matrix>(bias->data() + head * tq * tk, tq, tk);
  }
  if (!mask.is_null()) s += mask.matrix();
  for (Index r = 0; r < tq; ++r) {
    const Scalar mx = s.row(r).maxCoeff();
    if (!std::isfinite(mx)) throw NumericError("attention: query row is fully masked");
    s.row(r) = (s.row(r).array() - mx).exp().matrix();
  }
  // vectorized exp(-inf) can come back as a denormal rather than 0
  if (!mask.is_null()) s = (mask.matrix().array() == -std::numeric_limits<Scalar>::infinity()).select(Scalar(0), s);
  for (Index r = 0; r < tq; ++r) s.row(r) /= s.row(r).sum();
  return s;
}

}  // namespace detail

/// Multi-head scaled dot-product attention over already-projected q, k, v.
/// q [Tq, D], k and v [Tk, D], optional additive bias [H, Tq, Tk].
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         const Tensor<Scalar>* bias, const AttentionSpec<Scalar>& spec) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.shape() != v.shape()) {
    throw_shape_error("attention", q.shape(), k.shape());
  }
  const Index d = q.dim(1);
  if (spec.heads <= 0 || d % spec.heads != 0) throw ShapeError("attention: width not divisible by heads");
  const Index hd = d / spec.heads;
  if (bias && bias->shape() != Shape{spec.heads, q.dim(0), k.dim(0)}) {
    throw_shape_error("attention(bias)", bias->shape(), Shape{spec.heads, q.dim(0), k.dim(0)});
  }
  if (!spec.mask.is_null() && spec.mask.shape() != Shape{q.dim(0), k.dim(0)}) {
    throw_shape_error("attention(mask)", spec.mask.shape(), Shape{q.dim(0), k.dim(0)});
  }
  Tensor<Scalar> out(Shape{q.dim(0), d});
  for (Index h = 0; h < spec.heads; ++h) {
    auto p = detail::attention_probs(q, k, bias, spec.mask, h, hd);
    out.matrix().middleCols(h * hd, hd).noalias() = p * v.matrix().middleCols(h * hd, hd);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape ops.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  return a.tape();
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::same_tape("matmul", a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0)) {
    throw_shape_error("matmul", a.shape(), b.shape());
  }
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      "matmul", {ia, ib}, [](const auto& in) { return matmul(*in[0], *in[1]); },
      [ia, ib](std::size_t self, GradStore<Scalar>& g) {
        const auto go = g.grad(self).matrix();
        if (g.requires_grad(ia)) g.accumulate(ia).matrix().noalias() += go * g.value(ib).matrix().transpose();
        if (g.requires_grad(ib)) g.accumulate(ib).matrix().noalias() += g.value(ia).matrix().transpose() * go;
      });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::same_tape("matmul_nt", a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(1)) {
    throw_shape_error("matmul_nt", a.shape(), b.shape());
  }
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      "matmul_nt", {ia, ib}, [](const auto& in) { return matmul_nt(*in[0], *in[1]); },
      [ia, ib](std::size_t self, GradStore<Scalar>& g) {
        const auto go = g.grad(self).matrix();
        if (g.requires_grad(ia)) g.accumulate(ia).matrix().noalias() += go * g.value(ib).matrix();
        if (g.requires_grad(ib)) g.accumulate(ib).matrix().noalias() += go.transpose() * g.value(ia).matrix();
      });
}

/// Elementwise sum. `b` may also be a vector matching the last axis of `a`,
/// in which case it is broadcast over rows.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::same_tape("add", a, b);
  const bool broadcast = a.shape() != b.shape();
  if (broadcast && !(b.value().rank() == 1 && b.dim(0) == a.value().cols())) throw_shape_error("add", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      "add", {ia, ib},
      [broadcast](const auto& in) {
        Tensor<Scalar> out = *in[0];
        if (broadcast) {
          out.matrix().rowwise() += in[1]->vec().transpose();
        } else {
          out.vec() += in[1]->vec();
        }
        return out;
      },
      [ia, ib, broadcast](std::size_t self, GradStore<Scalar>& g) {
        const auto& go = g.grad(self);
        if (g.requires_grad(ia)) g.accumulate(ia).vec() += go.vec();
        if (g.requires_grad(ib)) {
          if (broadcast) {
            g.accumulate(ib).vec() += go.matrix().colwise().sum().transpose();
          } else {
            g.accumulate(ib).vec() += go.vec();
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = detail::same_tape("mul", a, b);
  if (a.shape() != b.shape()) throw_shape_error("mul", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      "mul", {ia, ib},
      [](const auto& in) {
        Tensor<Scalar> out = *in[0];
        out.vec().array() *= in[1]->vec().array();
        return out;
      },
      [ia, ib](std::size_t self, GradStore<Scalar>& g) {
        const auto& go = g.grad(self);
        if (g.requires_grad(ia)) g.accumulate(ia).vec().array() += go.vec().array() * g.value(ib).vec().array();
        if (g.requires_grad(ib)) g.accumulate(ib).vec().array() += go.vec().array() * g.value(ia).vec().array();
      });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  const auto ia = a.id();
  return a.tape().record(
      "scale", {ia},
      [factor](const auto& in) {
        Tensor<Scalar> out = *in[0];
        out.vec() *= factor;
        return out;
      },
      [ia, factor](std::size_t self, GradStore<Scalar>& g) { g.accumulate(ia).vec() += factor * g.grad(self).vec(); });
}

/// a + c elementwise for a constant c.
template <typename Scalar>
Var<Scalar> add_constant(const Var<Scalar>& a, Scalar c) {
  const auto ia = a.id();
  return a.tape().record(
      "add_constant", {ia},
      [c](const auto& in) {
        Tensor<Scalar> out = *in[0];
        out.vec().array() += c;
        return out;
      },
      [ia](std::size_t self, GradStore<Scalar>& g) { g.accumulate(ia).vec() += g.grad(self).vec(); });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const auto ia = a.id();
  return a.tape().record(
      "gelu", {ia}, [](const auto& in) { return gelu(*in[0]); },
      [ia](std::size_t self, GradStore<Scalar>& g) {
        g.accumulate(ia).vec().array() +=
            g.grad(self).vec().array() *
            g.value(ia).vec().unaryExpr([](Scalar x) { return detail::gelu_grad_scalar(x); }).array();
      });
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a, Index axis = -1) {
  const auto ia = a.id();
  const auto s = detail::split_axis(a.shape(), axis, "softmax");
  return a.tape().record(
      "softmax", {ia}, [axis](const auto& in) { return softmax(*in[0], axis); },
      [ia, s](std::size_t self, GradStore<Scalar>& g) {
        const Scalar* y = g.value(self).data();
        const Scalar* gy = g.grad(self).data();
        Scalar* gx = g.accumulate(ia).data();
        for (Index o = 0; o < s.outer; ++o) {
          for (Index in = 0; in < s.inner; ++in) {
            const Index base = o * s.n * s.inner + in;
            Scalar dot = 0;
            for (Index i = 0; i < s.n; ++i) dot += y[base + i * s.inner] * gy[base + i * s.inner];
            for (Index i = 0; i < s.n; ++i) {
              const Index j = base + i * s.inner;
              gx[j] += y[j] * (gy[j] - dot);
            }
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  auto& tape = detail::same_tape("layer_norm", x, gamma);
  detail::same_tape("layer_norm", x, beta);
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: epsilon must be positive");
  if (gamma.value().size() != x.value().cols() || beta.value().size() != x.value().cols()) {
    throw_shape_error("layer_norm", x.shape(), gamma.shape());
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return tape.record(
      "layer_norm", {ix, ig, ib}, [eps](const auto& in) { return layer_norm(*in[0], *in[1], *in[2], eps); },
      [ix, ig, ib, eps](std::size_t self, GradStore<Scalar>& g) {
        using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
        const auto xm = g.value(ix).matrix();
        const auto gm = g.grad(self).matrix();
        const RowVec gam = g.value(ig).vec().transpose();
        const auto n = static_cast<Scalar>(xm.cols());
        RowVec dgamma = RowVec::Zero(xm.cols());
        for (Index r = 0; r < xm.rows(); ++r) {
          const Scalar mu = xm.row(r).sum() / n;
          const Scalar var = (xm.row(r).array() - mu).square().sum() / n;
          const Scalar inv = Scalar(1) / std::sqrt(var + eps);
          const RowVec xhat = (xm.row(r).array() - mu) * inv;
          dgamma.array() += gm.row(r).array() * xhat.array();
          if (g.requires_grad(ix)) {
            const RowVec dxhat = gm.row(r).array() * gam.array();
            const Scalar mean_d = dxhat.sum() / n;
            const Scalar mean_dx = (dxhat.array() * xhat.array()).sum() / n;
            g.accumulate(ix).matrix().row(r).array() += inv * (dxhat.array() - mean_d - xhat.array() * mean_dx);
          }
        }
        if (g.requires_grad(ig)) g.accumulate(ig).vec() += dgamma.transpose();
        if (g.requires_grad(ib)) g.accumulate(ib).vec() += gm.colwise().sum().transpose();
      });
}

/// Rows of `table` [V, D] selected by `ids`; result [ids.size(), D].
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, const std::vector<int>& ids) {
  if (table.value().rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_string(table.shape()));
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const Index vocab = table.dim(0);
  for (int id : ids) {
    if (id < 0 || id >= vocab) throw ShapeError("embedding: id " + std::to_string(id) + " out of range for vocab " + std::to_string(vocab));
  }
  const auto it = table.id();
  return table.tape().record(
      "embedding", {it},
      [ids](const auto& in) {
        const auto& t = *in[0];
        Tensor<Scalar> out(Shape{static_cast<Index>(ids.size()), t.dim(1)});
        for (std::size_t r = 0; r < ids.size(); ++r) out.matrix().row(static_cast<Index>(r)) = t.matrix().row(ids[r]);
        return out;
      },
      [it, ids](std::size_t self, GradStore<Scalar>& g) {
        auto gt = g.accumulate(it).matrix();
        const auto go = g.grad(self).matrix();
        for (std::size_t r = 0; r < ids.size(); ++r) gt.row(ids[r]) += go.row(static_cast<Index>(r));
      });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& tape = parts.front().tape();
  const Shape& first = parts.front().shape();
  axis = detail::normalize_axis(axis, static_cast<Index>(first.size()), "concat");
  std::vector<std::size_t> ids;
  std::vector<Index> extents;
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    detail::same_tape("concat", parts.front(), p);
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) throw_shape_error("concat", first, p.shape());
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) throw_shape_error("concat", first, p.shape());
    ids.push_back(p.id());
    extents.push_back(p.dim(axis));
    out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
  }
  const auto split = detail::split_axis(out_shape, axis, "concat");
  return tape.record(
      "concat", ids,
      [out_shape, split, extents](const auto& in) {
        Tensor<Scalar> out(out_shape);
        Index offset = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const Index chunk = extents[k] * split.inner;
          for (Index o = 0; o < split.outer; ++o) {
            std::copy_n(in[k]->data() + o * chunk, chunk, out.data() + o * split.n * split.inner + offset);
          }
          offset += chunk;
        }
        return out;
      },
      [ids, split, extents](std::size_t self, GradStore<Scalar>& g) {
        const Scalar* go = g.grad(self).data();
        Index offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const Index chunk = extents[k] * split.inner;
          if (g.requires_grad(ids[k])) {
            Scalar* gi = g.accumulate(ids[k]).data();
            for (Index o = 0; o < split.outer; ++o) {
              const Scalar* src = go + o * split.n * split.inner + offset;
              for (Index j = 0; j < chunk; ++j) gi[o * chunk + j] += src[j];
            }
          }
          offset += chunk;
        }
      });
}

/// Elements [start, end) along `axis`.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, Index axis, Index start, Index end) {
  axis = detail::normalize_axis(axis, a.value().rank(), "slice");
  const Index n = a.dim(axis);
  if (start < 0 || end > n || start >= end) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) + ") invalid for " +
                     shape_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - start;
  const auto split = detail::split_axis(a.shape(), axis, "slice");
  const auto ia = a.id();
  return a.tape().record(
      "slice", {ia},
      [out_shape, split, start, end](const auto& in) {
        Tensor<Scalar> out(out_shape);
        const Index chunk = (end - start) * split.inner;
        for (Index o = 0; o < split.outer; ++o) {
          std::copy_n(in[0]->data() + (o * split.n + start) * split.inner, chunk, out.data() + o * chunk);
        }
        return out;
      },
      [ia, split, start, end](std::size_t self, GradStore<Scalar>& g) {
        const Index chunk = (end - start) * split.inner;
        Scalar* gi = g.accumulate(ia).data();
        const Scalar* go = g.grad(self).data();
        for (Index o = 0; o < split.outer; ++o) {
          for (Index j = 0; j < chunk; ++j) gi[(o * split.n + start) * split.inner + j] += go[o * chunk + j];
        }
      });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  if (shape_size(shape) != a.value().size()) throw_shape_error("reshape", a.shape(), shape);
  const auto ia = a.id();
  return a.tape().record(
      "reshape", {ia}, [shape](const auto& in) { return in[0]->reshaped(shape); },
      [ia](std::size_t self, GradStore<Scalar>& g) { g.accumulate(ia).vec() += g.grad(self).vec(); });
}

/// Sum of all elements, as a rank-0 tensor.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const auto ia = a.id();
  return a.tape().record(
      "sum", {ia}, [](const auto& in) { return Tensor<Scalar>::scalar(in[0]->vec().sum()); },
      [ia](std::size_t self, GradStore<Scalar>& g) { g.accumulate(ia).vec().array() += g.grad(self).item(); });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// Sum along one axis; the axis is removed from the shape.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a, Index axis) {
  axis = detail::normalize_axis(axis, a.value().rank(), "sum");
  const auto split = detail::split_axis(a.shape(), axis, "sum");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  const auto ia = a.id();
  return a.tape().record(
      "sum_axis", {ia},
      [out_shape, split](const auto& in) {
        Tensor<Scalar> out = out_shape.empty() ? Tensor<Scalar>::scalar(0) : Tensor<Scalar>(out_shape);
        for (Index o = 0; o < split.outer; ++o)
          for (Index i = 0; i < split.n; ++i)
            for (Index in2 = 0; in2 < split.inner; ++in2)
              out[o * split.inner + in2] += (*in[0])[(o * split.n + i) * split.inner + in2];
        return out;
      },
      [ia, split](std::size_t self, GradStore<Scalar>& g) {
        auto& gi = g.accumulate(ia);
        const auto& go = g.grad(self);
        for (Index o = 0; o < split.outer; ++o)
          for (Index i = 0; i < split.n; ++i)
            for (Index in2 = 0; in2 < split.inner; ++in2) gi[(o * split.n + i) * split.inner + in2] += go[o * split.inner + in2];
      });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a, Index axis) {
  return scale(sum(a, axis), Scalar(1) / static_cast<Scalar>(a.dim(axis)));
}

/// Relative position bias [heads, q_len, k_len] gathered from a learned
/// table [num_buckets, heads].
template <typename Scalar>
Var<Scalar> relative_position_bias(const Var<Scalar>& table, Index q_len, Index k_len, bool bidirectional,
                                   Index max_distance) {
  if (table.value().rank() != 2) throw ShapeError("relative_position_bias: table must be [buckets, heads]");
  const Index buckets = table.dim(0);
  const Index heads = table.dim(1);
  std::vector<Index> bucket(static_cast<std::size_t>(q_len * k_len));
  for (Index i = 0; i < q_len; ++i)
    for (Index j = 0; j < k_len; ++j)
      bucket[static_cast<std::size_t>(i * k_len + j)] = relative_position_bucket(j - i, bidirectional, buckets, max_distance);
  const auto it = table.id();
  return table.tape().record(
      "relative_position_bias", {it},
      [bucket, heads, q_len, k_len](const auto& in) {
        Tensor<Scalar> out(Shape{heads, q_len, k_len});
        const Index plane = q_len * k_len;
        for (Index h = 0; h < heads; ++h)
          for (Index p = 0; p < plane; ++p) out[h * plane + p] = in[0]->at({bucket[static_cast<std::size_t>(p)], h});
        return out;
      },
      [it, bucket, heads, q_len, k_len](std::size_t self, GradStore<Scalar>& g) {
        auto& gt = g.accumulate(it);
        const auto& go = g.grad(self);
        const Index plane = q_len * k_len;
        for (Index h = 0; h < heads; ++h)
          for (Index p = 0; p < plane; ++p) gt[bucket[static_cast<std::size_t>(p)] * heads + h] += go[h * plane + p];
      });
}

/// Fused multi-head attention on the tape. `bias` may be an invalid Var.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, const Var<Scalar>& bias,
                      AttentionSpec<Scalar> spec) {
  auto& tape = detail::same_tape("attention", q, k);
  detail::same_tape("attention", q, v);
  const bool has_bias = bias.valid();
  if (has_bias) detail::same_tape("attention", q, bias);
  // shape validation happens in the kernel
  std::vector<std::size_t> ids{q.id(), k.id(), v.id()};
  if (has_bias) ids.push_back(bias.id());
  auto shared_spec = std::make_shared<const AttentionSpec<Scalar>>(std::move(spec));
  return tape.record(
      "attention", ids,
      [shared_spec, has_bias](const auto& in) {
        return attention(*in[0], *in[1], *in[2], has_bias ? in[3] : nullptr, *shared_spec);
      },
      [ids, shared_spec, has_bias](std::size_t self, GradStore<Scalar>& g) {
        using Matrix = typename Tensor<Scalar>::Matrix;
        const auto& q = g.value(ids[0]);
        const auto& k = g.value(ids[1]);
        const auto& v = g.value(ids[2]);
        const Tensor<Scalar>* b = has_bias ? &g.value(ids[3]) : nullptr;
        const Index d = q.dim(1);
        const Index hd = d / shared_spec->heads;
        const Index tq = q.dim(0), tk = k.dim(0);
        const Scalar sc = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
        const auto go = g.grad(self).matrix();
        for (Index h = 0; h < shared_spec->heads; ++h) {
          const Matrix p = detail::attention_probs(q, k, b, shared_spec->mask, h, hd);
          const auto goh = go.middleCols(h * hd, hd);
          const auto vh = v.matrix().middleCols(h * hd, hd);
          Matrix dp = goh * vh.transpose();
          if (g.requires_grad(ids[2])) g.accumulate(ids[2]).matrix().middleCols(h * hd, hd).noalias() += p.transpose() * goh;
          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
          Matrix ds = p.array() * (dp.array().colwise() - rowdot.array());
          if (has_bias && g.requires_grad(ids[3])) {
            Eigen::Map<Matrix>(g.accumulate(ids[3]).data() + h * tq * tk, tq, tk) += ds;
          }
          if (g.requires_grad(ids[0]))
            g.accumulate(ids[0]).matrix().middleCols(h * hd, hd).noalias() += sc * (ds * k.matrix().middleCols(h * hd, hd));
          if (g.requires_grad(ids[1]))
            g.accumulate(ids[1]).matrix().middleCols(h * hd, hd).noalias() +=
                sc * (ds.transpose() * q.matrix().middleCols(h * hd, hd));
        }
      });
}

enum class Reduction { mean, sum };

/// Softmax cross-entropy of logits [T, V] against integer labels. Positions
/// whose label equals `ignore_index` contribute nothing. Mean reduction
/// divides by the number of counted positions (0 when none).
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels, int ignore_index,
                          Reduction reduction = Reduction::mean) {
  if (logits.value().rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw_shape_error("cross_entropy", logits.shape(), Shape{static_cast<Index>(labels.size())});
  }
  const Index vocab = logits.dim(1);
  Index counted = 0;
  for (int l : labels) {
    if (l == ignore_index) continue;
    if (l < 0 || l >= vocab) throw ShapeError("cross_entropy: label " + std::to_string(l) + " out of range");
    ++counted;
  }
  const Scalar denom = reduction == Reduction::mean && counted > 0 ? static_cast<Scalar>(counted) : Scalar(1);
  const auto il = logits.id();
  return logits.tape().record(
      "cross_entropy", {il},
      [labels, ignore_index, denom](const auto& in) {
        const auto lsm = log_softmax(*in[0]);
        Scalar total = 0;
        for (std::size_t t = 0; t < labels.size(); ++t) {
          if (labels[t] != ignore_index) total -= lsm.matrix()(static_cast<Index>(t), labels[t]);
        }
        return Tensor<Scalar>::scalar(total / denom);
      },
      [il, labels, ignore_index, denom](std::size_t self, GradStore<Scalar>& g) {
        const Scalar go = g.grad(self).item() / denom;
        auto p = softmax(g.value(il), -1);
        auto gl = g.accumulate(il).matrix();
        for (std::size_t t = 0; t < labels.size(); ++t) {
          if (labels[t] == ignore_index) continue;
          const auto r = static_cast<Index>(t);
          gl.row(r) += go * p.matrix().row(r);
          gl(r, labels[t]) -= go;
        }
      });
}

/// Inverted dropout with a mask drawn from `rng`. rate == 0 is the identity.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  Tensor<Scalar> mask(a.shape());
  const Scalar keep = Scalar(1) / static_cast<Scalar>(1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < rate ? Scalar(0) : keep;
  }
  return mul(a, a.tape().constant(std::move(mask)));
}

}  // namespace pali
