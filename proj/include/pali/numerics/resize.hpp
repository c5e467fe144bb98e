#pragma once

#include <cmath>
#include <stdexcept>

#include "pali/numerics/tensor.hpp"

namespace pali {

namespace detail {

struct LerpTap {
  Index lo;
  Index hi;
  double frac;
};

/// Align-corners source tap for output index i of n_out over n_in samples.
/// The last output maps exactly onto the last input with frac == 0.
inline LerpTap align_corners_tap(Index i, Index n_in, Index n_out) {
  const double pos = static_cast<double>(i * (n_in - 1)) / static_cast<double>(n_out - 1);
  auto lo = static_cast<Index>(std::floor(pos));
  if (lo >= n_in - 1) return {n_in - 1, n_in - 1, 0.0};
  return {lo, lo + 1, pos - static_cast<double>(lo)};
}

}  // namespace detail

/// Bilinear resize of a [H, W, D] grid to [new_h, new_w, D] with
/// align-corners sampling. Each channel is resized independently.
template <typename Scalar>
Tensor<Scalar> bilinear_resize_grid(const Tensor<Scalar>& grid, Index new_h, Index new_w) {
  if (grid.rank() != 3) throw ShapeError("bilinear_resize_grid: expected [H,W,D], got " + shape_string(grid.shape()));
  const Index h = grid.dim(0), w = grid.dim(1), d = grid.dim(2);
  if (h < 2 || w < 2 || new_h < 2 || new_w < 2) {
    throw ShapeError("bilinear_resize_grid: extents must be >= 2 (grid " + shape_string(grid.shape()) + ", target " +
                     std::to_string(new_h) + "x" + std::to_string(new_w) + ")");
  }
  if (new_h == h && new_w == w) return grid;

  Tensor<Scalar> out(Shape{new_h, new_w, d});
  auto at = [&](Index y, Index x) { return grid.vec().segment((y * w + x) * d, d); };
  for (Index i = 0; i < new_h; ++i) {
    const auto ty = detail::align_corners_tap(i, h, new_h);
    const auto fy = static_cast<Scalar>(ty.frac);
    for (Index j = 0; j < new_w; ++j) {
      const auto tx = detail::align_corners_tap(j, w, new_w);
      const auto fx = static_cast<Scalar>(tx.frac);
      // a + f * (b - a): exact for f == 0 and for a == b
      const auto top = at(ty.lo, tx.lo) + fx * (at(ty.lo, tx.hi) - at(ty.lo, tx.lo));
      const auto bottom = at(ty.hi, tx.lo) + fx * (at(ty.hi, tx.hi) - at(ty.hi, tx.lo));
      out.vec().segment((i * new_w + j) * d, d) = top + fy * (bottom - top);
    }
  }
  return out;
}

}  // namespace pali
