#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pali/numerics/params.hpp"

namespace pali {

/// One scalar coordinate of a named parameter.
struct Coordinate {
  std::string name;
  Index index = 0;
};

template <typename Scalar>
using ScalarObjective = std::function<Scalar(const ParamSet<Scalar>&)>;

namespace detail {

template <typename Scalar>
Scalar checked_baseline(const ScalarObjective<Scalar>& f, const ParamSet<Scalar>& params) {
  const Scalar a = f(params);
  const Scalar b = f(params);
  if (std::memcmp(&a, &b, sizeof(Scalar)) != 0) {
    throw std::runtime_error("finite_difference_grad: objective is not deterministic");
  }
  return a;
}

template <typename Scalar>
Scalar central_difference(const ScalarObjective<Scalar>& f, ParamSet<Scalar>& params, const Coordinate& c, Scalar eps) {
  Scalar& x = params.value(c.name)[c.index];
  const Scalar saved = x;
  x = saved + eps;
  const Scalar up = f(params);
  x = saved - eps;
  const Scalar down = f(params);
  x = saved;
  return (up - down) / (Scalar(2) * eps);
}

template <typename Scalar>
void check_eps(Scalar eps) {
  if (!(eps > 0) || eps > Scalar(1e-2)) throw std::invalid_argument("finite_difference_grad: eps must lie in (0, 1e-2]");
}

}  // namespace detail

/// Central-difference gradient of `f` with respect to every coordinate of
/// every parameter. Independent of the tape; used as a test oracle.
template <typename Scalar>
GradientMap<Scalar> finite_difference_grad(const ScalarObjective<Scalar>& f, ParamSet<Scalar> params, Scalar eps) {
  detail::check_eps(eps);
  detail::checked_baseline(f, params);
  GradientMap<Scalar> grads;
  for (const auto& name : params.names()) {
    Tensor<Scalar> g(params.value(name).shape());
    for (Index i = 0; i < g.size(); ++i) g[i] = detail::central_difference(f, params, Coordinate{name, i}, eps);
    grads.emplace(name, std::move(g));
  }
  return grads;
}

/// Central differences at a chosen subset of coordinates.
template <typename Scalar>
std::vector<Scalar> finite_difference_grad(const ScalarObjective<Scalar>& f, ParamSet<Scalar> params,
                                           const std::vector<Coordinate>& coords, Scalar eps) {
  detail::check_eps(eps);
  detail::checked_baseline(f, params);
  std::vector<Scalar> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back(detail::central_difference(f, params, c, eps));
  return out;
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero pairs from
/// dominating.
template <typename Scalar>
Scalar relative_error(Scalar a, Scalar b, Scalar floor = Scalar(1e-8)) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace pali
