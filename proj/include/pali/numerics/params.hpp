#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pali/numerics/tensor.hpp"

namespace pali {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  bool trainable = true;
};

/// Gradient (or any per-parameter tensor) keyed by parameter name.
template <typename Scalar>
using GradientMap = std::map<std::string, Tensor<Scalar>>;

/// Named parameters with unique hierarchical names, iterated in name order.
template <typename Scalar>
class ParamSet {
 public:
  using Storage = std::map<std::string, Parameter<Scalar>, std::less<>>;

  Parameter<Scalar>& add(std::string name, Tensor<Scalar> value, bool trainable = true) {
    if (params_.contains(name)) throw std::invalid_argument("ParamSet: duplicate parameter name '" + name + "'");
    auto key = name;
    auto [it, _] = params_.emplace(std::move(key), Parameter<Scalar>{std::move(name), std::move(value), trainable});
    return it->second;
  }

  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

  const Parameter<Scalar>& at(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamSet: no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  Parameter<Scalar>& at(std::string_view name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamSet: no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  const Tensor<Scalar>& value(std::string_view name) const { return at(name).value; }
  Tensor<Scalar>& value(std::string_view name) { return at(name).value; }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  Index num_scalars() const {
    Index n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename To>
  ParamSet<To> cast() const {
    ParamSet<To> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<To>(), p.trainable);
    return out;
  }

 private:
  Storage params_;
};

/// True when `name` starts with any of the prefixes.
inline bool matches_any_prefix(std::string_view name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.starts_with(p)) return true;
  }
  return false;
}

}  // namespace pali
