#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "pali/numerics.hpp"

namespace pali {

/// Per-parameter arithmetic mean of two or more parameter sets with identical
/// names and shapes. Throws std::invalid_argument naming the first entry
/// (in name order) that differs.
template <typename Scalar>
ParamSet<Scalar> soup(const std::vector<const ParamSet<Scalar>*>& sets) {
  if (sets.size() < 2) throw std::invalid_argument("soup: need at least 2 parameter sets, got " + std::to_string(sets.size()));
  const auto& first = *sets.front();
  for (std::size_t k = 1; k < sets.size(); ++k) {
    const auto& other = *sets[k];
    auto a = first.begin();
    auto b = other.begin();
    for (; a != first.end() && b != other.end(); ++a, ++b) {
      if (a->first != b->first) {
        throw std::invalid_argument("soup: manifest mismatch at '" + std::min(a->first, b->first) + "' (set 0 has '" +
                                    a->first + "', set " + std::to_string(k) + " has '" + b->first + "')");
      }
      if (a->second.value.shape() != b->second.value.shape()) {
        throw std::invalid_argument("soup: manifest mismatch at '" + a->first + "': shape " +
                                    shape_string(a->second.value.shape()) + " vs " +
                                    shape_string(b->second.value.shape()) + " in set " + std::to_string(k));
      }
    }
    if (a != first.end() || b != other.end()) {
      const auto& name = a != first.end() ? a->first : b->first;
      throw std::invalid_argument("soup: manifest mismatch at '" + name + "': present in only one of set 0 and set " +
                                  std::to_string(k));
    }
  }
  ParamSet<Scalar> out;
  const auto n = static_cast<Scalar>(sets.size());
  for (const auto& [name, p] : first) {
    Tensor<Scalar> sum = p.value;
    for (std::size_t k = 1; k < sets.size(); ++k) sum.vec() += sets[k]->value(name).vec();
    sum.vec() /= n;
    out.add(name, std::move(sum), p.trainable);
  }
  return out;
}

template <typename Scalar>
ParamSet<Scalar> soup(const ParamSet<Scalar>& a, const ParamSet<Scalar>& b) {
  return soup<Scalar>({&a, &b});
}

}  // namespace pali
