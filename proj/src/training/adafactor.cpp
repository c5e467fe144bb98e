#include "pali/training/adafactor.hpp"

#include <cmath>
#include <stdexcept>

namespace pali {

namespace {

const std::string kPrefix = "adafactor/";

TensorD as_tensor(const Eigen::VectorXd& v) { return TensorD(Shape{v.size()}, v); }

}  // namespace

std::map<std::string, TensorD> AdafactorState::export_slots() const {
  std::map<std::string, TensorD> out;
  for (const auto& [name, slot] : slots) {
    if (slot.factored) {
      out.emplace(kPrefix + name + "/row", as_tensor(slot.row));
      out.emplace(kPrefix + name + "/col", as_tensor(slot.col));
    } else {
      out.emplace(kPrefix + name + "/full", as_tensor(slot.full));
    }
  }
  return out;
}

AdafactorState AdafactorState::import_slots(const std::map<std::string, TensorD>& tensors, std::int64_t step) {
  AdafactorState state;
  state.step = step;
  for (const auto& [key, t] : tensors) {
    if (!key.starts_with(kPrefix)) continue;
    const auto slash = key.rfind('/');
    if (slash == std::string::npos || slash < kPrefix.size()) throw std::runtime_error("bad optimizer slot name: " + key);
    const auto name = key.substr(kPrefix.size(), slash - kPrefix.size());
    const auto part = key.substr(slash + 1);
    auto& slot = state.slots[name];
    if (part == "row") {
      slot.factored = true;
      slot.row = t.vec();
    } else if (part == "col") {
      slot.factored = true;
      slot.col = t.vec();
    } else if (part == "full") {
      slot.full = t.vec();
    } else {
      throw std::runtime_error("bad optimizer slot name: " + key);
    }
  }
  return state;
}

void adafactor_update(AdafactorState& state, ParamSet<double>& params, const GradientMap<double>& grads, double lr,
                      const std::vector<std::string>& frozen_prefixes) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::invalid_argument("adafactor_update: gradient for unknown parameter '" + name + "'");
    if (params.value(name).shape() != g.shape()) {
      throw ShapeError("adafactor_update: gradient shape " + shape_string(g.shape()) + " does not match parameter '" +
                       name + "' " + shape_string(params.value(name).shape()));
    }
  }
  const double b = state.decay;
  for (auto& [name, p] : params) {
    if (!p.trainable || matches_any_prefix(name, frozen_prefixes)) continue;
    const auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adafactor_update: no gradient for trainable parameter '" + name + "'");
    const TensorD& g = it->second;
    auto& slot = state.slots[name];
    Eigen::ArrayXXd u;
    if (g.rank() >= 2) {
      const auto m = g.matrix();
      const Eigen::ArrayXXd g2 = m.array().square();
      if (slot.row.size() != m.rows() || slot.col.size() != m.cols()) {
        slot.factored = true;
        slot.row = Eigen::VectorXd::Zero(m.rows());
        slot.col = Eigen::VectorXd::Zero(m.cols());
      }
      slot.row = b * slot.row.array() + (1 - b) * g2.rowwise().mean();
      slot.col = b * slot.col.array() + (1 - b) * g2.colwise().mean().transpose();
      const double row_mean = slot.row.mean();
      Eigen::ArrayXXd v = Eigen::ArrayXXd::Zero(m.rows(), m.cols());
      if (row_mean > 0) v = (slot.row * slot.col.transpose()).array() / row_mean;
      u = m.array() / (v + state.epsilon).sqrt();
    } else {
      if (slot.full.size() != g.size()) slot.full = Eigen::VectorXd::Zero(g.size());
      slot.full = b * slot.full.array() + (1 - b) * g.vec().array().square();
      u = g.vec().array() / (slot.full.array() + state.epsilon).sqrt();
    }
    const double rms = std::sqrt(u.square().mean());
    const double denom = std::max(1.0, rms / state.clip_threshold);
    auto& value = p.value;
    if (g.rank() >= 2) {
      value.matrix().array() -= lr * u / denom;
    } else {
      value.vec().array() -= lr * u.col(0) / denom;
    }
  }
  ++state.step;
}

}  // namespace pali
