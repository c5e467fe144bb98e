#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pali/numerics.hpp"

namespace pali {

/// Second-moment slot for one parameter. Tensors of rank >= 2 are viewed as
/// [rows, last_dim] and keep row/column accumulators; others keep a full one.
struct AdafactorSlot {
  bool factored = false;
  Eigen::VectorXd row;
  Eigen::VectorXd col;
  Eigen::VectorXd full;
};

/// Adafactor without first moment (beta1 = 0), constant second-moment decay.
struct AdafactorState {
  double decay = 0.8;
  double epsilon = 1e-30;
  double clip_threshold = 1.0;
  std::int64_t step = 0;
  std::map<std::string, AdafactorSlot> slots;

  /// Flat tensors keyed "adafactor/<param>/{row,col,full}" for checkpoints.
  std::map<std::string, TensorD> export_slots() const;
  static AdafactorState import_slots(const std::map<std::string, TensorD>& tensors, std::int64_t step);
};

/// One update of every parameter that has a gradient and is neither frozen
/// nor marked non-trainable:
///   v <- decay*v + (1-decay)*g^2  (factored: row/col means of g^2)
///   u  = g / sqrt(v_hat + epsilon), scaled down so RMS(u) <= clip_threshold
///   p <- p - lr*u
/// Throws ShapeError on a gradient/parameter shape mismatch and
/// std::invalid_argument when a trainable parameter has no gradient.
void adafactor_update(AdafactorState& state, ParamSet<double>& params, const GradientMap<double>& grads, double lr,
                      const std::vector<std::string>& frozen_prefixes = {});

}  // namespace pali
