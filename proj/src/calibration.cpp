#include "fedalc/calibration.hpp"

#include <cmath>
#include <string>

#include "fedalc/error.hpp"

namespace fedalc {

CalibrationMode parse_calibration_mode(std::string_view name) {
  if (name == "sqrt_inv_freq") return CalibrationMode::sqrt_inv_freq;
  if (name == "eq5_literal") return CalibrationMode::eq5_literal;
  if (name == "unit") return CalibrationMode::unit;
  throw ValidationError("unknown calibration mode: " + std::string(name));
}

std::string_view to_string(CalibrationMode mode) {
  switch (mode) {
    case CalibrationMode::sqrt_inv_freq: return "sqrt_inv_freq";
    case CalibrationMode::eq5_literal: return "eq5_literal";
    case CalibrationMode::unit: return "unit";
  }
  return "?";
}

ClassCounts class_counts(std::span<const Label> labels, std::size_t classes) {
  check_labels(labels, classes);
  ClassCounts cc{std::vector<std::size_t>(classes, 0), labels.size()};
  for (Label y : labels) ++cc.counts[static_cast<std::size_t>(y)];
  return cc;
}

CalibrationWeights calibration_weights(const ClassCounts& cc, CalibrationMode mode) {
  if (cc.total == 0) throw ValidationError("calibration_weights: empty batch");
  CalibrationWeights w{std::vector<double>(cc.counts.size()), mode};
  const double n_total = static_cast<double>(cc.total);
  for (std::size_t j = 0; j < cc.counts.size(); ++j) {
    const double n = static_cast<double>(cc.counts[j] == 0 ? 1 : cc.counts[j]);
    switch (mode) {
      case CalibrationMode::sqrt_inv_freq: w.weights[j] = std::sqrt(n_total / n); break;
      case CalibrationMode::eq5_literal: w.weights[j] = n / std::sqrt(n_total); break;
      case CalibrationMode::unit: w.weights[j] = 1.0; break;
    }
  }
  return w;
}

Tensor calibrate_logits(const Tensor& logits, const CalibrationWeights& w) {
  if (logits.rank() != 2 || logits.dim(1) != w.weights.size()) {
    throw StructuralError("calibrate_logits: logits " + shape_str(logits.shape()) + " vs " +
                          std::to_string(w.weights.size()) + " weights");
  }
  Tensor out = logits;
  const std::size_t C = logits.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= w.weights[i % C];
  return out;
}

LossResult calibrated_cross_entropy(const Tensor& logits, const CalibrationWeights& w,
                                    std::span<const Label> labels) {
  LossResult r = loss_cross_entropy(calibrate_logits(logits, w), labels);
  const std::size_t C = logits.dim(1);
  for (std::size_t i = 0; i < r.grad.size(); ++i) r.grad[i] *= w.weights[i % C];
  return r;
}

LossFn calibrated_loss(CalibrationMode mode) {
  return [mode](const Tensor& logits, std::span<const Label> labels) {
    const auto w = calibration_weights(class_counts(labels, logits.dim(1)), mode);
    return calibrated_cross_entropy(logits, w, labels);
  };
}

}  // namespace fedalc
