#pragma once

// Per-mini-batch logit calibration: class-frequency weights, weighted logits
// and the cross-entropy computed on them.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "fedalc/nn.hpp"

namespace fedalc {

struct ClassCounts {
  std::vector<std::size_t> counts;  // n_j per class
  std::size_t total = 0;            // batch size
};

enum class CalibrationMode {
  /// w_j = sqrt(N / n_j): rare classes get larger weights.
  sqrt_inv_freq,
  /// w_j = n_j / sqrt(N), the formula read literally.
  eq5_literal,
  /// w_j = 1 for every class; reduces the calibrated loss to plain
  /// cross-entropy (ablation and equivalence tests).
  unit,
};

CalibrationMode parse_calibration_mode(std::string_view name);
std::string_view to_string(CalibrationMode mode);

struct CalibrationWeights {
  std::vector<double> weights;
  CalibrationMode mode = CalibrationMode::sqrt_inv_freq;
};

/// Throws ValidationError if a label is outside [0, classes).
ClassCounts class_counts(std::span<const Label> labels, std::size_t classes);

/// Classes absent from the batch are treated as if they occurred once.
CalibrationWeights calibration_weights(const ClassCounts& counts, CalibrationMode mode);

/// Column j scaled by w_j.
Tensor calibrate_logits(const Tensor& logits, const CalibrationWeights& w);

/// Cross-entropy of the calibrated logits; the gradient is taken with respect
/// to the raw logits.
LossResult calibrated_cross_entropy(const Tensor& logits, const CalibrationWeights& w, std::span<const Label> labels);

/// Loss function that recomputes weights from each batch's labels.
LossFn calibrated_loss(CalibrationMode mode);

}  // namespace fedalc
