#pragma once

// Sign-gradient attacks under an l-infinity budget.

#include <string_view>
#include <vector>

#include "fedalc/nn.hpp"
#include "fedalc/rng.hpp"

namespace fedalc {

enum class AttackKind { none, fgsm, bim, pgd, cw };

AttackKind parse_attack_kind(std::string_view name);
std::string_view to_string(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::none;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 10;
  bool random_start = false;
  double clip_min = 0.0;
  double clip_max = 1.0;

  /// Defaults per kind: fgsm takes one step of size epsilon; pgd starts at a
  /// random point in the ball; bim and cw start at the clean input.
  static AttackConfig make(AttackKind kind, double epsilon = 8.0 / 255.0, double step_size = 2.0 / 255.0,
                           int steps = 10);

  /// Throws ValidationError on an inconsistent configuration. fgsm ignores
  /// step_size and steps.
  void validate() const;
};

struct AdvBatch {
  Tensor x_adv;
  const Batch* source = nullptr;
};

/// clamp(clamp(x_adv, x0 - eps, x0 + eps), clip_min, clip_max), element-wise.
Tensor project_linf(const Tensor& x_adv, const Tensor& x0, double epsilon, double clip_min, double clip_max);

/// Untargeted margin max_{j != y} z_j - z_y, averaged over the batch, with
/// its gradient. Ties pick the lowest competing class.
LossResult margin_loss(const Tensor& logits, std::span<const Label> labels);

/// Gradient of the batch cross-entropy with respect to the input.
Tensor input_gradient(const ModelSpec& spec, const ParamSet& params, const Tensor& x, std::span<const Label> labels,
                      const LossFn& loss = loss_cross_entropy);

AdvBatch fgsm(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg);
/// Accepts kind pgd or bim.
AdvBatch pgd(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg, Rng& rng);
/// pgd with random_start forced off.
AdvBatch bim(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg);
/// pgd ascending the margin loss instead of the cross-entropy.
AdvBatch cw_margin_pgd(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg,
                       Rng& rng);

/// Dispatches on cfg.kind; kind none returns the clean input.
AdvBatch run_attack(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg,
                    Rng& rng);

/// Batch loss of every iterate x^0 .. x^steps of an iterative attack (the
/// attacked objective: margin for cw, cross-entropy otherwise).
std::vector<double> attack_loss_trace(const ModelSpec& spec, const ParamSet& params, const Batch& batch,
                                      const AttackConfig& cfg, Rng& rng);

}  // namespace fedalc
