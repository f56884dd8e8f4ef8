#include <algorithm>
#include <cmath>

#include "fedalc/error.hpp"
#include "fedalc/nn.hpp"

namespace fedalc {

double grad_rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport finite_difference_check(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                                        std::span<const Label> labels, double h, double tol, const LossFn& loss) {
  if (!(h > 0.0 && h <= 1e-3)) throw ValidationError("finite_difference_check: h must lie in (0, 1e-3]");
  if (x.rank() == 0 || x.dim(0) == 0 || x.dim(0) > 8) {
    throw ValidationError("finite_difference_check: batch must hold 1..8 samples");
  }

  auto fwd = model_forward(spec, params, x);
  const LossResult lr = loss(fwd.logits, labels);
  const BackwardResult grads = model_backward(fwd.tape, lr.grad);

  auto loss_at = [&](const ParamSet& p, const Tensor& input) { return loss(model_logits(spec, p, input), labels).loss; };

  GradCheckReport report;
  ParamSet probe = params;
  for (std::size_t k = 0; k < spec.num_layers(); ++k) {
    if (!has_params(spec.layers()[k])) continue;
    LayerGradError entry{k, layer_name(spec.layers()[k])};
    auto sweep = [&](bool bias) {
      double worst = 0.0;
      const Tensor& analytic = bias ? grads.param_grads.layer(k).bias : grads.param_grads.layer(k).weight;
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        auto& t = bias ? probe.mutable_layer(k).bias : probe.mutable_layer(k).weight;
        const double orig = t[i];
        t[i] = orig + h;
        const double up = loss_at(probe, x);
        auto& t2 = bias ? probe.mutable_layer(k).bias : probe.mutable_layer(k).weight;
        t2[i] = orig - h;
        const double down = loss_at(probe, x);
        auto& t3 = bias ? probe.mutable_layer(k).bias : probe.mutable_layer(k).weight;
        t3[i] = orig;
        worst = std::max(worst, grad_rel_error(analytic[i], (up - down) / (2.0 * h)));
      }
      return worst;
    };
    entry.weight_rel = sweep(false);
    entry.bias_rel = sweep(true);
    entry.passed = entry.weight_rel < tol && entry.bias_rel < tol;
    report.max_rel = std::max({report.max_rel, entry.weight_rel, entry.bias_rel});
    report.passed = report.passed && entry.passed;
    report.layers.push_back(std::move(entry));
  }

  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double up = loss_at(params, xp);
    xp[i] = x[i] - h;
    const double down = loss_at(params, xp);
    xp[i] = x[i];
    report.input_rel = std::max(report.input_rel, grad_rel_error(grads.input_grad[i], (up - down) / (2.0 * h)));
  }
  report.max_rel = std::max(report.max_rel, report.input_rel);
  report.passed = report.passed && report.input_rel < tol;
  return report;
}

}  // namespace fedalc
