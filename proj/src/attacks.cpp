#include "fedalc/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedalc/error.hpp"

namespace fedalc {

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "none") return AttackKind::none;
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "bim") return AttackKind::bim;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "cw") return AttackKind::cw;
  throw ValidationError("unknown attack kind: " + std::string(name));
}

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::bim: return "bim";
    case AttackKind::pgd: return "pgd";
    case AttackKind::cw: return "cw";
  }
  return "?";
}

AttackConfig AttackConfig::make(AttackKind kind, double epsilon, double step_size, int steps) {
  AttackConfig cfg;
  cfg.kind = kind;
  cfg.epsilon = epsilon;
  cfg.step_size = step_size;
  cfg.steps = steps;
  cfg.random_start = kind == AttackKind::pgd;
  if (kind == AttackKind::fgsm) {
    cfg.step_size = epsilon;
    cfg.steps = 1;
  }
  return cfg;
}

void AttackConfig::validate() const {
  if (kind == AttackKind::none) return;
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ValidationError("attack epsilon must be >= 0");
  if (!(clip_min < clip_max)) throw ValidationError("attack clip range is empty");
  if (kind == AttackKind::fgsm) return;  // one step of size epsilon; step_size and steps unused
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ValidationError("attack step size must be > 0");
  if (steps < 1) throw ValidationError("attack steps must be >= 1");
}

Tensor project_linf(const Tensor& x_adv, const Tensor& x0, double epsilon, double clip_min, double clip_max) {
  if (x_adv.shape() != x0.shape()) {
    throw StructuralError("project_linf: " + shape_str(x_adv.shape()) + " vs " + shape_str(x0.shape()));
  }
  Tensor out(x_adv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ball = std::clamp(x_adv[i], x0[i] - epsilon, x0[i] + epsilon);
    out[i] = std::clamp(ball, clip_min, clip_max);
  }
  return out;
}

LossResult margin_loss(const Tensor& logits, std::span<const Label> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty() || logits.dim(1) < 2) {
    throw StructuralError("margin_loss: logits " + shape_str(logits.shape()) + " vs " +
                          std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  check_labels(labels, C);
  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto y = static_cast<std::size_t>(labels[b]);
    std::size_t best = C;
    for (std::size_t j = 0; j < C; ++j) {
      if (j != y && (best == C || logits.at(b, j) > logits.at(b, best))) best = j;
    }
    r.loss += logits.at(b, best) - logits.at(b, y);
    r.grad.at(b, best) = inv_b;
    r.grad.at(b, y) = -inv_b;
  }
  r.loss *= inv_b;
  return r;
}

Tensor input_gradient(const ModelSpec& spec, const ParamSet& params, const Tensor& x, std::span<const Label> labels,
                      const LossFn& loss) {
  auto fwd = model_forward(spec, params, x);
  const LossResult lr = loss(fwd.logits, labels);
  return model_backward(fwd.tape, lr.grad, {.param_grads = false, .input_grad = true}).input_grad;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor sign_step(const Tensor& x, const Tensor& grad, double step) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + step * sign(grad[i]);
  return out;
}

LossFn objective(AttackKind kind) {
  if (kind == AttackKind::cw) return margin_loss;
  return loss_cross_entropy;
}

// Iterated projected sign ascent shared by pgd, bim and cw.
Tensor iterate(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg,
               bool random_start, Rng* rng, std::vector<double>* trace) {
  cfg.validate();
  const LossFn loss = objective(cfg.kind);
  const Tensor& x0 = batch.x;
  Tensor x = x0;
  if (random_start) {
    for (double& v : x.data()) v += rng->uniform(-cfg.epsilon, cfg.epsilon);
    x = project_linf(x, x0, cfg.epsilon, cfg.clip_min, cfg.clip_max);
  }
  for (int step = 0; step < cfg.steps; ++step) {
    auto fwd = model_forward(spec, params, x);
    const LossResult lr = loss(fwd.logits, batch.y);
    if (trace) trace->push_back(lr.loss);
    const Tensor g = model_backward(fwd.tape, lr.grad, {.param_grads = false, .input_grad = true}).input_grad;
    x = project_linf(sign_step(x, g, cfg.step_size), x0, cfg.epsilon, cfg.clip_min, cfg.clip_max);
  }
  if (trace) trace->push_back(loss(model_logits(spec, params, x), batch.y).loss);
  return x;
}

void expect_kind(const AttackConfig& cfg, std::initializer_list<AttackKind> allowed, const char* who) {
  for (AttackKind k : allowed)
    if (cfg.kind == k) return;
  throw ValidationError(std::string(who) + ": unsupported attack kind " + std::string(to_string(cfg.kind)));
}

}  // namespace

AdvBatch fgsm(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg) {
  expect_kind(cfg, {AttackKind::fgsm}, "fgsm");
  cfg.validate();
  const Tensor g = input_gradient(spec, params, batch.x, batch.y);
  return {project_linf(sign_step(batch.x, g, cfg.epsilon), batch.x, cfg.epsilon, cfg.clip_min, cfg.clip_max),
          &batch};
}

AdvBatch pgd(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg, Rng& rng) {
  expect_kind(cfg, {AttackKind::pgd, AttackKind::bim}, "pgd");
  return {iterate(spec, params, batch, cfg, cfg.random_start, &rng, nullptr), &batch};
}

AdvBatch bim(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg) {
  expect_kind(cfg, {AttackKind::pgd, AttackKind::bim}, "bim");
  return {iterate(spec, params, batch, cfg, false, nullptr, nullptr), &batch};
}

AdvBatch cw_margin_pgd(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg,
                       Rng& rng) {
  expect_kind(cfg, {AttackKind::cw}, "cw_margin_pgd");
  return {iterate(spec, params, batch, cfg, cfg.random_start, &rng, nullptr), &batch};
}

AdvBatch run_attack(const ModelSpec& spec, const ParamSet& params, const Batch& batch, const AttackConfig& cfg,
                    Rng& rng) {
  switch (cfg.kind) {
    case AttackKind::none: return {batch.x, &batch};
    case AttackKind::fgsm: return fgsm(spec, params, batch, cfg);
    case AttackKind::bim: return bim(spec, params, batch, cfg);
    case AttackKind::pgd: return pgd(spec, params, batch, cfg, rng);
    case AttackKind::cw: return cw_margin_pgd(spec, params, batch, cfg, rng);
  }
  throw ValidationError("run_attack: bad attack kind");
}

std::vector<double> attack_loss_trace(const ModelSpec& spec, const ParamSet& params, const Batch& batch,
                                      const AttackConfig& cfg, Rng& rng) {
  expect_kind(cfg, {AttackKind::pgd, AttackKind::bim, AttackKind::cw}, "attack_loss_trace");
  const bool start = cfg.kind != AttackKind::bim && cfg.random_start;
  std::vector<double> trace;
  iterate(spec, params, batch, cfg, start, &rng, &trace);
  return trace;
}

}  // namespace fedalc
