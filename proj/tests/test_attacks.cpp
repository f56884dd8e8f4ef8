#include <doctest.h>

#include <cmath>

#include "fedalc/attacks.hpp"
#include "fedalc/error.hpp"
#include "helpers.hpp"

using namespace fedalc;
using testutil::random_labels;
using testutil::random_tensor;

namespace {

struct Toy {
  ModelSpec spec;
  ParamSet params;
  Batch batch;
};

Toy toy(Rng& rng, std::size_t batch = 6) {
  ModelSpec spec({1, 4, 4}, {Flatten{}, Dense{16, 8}, ReLU{}, Dense{8, 3}});
  ParamSet p = init_params(spec, rng);
  return {spec, p, Batch{random_tensor({batch, 1, 4, 4}, rng, 0, 1), random_labels(batch, 3, rng)}};
}

Toy linear_toy(Rng& rng, std::size_t batch = 6) {
  ModelSpec spec({5}, {Dense{5, 3}});
  ParamSet p = init_params(spec, rng);
  return {spec, p, Batch{random_tensor({batch, 5}, rng, 0, 1), random_labels(batch, 3, rng)}};
}

double linf(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

}  // namespace

TEST_SUITE("attacks") {
  TEST_CASE("project_linf examples") {
    const Tensor x0({1}, std::vector<double>{0.5});
    CHECK(project_linf(x0, x0, 8.0 / 255, 0, 1) == x0);
    const Tensor far({1}, std::vector<double>{0.9});
    CHECK(project_linf(far, x0, 8.0 / 255, 0, 1)[0] == doctest::Approx(0.53137).epsilon(1e-5));
    CHECK(project_linf(far, x0, 8.0 / 255, 0, 1)[0] == 0.5 + 8.0 / 255);
    const Tensor a({1}, std::vector<double>{-0.2}), b({1}, std::vector<double>{0.01});
    CHECK(project_linf(a, b, 0.1, 0, 1)[0] == 0.0);
    CHECK_THROWS_AS(project_linf(Tensor({2}), Tensor({3}), 0.1, 0, 1), StructuralError);
  }

  TEST_CASE("config validation and defaults") {
    const auto f = AttackConfig::make(AttackKind::fgsm);
    CHECK(f.step_size == f.epsilon);
    CHECK(f.steps == 1);
    CHECK(AttackConfig::make(AttackKind::pgd).random_start);
    CHECK_FALSE(AttackConfig::make(AttackKind::bim).random_start);
    CHECK_FALSE(AttackConfig::make(AttackKind::cw).random_start);
    CHECK(AttackConfig::make(AttackKind::pgd).epsilon == 8.0 / 255);
    CHECK(AttackConfig::make(AttackKind::pgd).step_size == 2.0 / 255);
    AttackConfig bad = AttackConfig::make(AttackKind::pgd);
    bad.clip_min = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = AttackConfig::make(AttackKind::pgd);
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = AttackConfig::make(AttackKind::pgd);
    bad.epsilon = -0.1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    for (auto k : {AttackKind::none, AttackKind::fgsm, AttackKind::bim, AttackKind::pgd, AttackKind::cw})
      CHECK(parse_attack_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_attack_kind("deepfool"), ValidationError);
  }

  TEST_CASE("fgsm with zero gradient leaves the input alone") {
    Rng rng(1);
    ModelSpec spec({3}, {Dense{3, 2}});
    const ParamSet zero = zeros_like(spec);
    const Batch b{random_tensor({2, 3}, rng, 0, 1), {0, 1}};
    CHECK(fgsm(spec, zero, b, AttackConfig::make(AttackKind::fgsm)).x_adv == b.x);
  }

  TEST_CASE("fgsm on a scalar input with positive gradient adds epsilon") {
    // logits (-w x, 0) with label 0: d loss / dx = w * p1 > 0 for w > 0.
    ModelSpec spec({1}, {Dense{1, 2}});
    ParamSet p = zeros_like(spec);
    p.mutable_layer(0).weight[0] = -1.5;
    const Batch b{Tensor({1, 1}, std::vector<double>{0.4}), {0}};
    const auto cfg = AttackConfig::make(AttackKind::fgsm);
    CHECK(input_gradient(spec, p, b.x, b.y)[0] > 0);
    CHECK(fgsm(spec, p, b, cfg).x_adv[0] == 0.4 + 8.0 / 255);
  }

  TEST_CASE("epsilon zero leaves inputs unchanged for every attack") {
    Rng rng(2);
    auto t = toy(rng);
    for (auto kind : {AttackKind::fgsm, AttackKind::bim, AttackKind::pgd, AttackKind::cw}) {
      const auto cfg = AttackConfig::make(kind, 0.0, 2.0 / 255, 7);
      CHECK(run_attack(t.spec, t.params, t.batch, cfg, rng).x_adv == t.batch.x);
    }
  }

  TEST_CASE("pgd with one step of size epsilon and no random start is fgsm") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      auto t = toy(rng);
      AttackConfig cfg = AttackConfig::make(AttackKind::pgd, 8.0 / 255, 8.0 / 255, 1);
      cfg.random_start = false;
      CHECK(pgd(t.spec, t.params, t.batch, cfg, rng).x_adv ==
            fgsm(t.spec, t.params, t.batch, AttackConfig::make(AttackKind::fgsm)).x_adv);
      const auto bcfg = AttackConfig::make(AttackKind::bim, 8.0 / 255, 8.0 / 255, 1);
      CHECK(bim(t.spec, t.params, t.batch, bcfg).x_adv ==
            fgsm(t.spec, t.params, t.batch, AttackConfig::make(AttackKind::fgsm)).x_adv);
    }
  }

  TEST_CASE("bim equals pgd without random start") {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      auto t = toy(rng);
      AttackConfig cfg = AttackConfig::make(AttackKind::pgd);
      cfg.random_start = false;
      CHECK(bim(t.spec, t.params, t.batch, cfg).x_adv == pgd(t.spec, t.params, t.batch, cfg, rng).x_adv);
    }
  }

  TEST_CASE("every attack respects the budget and the clip range") {
    Rng rng(5);
    for (int i = 0; i < 40; ++i) {
      auto t = toy(rng);
      for (auto kind : {AttackKind::fgsm, AttackKind::bim, AttackKind::pgd, AttackKind::cw}) {
        const double eps = rng.uniform(0.0, 0.3);
        const auto cfg = AttackConfig::make(kind, eps, eps / 3 + 1e-6, 5);
        const Tensor before = t.batch.x;
        const auto adv = run_attack(t.spec, t.params, t.batch, cfg, rng);
        CHECK(t.batch.x == before);
        CHECK(linf(adv.x_adv, t.batch.x) <= cfg.epsilon + 1e-12);
        for (double v : adv.x_adv.data()) CHECK((v >= 0.0 && v <= 1.0));
      }
    }
  }

  TEST_CASE("random start stays inside the ball and differs from the clean start") {
    Rng rng(6);
    auto t = toy(rng);
    // One short step, so the two iterates cannot both saturate at the ball's corners.
    const auto cfg = AttackConfig::make(AttackKind::pgd, 8.0 / 255, 1e-4, 1);
    const auto a = pgd(t.spec, t.params, t.batch, cfg, rng);
    const auto b = pgd(t.spec, t.params, t.batch, cfg, rng);
    CHECK(a.x_adv != b.x_adv);
    CHECK(linf(a.x_adv, t.batch.x) <= cfg.epsilon + 1e-12);
  }

  TEST_CASE("margin loss and its gradient on a linear two-class model") {
    // z = (w.x, 0), label 0: margin = -w.x, d margin / dx = -w.
    ModelSpec spec({3}, {Dense{3, 2}});
    ParamSet p = zeros_like(spec);
    const double w[3] = {0.5, -1.0, 2.0};
    for (int i = 0; i < 3; ++i) p.mutable_layer(0).weight.at(i, 0) = w[i];
    const Tensor x({1, 3}, std::vector<double>{0.1, 0.2, 0.3});
    const std::vector<Label> y{0};
    const auto m = margin_loss(model_logits(spec, p, x), y);
    CHECK(m.loss == doctest::Approx(-(0.05 - 0.2 + 0.6)));
    const Tensor g = input_gradient(spec, p, x, y, margin_loss);
    for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(-w[i]).epsilon(1e-15));
  }

  TEST_CASE("margin loss ties pick the lowest competing class") {
    const Tensor z({1, 3}, std::vector<double>{0, 2, 2});
    const std::vector<Label> y{0};
    const auto m = margin_loss(z, y);
    CHECK(m.loss == 2.0);
    CHECK(m.grad == Tensor({1, 3}, std::vector<double>{-1, 1, 0}));
  }

  TEST_CASE("iterative attacks do not decrease the loss on linear models") {
    Rng rng(7);
    for (int i = 0; i < 30; ++i) {
      auto t = linear_toy(rng);
      for (auto kind : {AttackKind::bim, AttackKind::cw}) {
        const auto cfg = AttackConfig::make(kind, 8.0 / 255, 2.0 / 255, 10);
        const auto trace = attack_loss_trace(t.spec, t.params, t.batch, cfg, rng);
        REQUIRE(trace.size() == 11);
        for (std::size_t s = 1; s < trace.size(); ++s) CHECK(trace[s] >= trace[s - 1] - 1e-9);
      }
    }
  }

  TEST_CASE("five steps reach at least the loss of one step") {
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
      auto t = linear_toy(rng);
      const auto c1 = AttackConfig::make(AttackKind::bim, 8.0 / 255, 2.0 / 255, 1);
      const auto c5 = AttackConfig::make(AttackKind::bim, 8.0 / 255, 2.0 / 255, 5);
      const double l1 = loss_cross_entropy(model_logits(t.spec, t.params, bim(t.spec, t.params, t.batch, c1).x_adv), t.batch.y).loss;
      const double l5 = loss_cross_entropy(model_logits(t.spec, t.params, bim(t.spec, t.params, t.batch, c5).x_adv), t.batch.y).loss;
      CHECK(l5 >= l1 - 1e-9);
    }
  }

  TEST_CASE("none returns the clean batch") {
    Rng rng(9);
    auto t = toy(rng);
    CHECK(run_attack(t.spec, t.params, t.batch, AttackConfig{}, rng).x_adv == t.batch.x);
  }
}
