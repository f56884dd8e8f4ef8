#include <doctest.h>

#include <cmath>
#include <string>

#include "fedalc/calibration.hpp"
#include "fedalc/error.hpp"
#include "fedalc/nn.hpp"
#include "helpers.hpp"

using namespace fedalc;
using testutil::random_labels;
using testutil::random_tensor;

namespace {

ModelSpec dense22() { return ModelSpec({2}, {Dense{2, 2}}); }

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("zero dense layer maps everything to zero") {
    const auto spec = dense22();
    const ParamSet p = zeros_like(spec);
    const Tensor x({1, 2}, std::vector<double>{3, 5});
    CHECK(model_logits(spec, p, x) == Tensor({1, 2}, std::vector<double>{0, 0}));
  }

  TEST_CASE("identity dense layer") {
    const auto spec = dense22();
    ParamSet p = zeros_like(spec);
    auto& w = p.mutable_layer(0).weight;
    w.at(0, 0) = 1;
    w.at(1, 1) = 1;
    const Tensor x({1, 2}, std::vector<double>{1, -2});
    CHECK(model_logits(spec, p, x) == x);
  }

  TEST_CASE("Dense-ReLU-Dense equals hand-chained products") {
    Rng rng(1);
    const ModelSpec spec({4}, {Dense{4, 3}, ReLU{}, Dense{3, 3}});
    ParamSet p = init_params(spec, rng);
    for (double& b : p.mutable_layer(0).bias.data()) b = rng.uniform(-0.3, 0.3);
    for (double& b : p.mutable_layer(2).bias.data()) b = rng.uniform(-0.3, 0.3);
    const Tensor x = random_tensor({5, 4}, rng);
    const Tensor z = model_logits(spec, p, x);

    const auto& W1 = p.layer(0).weight;
    const auto& b1 = p.layer(0).bias;
    const auto& W2 = p.layer(2).weight;
    const auto& b2 = p.layer(2).bias;
    for (std::size_t n = 0; n < 5; ++n) {
      double h[3];
      for (int j = 0; j < 3; ++j) {
        double s = b1[j];
        for (int i = 0; i < 4; ++i) s += x.at(n, i) * W1.at(i, j);
        h[j] = s > 0 ? s : 0;
      }
      for (int c = 0; c < 3; ++c) {
        double s = b2[c];
        for (int j = 0; j < 3; ++j) s += h[j] * W2.at(j, c);
        CHECK(z.at(n, c) == doctest::Approx(s).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("forward is bitwise deterministic") {
    Rng rng(2);
    const auto spec = make_cnn({1, 16, 16}, 4);
    const ParamSet p = init_params(spec, rng);
    const Tensor x = random_tensor({3, 1, 16, 16}, rng, 0, 1);
    CHECK(model_logits(spec, p, x) == model_logits(spec, p, x));
    CHECK(model_forward(spec, p, x).logits == model_logits(spec, p, x));
  }

  TEST_CASE("structural errors name the offending layer") {
    try {
      ModelSpec({5}, {Dense{5, 4}, ReLU{}, Dense{3, 2}});
      FAIL("expected StructuralError");
    } catch (const StructuralError& e) {
      CHECK(std::string(e.what()).find("layer 2 (Dense") != std::string::npos);
    }
    try {
      ModelSpec({1, 4, 4}, {Conv2d{1, 2, 5}});
      FAIL("expected StructuralError");
    } catch (const StructuralError& e) {
      CHECK(std::string(e.what()).find("layer 0 (Conv2d") != std::string::npos);
    }
    const auto spec = dense22();
    const ParamSet p = zeros_like(spec);
    try {
      model_logits(spec, p, Tensor({1, 3}));
      FAIL("expected StructuralError");
    } catch (const StructuralError& e) {
      CHECK(std::string(e.what()).find("layer 0 (Dense") != std::string::npos);
    }
  }

  TEST_CASE("mlp and cnn builders give the expected shapes") {
    const auto mlp = make_mlp({1, 28, 28}, 128, 10);
    CHECK(mlp.num_layers() == 4);
    CHECK(mlp.shape_at(1) == Shape{784});
    CHECK(mlp.num_classes() == 10);
    const auto cnn = make_cnn({1, 28, 28}, 10);
    CHECK(cnn.num_layers() == 10);
    CHECK(cnn.shape_at(6) == Shape{32, 4, 4});
    CHECK(cnn.shape_at(7) == Shape{512});
    CHECK(cnn.num_classes() == 10);
  }

  TEST_CASE("glorot init bounds and zero biases") {
    Rng rng(3);
    const ModelSpec spec({6}, {Dense{6, 10}});
    const ParamSet p = init_params(spec, rng);
    const double lim = std::sqrt(6.0 / 16.0);
    for (double w : p.layer(0).weight.data()) CHECK(std::abs(w) <= lim);
    for (double b : p.layer(0).bias.data()) CHECK(b == 0.0);
  }

  TEST_CASE("zero upstream gradient gives zero gradients") {
    Rng rng(4);
    const ModelSpec spec({1, 6, 6}, {Conv2d{1, 2, 3}, ReLU{}, MaxPool2d{2, 2}, Flatten{}, Dense{8, 3}});
    const ParamSet p = init_params(spec, rng);
    auto fwd = model_forward(spec, p, random_tensor({2, 1, 6, 6}, rng, 0, 1));
    const auto g = model_backward(fwd.tape, Tensor({2, 3}));
    CHECK(g.param_grads == zeros_like(p));
    for (double v : g.input_grad.data()) CHECK(v == 0.0);
  }

  TEST_CASE("tapes are single use and reject stale parameters") {
    Rng rng(5);
    const auto spec = dense22();
    ParamSet p = init_params(spec, rng);
    const Tensor x = random_tensor({1, 2}, rng);
    auto fwd = model_forward(spec, p, x);
    model_backward(fwd.tape, Tensor({1, 2}, 1.0));
    CHECK(fwd.tape.consumed());
    CHECK_THROWS_AS(model_backward(fwd.tape, Tensor({1, 2}, 1.0)), UsageError);

    auto fwd2 = model_forward(spec, p, x);
    p.mutable_layer(0).bias[0] += 1.0;
    CHECK_THROWS_AS(model_backward(fwd2.tape, Tensor({1, 2}, 1.0)), UsageError);

    Tape empty;
    CHECK_THROWS_AS(model_backward(empty, Tensor({1, 2}, 1.0)), UsageError);
  }

  TEST_CASE("cross-entropy values") {
    const std::vector<Label> y0{0};
    CHECK(loss_cross_entropy(Tensor({1, 2}, std::vector<double>{0, 0}), y0).loss ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(loss_cross_entropy(Tensor({1, 2}, std::vector<double>{0, 0}), y0).loss == doctest::Approx(0.693147).epsilon(1e-6));
    const auto big = loss_cross_entropy(Tensor({1, 2}, std::vector<double>{1000, 0}), y0);
    CHECK(std::isfinite(big.loss));
    CHECK(big.loss < 1e-300);
    CHECK(big.grad.all_finite());
    const double hand = std::log(1.0 + std::exp(-1.0));
    CHECK(loss_cross_entropy(Tensor({1, 2}, std::vector<double>{1, 0}), y0).loss == doctest::Approx(hand).epsilon(1e-15));
    CHECK(hand == doctest::Approx(0.313262).epsilon(1e-6));
  }

  TEST_CASE("cross-entropy gradient is (softmax - onehot) / B") {
    const Tensor z({2, 3}, std::vector<double>{1, 2, 3, 0, 0, 0});
    const std::vector<Label> y{2, 1};
    const auto r = loss_cross_entropy(z, y);
    const double s = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(r.grad.at(0, 0) == doctest::Approx(std::exp(1.0) / s / 2));
    CHECK(r.grad.at(0, 2) == doctest::Approx((std::exp(3.0) / s - 1) / 2));
    CHECK(r.grad.at(1, 1) == doctest::Approx((1.0 / 3 - 1) / 2));
  }

  TEST_CASE("cross-entropy is translation invariant per row") {
    Rng rng(6);
    for (int t = 0; t < 50; ++t) {
      Tensor z = random_tensor({4, 5}, rng, -5, 5);
      const auto y = random_labels(4, 5, rng);
      const double base = loss_cross_entropy(z, y).loss;
      const double c = rng.uniform(-50, 50);
      for (double& v : z.data()) v += c;
      CHECK(std::abs(loss_cross_entropy(z, y).loss - base) < 1e-12);
    }
  }

  TEST_CASE("labels out of range are rejected") {
    const std::vector<Label> bad{2};
    CHECK_THROWS_AS(loss_cross_entropy(Tensor({1, 2}), bad), ValidationError);
    const std::vector<Label> neg{-1};
    CHECK_THROWS_AS(check_labels(neg, 3), ValidationError);
  }

  TEST_CASE("adam: zero gradient is a fixed point and t increments") {
    Rng rng(7);
    const auto spec = make_mlp({3}, 4, 2);
    ParamSet p = init_params(spec, rng);
    const ParamSet before = p;
    AdamState st = AdamState::for_params(p);
    adam_step(p, zeros_like(p), st, 0.01);
    CHECK(p == before);
    CHECK(st.t == 1);
    adam_step(p, zeros_like(p), st, 0.01);
    CHECK(st.t == 2);
  }

  TEST_CASE("adam: first step is -lr * sign(g)") {
    Rng rng(8);
    const auto spec = make_mlp({3}, 4, 2);
    ParamSet p = init_params(spec, rng);
    const ParamSet before = p;
    ParamSet g = zeros_like(p);
    g.for_each_tensor([&](Tensor& t) {
      for (double& v : t.data()) v = rng.uniform(-1, 1);
    });
    AdamState st = AdamState::for_params(p);
    const double lr = 0.001;
    adam_step(p, g, st, lr);
    for (std::size_t k = 0; k < p.num_layers(); ++k) {
      const auto& w = p.layer(k).weight;
      const auto& gw = g.layer(k).weight;
      for (std::size_t i = 0; i < w.size(); ++i) {
        // |g| / (|g| + eps) differs from 1 by at most eps / |g|.
        const double expected = -lr * (gw[i] > 0 ? 1 : -1);
        CHECK(std::abs((w[i] - before.layer(k).weight[i]) - expected) < lr * 1e-8 / std::abs(gw[i]) + 1e-15);
      }
    }
  }

  TEST_CASE("adam: rejects incongruent gradients and bad learning rates") {
    Rng rng(9);
    ParamSet p = init_params(make_mlp({3}, 4, 2), rng);
    const ParamSet other = init_params(make_mlp({3}, 5, 2), rng);
    AdamState st = AdamState::for_params(p);
    CHECK_THROWS_AS(adam_step(p, other, st, 0.1), StructuralError);
    CHECK_THROWS_AS(adam_step(p, zeros_like(p), st, 0.0), ValidationError);
  }

  TEST_CASE("paramset arithmetic") {
    Rng rng(10);
    const auto spec = make_mlp({3}, 4, 2);
    ParamSet a = init_params(spec, rng), b = init_params(spec, rng);
    ParamSet c = a;
    c.axpy(-1.0, b);
    double sq = 0;
    c.for_each_tensor([&](Tensor& t) {
      for (double v : t.data()) sq += v * v;
    });
    CHECK(a.squared_distance(b) == doctest::Approx(sq).epsilon(1e-14));
    c.scale(0.0);
    CHECK(c == zeros_like(a));
    CHECK(a.size() == 3 * 4 + 4 + 4 * 2 + 2);
    CHECK_FALSE(a.congruent(init_params(make_mlp({3}, 5, 2), rng)));
  }

  TEST_CASE("gradient check: linear model and cross-entropy") {
    Rng rng(11);
    const ModelSpec spec({3}, {Dense{3, 4}});
    const ParamSet p = init_params(spec, rng);
    const Tensor x = random_tensor({4, 3}, rng);
    const auto y = random_labels(4, 4, rng);
    const auto r = finite_difference_check(spec, p, x, y, 1e-5, 1e-4);
    CHECK(r.passed);
    CHECK(r.max_rel < 1e-8);
  }

  TEST_CASE("gradient check: Dense+ReLU stack") {
    Rng rng(12);
    const ModelSpec spec({5}, {Dense{5, 6}, ReLU{}, Dense{6, 6}, ReLU{}, Dense{6, 3}});
    ParamSet p = init_params(spec, rng);
    Tensor x = random_tensor({3, 5}, rng);
    while (kink_margin(spec, p, x) < 1e-3) x = random_tensor({3, 5}, rng);
    const auto y = random_labels(3, 3, rng);
    const auto r = finite_difference_check(spec, p, x, y, 1e-5, 1e-4);
    CHECK(r.passed);
    CHECK(r.layers.size() == 3);  // parameterized layers only
  }

  TEST_CASE("gradient check: Conv2d+MaxPool stack, plain and calibrated loss") {
    Rng rng(13);
    const ModelSpec spec({2, 8, 8}, {Conv2d{2, 3, 3, 1, 1}, ReLU{}, MaxPool2d{2, 2}, Conv2d{3, 2, 2, 2, 0}, ReLU{},
                                     Flatten{}, Dense{8, 3}});
    ParamSet p = init_params(spec, rng);
    for (std::size_t k : {0u, 3u, 6u})
      for (double& b : p.mutable_layer(k).bias.data()) b = rng.uniform(-0.2, 0.2);
    Tensor x = random_tensor({2, 2, 8, 8}, rng, 0, 1);
    while (kink_margin(spec, p, x) < 1e-3) x = random_tensor({2, 2, 8, 8}, rng, 0, 1);
    const auto y = random_labels(2, 3, rng);
    CHECK(finite_difference_check(spec, p, x, y, 1e-5, 1e-4).passed);
    CHECK(finite_difference_check(spec, p, x, y, 1e-5, 1e-4, calibrated_loss(CalibrationMode::sqrt_inv_freq)).passed);
  }

  TEST_CASE("gradient check flags a wrong gradient") {
    // A loss whose reported gradient is off by a factor of two must fail.
    Rng rng(14);
    const ModelSpec spec({3}, {Dense{3, 2}});
    const ParamSet p = init_params(spec, rng);
    const Tensor x = random_tensor({2, 3}, rng);
    const std::vector<Label> y{0, 1};
    LossFn wrong = [](const Tensor& z, std::span<const Label> labels) {
      auto r = loss_cross_entropy(z, labels);
      for (double& g : r.grad.data()) g *= 2.0;
      return r;
    };
    CHECK_FALSE(finite_difference_check(spec, p, x, y, 1e-5, 1e-4, wrong).passed);
  }

  TEST_CASE("gradient check argument validation") {
    Rng rng(15);
    const auto spec = dense22();
    const ParamSet p = init_params(spec, rng);
    const std::vector<Label> y{0};
    CHECK_THROWS_AS(finite_difference_check(spec, p, Tensor({1, 2}), y, 0.0, 1e-4), ValidationError);
    CHECK_THROWS_AS(finite_difference_check(spec, p, Tensor({1, 2}), y, 1e-2, 1e-4), ValidationError);
    CHECK(grad_rel_error(1.0, 1.0) == 0.0);
    CHECK(grad_rel_error(0.0, 1e-9) == doctest::Approx(1e-3));
  }
}
