#include <sstream>

#include "fedalc/calibration.hpp"
#include "fedalc/error.hpp"
#include "fedalc/harness.hpp"

namespace fedalc {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_index(hi - lo + 1); }

// Architectures cycled through by the suite; together they cover every layer type.
ModelSpec random_model(Rng& rng, std::size_t variant) {
  const std::size_t classes = pick(rng, 2, 4);
  switch (variant % 4) {
    case 0: {
      const std::size_t in = pick(rng, 2, 6), hidden = pick(rng, 2, 6);
      return ModelSpec({in}, {Dense{in, hidden}, ReLU{}, Dense{hidden, classes}});
    }
    case 1: {
      const std::size_t c = pick(rng, 1, 2), oc = pick(rng, 1, 3), k = pick(rng, 1, 3);
      const std::size_t side = pick(rng, 5, 7), pad = pick(rng, 0, 1);
      const Shape in{c, side, side};
      ModelSpec probe(in, {Conv2d{c, oc, k, 1, pad}, ReLU{}, MaxPool2d{2, 2}, Flatten{}});
      return ModelSpec(in, {Conv2d{c, oc, k, 1, pad}, ReLU{}, MaxPool2d{2, 2}, Flatten{},
                            Dense{probe.shape_at(4)[0], classes}});
    }
    case 2: {
      const std::size_t c = pick(rng, 1, 2), oc = pick(rng, 1, 2), k = pick(rng, 2, 3), stride = pick(rng, 1, 2);
      const std::size_t side = pick(rng, 4, 6), pad = pick(rng, 0, 1);
      const Shape in{c, side, side};
      ModelSpec probe(in, {Conv2d{c, oc, k, stride, pad}, ReLU{}, Flatten{}});
      return ModelSpec(in, {Conv2d{c, oc, k, stride, pad}, ReLU{}, Flatten{}, Dense{probe.shape_at(3)[0], classes}});
    }
    default: {
      const Shape in{1, pick(rng, 2, 4), pick(rng, 2, 4)};
      const std::size_t h1 = pick(rng, 2, 5), h2 = pick(rng, 2, 5);
      return ModelSpec(in, {Flatten{}, Dense{shape_size(in), h1}, ReLU{}, Dense{h1, h2}, ReLU{}, Dense{h2, classes}});
    }
  }
}

std::string describe(const ModelSpec& spec, std::size_t batch, const char* loss) {
  std::ostringstream os;
  os << shape_str(spec.input_shape()) << " ";
  for (std::size_t k = 0; k < spec.num_layers(); ++k) os << (k ? "-" : "") << layer_name(spec.layers()[k]);
  os << " B=" << batch << " loss=" << loss;
  return os.str();
}

}  // namespace

std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, std::size_t cases, double h, double tol) {
  constexpr double kMinMargin = 1e-3;
  constexpr int kMaxDraws = 2000;
  std::vector<GradcheckCase> out;
  for (std::size_t i = 0; i < cases; ++i) {
    Rng rng(derive_seed(seed, {i}));
    const ModelSpec spec = random_model(rng, i);
    const std::size_t batch = pick(rng, 1, 4);
    const std::size_t classes = spec.num_classes();

    ParamSet params;
    Tensor x;
    std::vector<Label> labels(batch);
    int draws = 0;
    for (;; ++draws) {
      if (draws == kMaxDraws) throw std::runtime_error("gradcheck_suite: no kink-free draw for case " + std::to_string(i));
      params = init_params(spec, rng);
      for (std::size_t k = 0; k < params.num_layers(); ++k) {
        if (!has_params(spec.layers()[k])) continue;
        for (double& b : params.mutable_layer(k).bias.data()) b = rng.uniform(-0.5, 0.5);
      }
      Shape xs{batch};
      xs.insert(xs.end(), spec.input_shape().begin(), spec.input_shape().end());
      x = Tensor(xs);
      for (double& v : x.data()) v = rng.uniform();
      if (kink_margin(spec, params, x) >= kMinMargin) break;
    }
    for (auto& y : labels) y = static_cast<Label>(rng.uniform_index(classes));

    const char* loss_name = "cross_entropy";
    LossFn loss = loss_cross_entropy;
    if (i % 3 == 1) {
      loss_name = "calibrated/sqrt_inv_freq";
      loss = calibrated_loss(CalibrationMode::sqrt_inv_freq);
    } else if (i % 3 == 2) {
      loss_name = "calibrated/eq5_literal";
      loss = calibrated_loss(CalibrationMode::eq5_literal);
    }
    out.push_back({describe(spec, batch, loss_name), finite_difference_check(spec, params, x, labels, h, tol, loss)});
  }
  return out;
}

}  // namespace fedalc
