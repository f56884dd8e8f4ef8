#include "fedalc/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

#include "fedalc/error.hpp"
#include "fedalc/kernels.hpp"

namespace fedalc {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::uint64_t next_revision() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::string layer_label(std::size_t k, const Layer& layer) {
  return "layer " + std::to_string(k) + " (" + layer_name(layer) + ")";
}

Shape layer_output_shape(std::size_t k, const Layer& layer, const Shape& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw StructuralError(layer_label(k, layer) + ": " + why + ", got input " + shape_str(in));
  };
  return std::visit(
      overloaded{
          [&](const Dense& d) -> Shape {
            if (d.in == 0 || d.out == 0) return fail("zero-sized dense layer");
            if (in.size() != 1 || in[0] != d.in) return fail("expects input [" + std::to_string(d.in) + "]");
            return Shape{d.out};
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const Conv2d& c) -> Shape {
            if (c.kernel == 0 || c.stride == 0 || c.out_ch == 0) return fail("zero kernel, stride or channels");
            if (in.size() != 3 || in[0] != c.in_ch)
              return fail("expects input [" + std::to_string(c.in_ch) + "xHxW]");
            if (in[1] + 2 * c.pad < c.kernel || in[2] + 2 * c.pad < c.kernel) return fail("kernel larger than input");
            return Shape{c.out_ch, (in[1] + 2 * c.pad - c.kernel) / c.stride + 1,
                         (in[2] + 2 * c.pad - c.kernel) / c.stride + 1};
          },
          [&](const MaxPool2d& p) -> Shape {
            if (p.kernel == 0 || p.stride == 0) return fail("zero kernel or stride");
            if (in.size() != 3) return fail("expects input [CxHxW]");
            if (in[1] < p.kernel || in[2] < p.kernel) return fail("window larger than input");
            return Shape{in[0], (in[1] - p.kernel) / p.stride + 1, (in[2] - p.kernel) / p.stride + 1};
          },
          [&](const Flatten&) -> Shape { return Shape{shape_size(in)}; },
      },
      layer);
}

// Parameter shapes of a layer; empty shapes for parameter-free layers.
std::pair<Shape, Shape> param_shapes(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Dense& d) { return std::pair{Shape{d.in, d.out}, Shape{d.out}}; },
                        [](const Conv2d& c) {
                          return std::pair{Shape{c.out_ch, c.in_ch, c.kernel, c.kernel}, Shape{c.out_ch}};
                        },
                        [](const auto&) { return std::pair{Shape{}, Shape{}}; },
                    },
                    layer);
}

kernels::ConvDims conv_dims(const Conv2d& c, std::size_t batch, const Shape& in) {
  return {batch, c.in_ch, in[1], in[2], c.out_ch, c.kernel, c.stride, c.pad};
}

kernels::PoolDims pool_dims(const MaxPool2d& p, std::size_t batch, const Shape& in) {
  return {batch, in[0], in[1], in[2], p.kernel, p.stride};
}

Shape batched(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Dense& d) {
                          return "Dense(" + std::to_string(d.in) + "," + std::to_string(d.out) + ")";
                        },
                        [](const ReLU&) { return std::string("ReLU"); },
                        [](const Conv2d& c) {
                          std::ostringstream os;
                          os << "Conv2d(" << c.in_ch << "," << c.out_ch << "," << c.kernel << "," << c.stride << ","
                             << c.pad << ")";
                          return os.str();
                        },
                        [](const MaxPool2d& p) {
                          return "MaxPool2d(" + std::to_string(p.kernel) + "," + std::to_string(p.stride) + ")";
                        },
                        [](const Flatten&) { return std::string("Flatten"); },
                    },
                    layer);
}

bool has_params(const Layer& layer) {
  return std::holds_alternative<Dense>(layer) || std::holds_alternative<Conv2d>(layer);
}

ModelSpec::ModelSpec(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) {
    throw StructuralError("model input shape " + shape_str(input_shape_) + " is empty");
  }
  if (layers_.empty()) throw StructuralError("model has no layers");
  shapes_.push_back(input_shape_);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    shapes_.push_back(layer_output_shape(k, layers_[k], shapes_.back()));
  }
  if (shapes_.back().size() != 1) {
    throw StructuralError("model output " + shape_str(shapes_.back()) + " is not a class vector");
  }
}

ModelSpec make_mlp(const Shape& input_shape, std::size_t hidden, std::size_t classes) {
  return ModelSpec(input_shape, {Flatten{}, Dense{shape_size(input_shape), hidden}, ReLU{}, Dense{hidden, classes}});
}

ModelSpec make_cnn(const Shape& input_shape, std::size_t classes) {
  if (input_shape.size() != 3) throw StructuralError("cnn expects a CxHxW input, got " + shape_str(input_shape));
  const std::size_t h = ((input_shape[1] - 4) / 2 - 4) / 2;
  const std::size_t w = ((input_shape[2] - 4) / 2 - 4) / 2;
  return ModelSpec(input_shape, {Conv2d{input_shape[0], 16, 5}, ReLU{}, MaxPool2d{2, 2}, Conv2d{16, 32, 5}, ReLU{},
                                 MaxPool2d{2, 2}, Flatten{}, Dense{32 * h * w, 64}, ReLU{}, Dense{64, classes}});
}

// ---------------------------------------------------------------- ParamSet

ParamSet::ParamSet() : revision_(next_revision()) {}
ParamSet::ParamSet(std::vector<LayerParams> layers) : layers_(std::move(layers)), revision_(next_revision()) {}
ParamSet::ParamSet(const ParamSet& other) : layers_(other.layers_), revision_(next_revision()) {}
ParamSet::ParamSet(ParamSet&& other) noexcept : layers_(std::move(other.layers_)), revision_(next_revision()) {
  other.touch();
}
ParamSet& ParamSet::operator=(const ParamSet& other) {
  layers_ = other.layers_;
  touch();
  return *this;
}
ParamSet& ParamSet::operator=(ParamSet&& other) noexcept {
  layers_ = std::move(other.layers_);
  touch();
  other.touch();
  return *this;
}

void ParamSet::touch() { revision_ = next_revision(); }

LayerParams& ParamSet::mutable_layer(std::size_t k) {
  touch();
  return layers_.at(k);
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool ParamSet::congruent(const ParamSet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].weight.shape() != other.layers_[k].weight.shape() ||
        layers_[k].bias.shape() != other.layers_[k].bias.shape())
      return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const LayerParams& l) { return l.weight.all_finite() && l.bias.all_finite(); });
}

void ParamSet::axpy(double scale, const ParamSet& other) {
  if (!congruent(other)) throw StructuralError("axpy: parameter sets are not congruent");
  touch();
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    auto add = [scale](Tensor& dst, const Tensor& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    };
    add(layers_[k].weight, other.layers_[k].weight);
    add(layers_[k].bias, other.layers_[k].bias);
  }
}

void ParamSet::scale(double factor) {
  for_each_tensor([factor](Tensor& t) {
    for (double& v : t.data()) v *= factor;
  });
}

double ParamSet::squared_distance(const ParamSet& other) const {
  if (!congruent(other)) throw StructuralError("squared_distance: parameter sets are not congruent");
  double s = 0.0;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    auto acc = [&s](const Tensor& a, const Tensor& b) {
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    };
    acc(layers_[k].weight, other.layers_[k].weight);
    acc(layers_[k].bias, other.layers_[k].bias);
  }
  return s;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t k = 0; k < a.layers_.size(); ++k) {
    if (!(a.layers_[k].weight == b.layers_[k].weight) || !(a.layers_[k].bias == b.layers_[k].bias)) return false;
  }
  return true;
}

ParamSet zeros_like(const ModelSpec& spec) {
  std::vector<LayerParams> layers;
  for (const auto& layer : spec.layers()) {
    auto [ws, bs] = param_shapes(layer);
    if (ws.empty()) {
      layers.push_back({});
    } else {
      layers.push_back({Tensor(ws), Tensor(bs)});
    }
  }
  return ParamSet(std::move(layers));
}

ParamSet zeros_like(const ParamSet& params) {
  std::vector<LayerParams> layers;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    const auto& l = params.layer(k);
    if (l.weight.empty()) {
      layers.push_back({});
    } else {
      layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
    }
  }
  return ParamSet(std::move(layers));
}

ParamSet init_params(const ModelSpec& spec, Rng& rng) {
  ParamSet params = zeros_like(spec);
  for (std::size_t k = 0; k < spec.num_layers(); ++k) {
    const Layer& layer = spec.layers()[k];
    if (!has_params(layer)) continue;
    std::size_t fan_in = 0, fan_out = 0;
    if (const auto* d = std::get_if<Dense>(&layer)) {
      fan_in = d->in;
      fan_out = d->out;
    } else {
      const auto& c = std::get<Conv2d>(layer);
      fan_in = c.in_ch * c.kernel * c.kernel;
      fan_out = c.out_ch * c.kernel * c.kernel;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& w : params.mutable_layer(k).weight.data()) w = rng.uniform(-limit, limit);
  }
  return params;
}

void check_congruent(const ModelSpec& spec, const ParamSet& params) {
  if (params.num_layers() != spec.num_layers()) {
    throw StructuralError("parameter set has " + std::to_string(params.num_layers()) + " layers, model has " +
                          std::to_string(spec.num_layers()));
  }
  for (std::size_t k = 0; k < spec.num_layers(); ++k) {
    auto [ws, bs] = param_shapes(spec.layers()[k]);
    const auto& l = params.layer(k);
    const bool ok = ws.empty() ? (l.weight.empty() && l.bias.empty())
                               : (l.weight.shape() == ws && l.bias.shape() == bs);
    if (!ok) {
      throw StructuralError(layer_label(k, spec.layers()[k]) + ": parameters " + shape_str(l.weight.shape()) + "/" +
                            shape_str(l.bias.shape()) + " do not match");
    }
  }
}

// ---------------------------------------------------------------- forward / backward

struct TapeAccess {
  static Tape& init(Tape& t, const ModelSpec& spec, const ParamSet& params, std::size_t batch) {
    t.spec_ = &spec;
    t.params_ = &params;
    t.revision_ = params.revision();
    t.batch_ = batch;
    t.inputs_.clear();
    t.argmax_.assign(spec.num_layers(), {});
    t.consumed_ = false;
    return t;
  }
  static std::vector<Tensor>& inputs(Tape& t) { return t.inputs_; }
  static std::vector<std::vector<std::size_t>>& argmax(Tape& t) { return t.argmax_; }
  static void validate(const Tape& t) {
    if (t.spec_ == nullptr) throw UsageError("backward on an empty tape");
    if (t.consumed_) throw UsageError("tape already consumed by a previous backward pass");
    if (t.params_->revision() != t.revision_) {
      throw UsageError("stale tape: parameters changed after the forward pass");
    }
  }
  static const ModelSpec& spec(const Tape& t) { return *t.spec_; }
  static const ParamSet& params(const Tape& t) { return *t.params_; }
  static std::size_t batch(const Tape& t) { return t.batch_; }
  static void consume(Tape& t) { t.consumed_ = true; }
};

namespace {

std::size_t check_input(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
  check_congruent(spec, params);
  if (x.rank() != spec.input_shape().size() + 1 || x.dim(0) == 0 ||
      !std::equal(spec.input_shape().begin(), spec.input_shape().end(), x.shape().begin() + 1)) {
    throw StructuralError(layer_label(0, spec.layers()[0]) + ": input " + shape_str(x.shape()) + " does not match model input " +
                          shape_str(spec.input_shape()) + " with a leading batch axis");
  }
  return x.dim(0);
}

// Runs layer k on `in`. When argmax is non-null, pooling winners are stored.
Tensor layer_forward(const ModelSpec& spec, const ParamSet& params, std::size_t k, std::size_t batch,
                     const Tensor& in, std::vector<std::size_t>* argmax) {
  const Layer& layer = spec.layers()[k];
  const Shape& in_shape = spec.shape_at(k);
  Tensor out(batched(batch, spec.shape_at(k + 1)));
  std::visit(overloaded{
                 [&](const Dense& d) {
                   const auto& p = params.layer(k);
                   kernels::dense_forward(in.data(), p.weight.data(), p.bias.data(), out.data(),
                                          {batch, d.in, d.out});
                 },
                 [&](const ReLU&) { kernels::relu_forward(in.data(), out.data()); },
                 [&](const Conv2d& c) {
                   const auto& p = params.layer(k);
                   kernels::conv2d_forward(in.data(), p.weight.data(), p.bias.data(), out.data(),
                                           conv_dims(c, batch, in_shape));
                 },
                 [&](const MaxPool2d& pool) {
                   std::vector<std::size_t> local;
                   std::vector<std::size_t>& idx = argmax ? *argmax : local;
                   idx.resize(out.size());
                   kernels::maxpool_forward(in.data(), out.data(), idx, pool_dims(pool, batch, in_shape));
                 },
                 [&](const Flatten&) { std::copy(in.data().begin(), in.data().end(), out.data().begin()); },
             },
             layer);
  return out;
}

}  // namespace

ForwardResult model_forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
  const std::size_t batch = check_input(spec, params, x);
  ForwardResult result;
  TapeAccess::init(result.tape, spec, params, batch);
  auto& inputs = TapeAccess::inputs(result.tape);
  auto& argmax = TapeAccess::argmax(result.tape);
  inputs.reserve(spec.num_layers());
  inputs.push_back(x);
  for (std::size_t k = 0; k < spec.num_layers(); ++k) {
    Tensor out = layer_forward(spec, params, k, batch, inputs.back(), &argmax[k]);
    if (k + 1 < spec.num_layers()) {
      inputs.push_back(std::move(out));
    } else {
      result.logits = std::move(out);
    }
  }
  return result;
}

Tensor model_logits(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
  const std::size_t batch = check_input(spec, params, x);
  Tensor cur = layer_forward(spec, params, 0, batch, x, nullptr);
  for (std::size_t k = 1; k < spec.num_layers(); ++k) cur = layer_forward(spec, params, k, batch, cur, nullptr);
  return cur;
}

BackwardResult model_backward(Tape& tape, const Tensor& upstream, BackwardOptions options) {
  TapeAccess::validate(tape);
  const ModelSpec& spec = TapeAccess::spec(tape);
  const ParamSet& params = TapeAccess::params(tape);
  const std::size_t batch = TapeAccess::batch(tape);
  const auto& inputs = TapeAccess::inputs(tape);
  const auto& argmax = TapeAccess::argmax(tape);

  const Shape out_shape = batched(batch, spec.shape_at(spec.num_layers()));
  if (upstream.shape() != out_shape) {
    throw StructuralError("upstream gradient " + shape_str(upstream.shape()) + " does not match logits " +
                          shape_str(out_shape));
  }
  TapeAccess::consume(tape);

  // Lowest layer whose input gradient is still needed by someone.
  std::size_t first_param = spec.num_layers();
  for (std::size_t k = 0; k < spec.num_layers(); ++k) {
    if (has_params(spec.layers()[k])) {
      first_param = k;
      break;
    }
  }
  const std::size_t stop = options.input_grad ? 0 : (options.param_grads ? first_param : spec.num_layers());

  BackwardResult result;
  if (options.param_grads) result.param_grads = zeros_like(spec);

  Tensor g = upstream;
  for (std::size_t k = spec.num_layers(); k-- > stop;) {
    const Layer& layer = spec.layers()[k];
    const Shape& in_shape = spec.shape_at(k);
    const Tensor& in = inputs[k];
    const bool need_gx = k > stop || options.input_grad;
    Tensor gx = need_gx ? Tensor(batched(batch, in_shape)) : Tensor();
    std::visit(overloaded{
                   [&](const Dense& d) {
                     std::span<double> gw, gb;
                     if (options.param_grads) {
                       auto& pg = result.param_grads.mutable_layer(k);
                       gw = pg.weight.data();
                       gb = pg.bias.data();
                     }
                     kernels::dense_backward(in.data(), params.layer(k).weight.data(), g.data(), gx.data(), gw, gb,
                                             {batch, d.in, d.out});
                   },
                   [&](const ReLU&) {
                     if (need_gx) kernels::relu_backward(in.data(), g.data(), gx.data());
                   },
                   [&](const Conv2d& c) {
                     std::span<double> gw, gb;
                     if (options.param_grads) {
                       auto& pg = result.param_grads.mutable_layer(k);
                       gw = pg.weight.data();
                       gb = pg.bias.data();
                     }
                     kernels::conv2d_backward(in.data(), params.layer(k).weight.data(), g.data(), gx.data(), gw, gb,
                                              conv_dims(c, batch, in_shape));
                   },
                   [&](const MaxPool2d&) {
                     if (need_gx) kernels::maxpool_backward(g.data(), argmax[k], gx.data());
                   },
                   [&](const Flatten&) {
                     if (need_gx) std::copy(g.data().begin(), g.data().end(), gx.data().begin());
                   },
               },
               layer);
    g = std::move(gx);
  }
  if (options.input_grad) result.input_grad = std::move(g);
  return result;
}

// ---------------------------------------------------------------- loss

void check_labels(std::span<const Label> labels, std::size_t classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

LossResult loss_cross_entropy(const Tensor& logits, std::span<const Label> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw StructuralError("cross-entropy: logits " + shape_str(logits.shape()) + " vs " +
                          std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  check_labels(labels, C);
  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = logits.ptr() + b * C;
    double* g = r.grad.ptr() + b * C;
    const double top = *std::max_element(z, z + C);
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) sum += std::exp(z[j] - top);
    const double lse = top + std::log(sum);
    r.loss += lse - z[labels[b]];
    for (std::size_t j = 0; j < C; ++j) g[j] = std::exp(z[j] - lse) * inv_b;
    g[labels[b]] -= inv_b;
  }
  r.loss *= inv_b;
  return r;
}

// ---------------------------------------------------------------- Adam

AdamState AdamState::for_params(const ParamSet& params) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ValidationError("adam_step: learning rate must be positive");
  if (!params.congruent(grads) || !params.congruent(state.m) || !params.congruent(state.v)) {
    throw StructuralError("adam_step: parameters, gradients and moments are not congruent");
  }
  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    const auto& gl = grads.layer(k);
    auto& pl = params.mutable_layer(k);
    auto& ml = state.m.mutable_layer(k);
    auto& vl = state.v.mutable_layer(k);
    auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
      }
    };
    update(pl.weight, gl.weight, ml.weight, vl.weight);
    update(pl.bias, gl.bias, ml.bias, vl.bias);
  }
}

// ---------------------------------------------------------------- kinks

double kink_margin(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
  const std::size_t batch = check_input(spec, params, x);
  double margin = std::numeric_limits<double>::infinity();
  Tensor cur = x;
  for (std::size_t k = 0; k < spec.num_layers(); ++k) {
    const Layer& layer = spec.layers()[k];
    if (std::holds_alternative<ReLU>(layer)) {
      for (double v : cur.data()) margin = std::min(margin, std::abs(v));
    } else if (const auto* pool = std::get_if<MaxPool2d>(&layer)) {
      const auto d = pool_dims(*pool, batch, spec.shape_at(k));
      for (std::size_t p = 0; p < d.batch * d.channels; ++p)
        for (std::size_t oh = 0; oh < d.out_h(); ++oh)
          for (std::size_t ow = 0; ow < d.out_w(); ++ow) {
            double first = -std::numeric_limits<double>::infinity(), second = first;
            for (std::size_t kh = 0; kh < d.kernel; ++kh)
              for (std::size_t kw = 0; kw < d.kernel; ++kw) {
                const double v = cur[(p * d.height + oh * d.stride + kh) * d.width + ow * d.stride + kw];
                if (v > first) {
                  second = first;
                  first = v;
                } else if (v > second) {
                  second = v;
                }
              }
            // A window of clamped ReLU outputs stays exactly zero under small
            // perturbations, so its tie is harmless.
            const bool dead = first == 0.0 && k > 0 && std::holds_alternative<ReLU>(spec.layers()[k - 1]);
            if (d.kernel * d.kernel > 1 && !dead) margin = std::min(margin, first - second);
          }
    }
    cur = layer_forward(spec, params, k, batch, cur, nullptr);
  }
  return margin;
}

}  // namespace fedalc
