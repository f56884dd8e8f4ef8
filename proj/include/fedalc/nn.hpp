#pragma once

// Minimal reverse-mode engine for fixed sequential layer stacks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedalc/rng.hpp"
#include "fedalc/tensor.hpp"

namespace fedalc {

using Label = std::int32_t;

/// Inputs [B, input_shape...] with one label per row.
struct Batch {
  Tensor x;
  std::vector<Label> y;

  std::size_t size() const { return y.size(); }
};

struct Dense {
  std::size_t in, out;
};
struct ReLU {};
struct Conv2d {
  std::size_t in_ch, out_ch, kernel, stride = 1, pad = 0;
};
struct MaxPool2d {
  std::size_t kernel, stride;
};
struct Flatten {};

using Layer = std::variant<Dense, ReLU, Conv2d, MaxPool2d, Flatten>;

std::string layer_name(const Layer& layer);
bool has_params(const Layer& layer);

/// A validated layer stack. Shapes exclude the leading batch axis.
class ModelSpec {
 public:
  /// Throws StructuralError naming the first layer whose input does not fit.
  ModelSpec(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }
  /// Shape entering layer k; k == num_layers() gives the output shape.
  const Shape& shape_at(std::size_t k) const { return shapes_[k]; }
  std::size_t num_classes() const { return shapes_.back()[0]; }

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

/// Flatten -> Dense(in, hidden) -> ReLU -> Dense(hidden, classes).
ModelSpec make_mlp(const Shape& input_shape, std::size_t hidden, std::size_t classes);
/// Two 5x5 conv blocks with 2x2 pooling followed by two dense layers.
ModelSpec make_cnn(const Shape& input_shape, std::size_t classes);

struct LayerParams {
  Tensor weight;
  Tensor bias;
};

/// Per-layer trainable tensors, congruent to a ModelSpec.
///
/// Every ParamSet carries a revision stamp that changes on each mutable
/// access. Tapes record it so a backward pass against parameters that
/// changed after the forward pass is rejected.
class ParamSet {
 public:
  ParamSet();
  explicit ParamSet(std::vector<LayerParams> layers);
  ParamSet(const ParamSet& other);
  ParamSet(ParamSet&& other) noexcept;
  ParamSet& operator=(const ParamSet& other);
  ParamSet& operator=(ParamSet&& other) noexcept;
  ~ParamSet() = default;

  std::size_t num_layers() const { return layers_.size(); }
  const LayerParams& layer(std::size_t k) const { return layers_[k]; }
  LayerParams& mutable_layer(std::size_t k);
  std::uint64_t revision() const { return revision_; }

  /// Total scalar count.
  std::size_t size() const;
  bool congruent(const ParamSet& other) const;
  bool all_finite() const;

  /// this += scale * other. Throws StructuralError if not congruent.
  void axpy(double scale, const ParamSet& other);
  void scale(double factor);
  /// Squared L2 norm of (this - other).
  double squared_distance(const ParamSet& other) const;

  /// Visits each (weight, bias) tensor of every parameterized layer in order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    touch();
    for (auto& l : layers_) {
      fn(l.weight);
      fn(l.bias);
    }
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (const auto& l : layers_) {
      fn(l.weight);
      fn(l.bias);
    }
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  void touch();

  std::vector<LayerParams> layers_;
  std::uint64_t revision_;
};

/// Glorot-uniform weights, zero biases.
ParamSet init_params(const ModelSpec& spec, Rng& rng);
ParamSet zeros_like(const ModelSpec& spec);
ParamSet zeros_like(const ParamSet& params);
/// Throws StructuralError naming the first mismatching layer.
void check_congruent(const ModelSpec& spec, const ParamSet& params);

/// Activation record of one forward pass. Single use.
///
/// Holds a reference to the parameters used in the forward pass; they must
/// outlive the tape and stay unmodified until backward.
class Tape {
 public:
  Tape() = default;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool consumed() const { return consumed_; }

 private:
  friend struct TapeAccess;

  const ModelSpec* spec_ = nullptr;
  const ParamSet* params_ = nullptr;
  std::uint64_t revision_ = 0;
  std::size_t batch_ = 0;
  std::vector<Tensor> inputs_;  // activation entering each layer
  std::vector<std::vector<std::size_t>> argmax_;
  bool consumed_ = true;
};

struct ForwardResult {
  Tensor logits;
  Tape tape;
};

struct BackwardOptions {
  bool param_grads = true;
  bool input_grad = true;
};

struct BackwardResult {
  ParamSet param_grads;  // empty when not requested
  Tensor input_grad;     // empty when not requested
};

/// x has shape [B, input_shape...]; logits are [B, C].
ForwardResult model_forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x);
/// Forward pass without recording a tape.
Tensor model_logits(const ModelSpec& spec, const ParamSet& params, const Tensor& x);
/// Throws UsageError on a consumed, empty or stale tape.
BackwardResult model_backward(Tape& tape, const Tensor& upstream, BackwardOptions options = {});

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
};

/// Batch-mean softmax cross-entropy, log-sum-exp with max subtraction.
LossResult loss_cross_entropy(const Tensor& logits, std::span<const Label> labels);

/// Throws ValidationError if any label falls outside [0, classes).
void check_labels(std::span<const Label> labels, std::size_t classes);

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParamSet& params);
};

/// One bias-corrected Adam update of params in place; increments state.t.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr);

using LossFn = std::function<LossResult(const Tensor& logits, std::span<const Label> labels)>;

struct LayerGradError {
  std::size_t layer = 0;
  std::string name;
  double weight_rel = 0.0;
  double bias_rel = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<LayerGradError> layers;
  double input_rel = 0.0;
  double max_rel = 0.0;
  bool passed = true;
};

/// Relative error used by the gradient checker: |a - n| / max(|a|, |n|, 1e-6).
double grad_rel_error(double analytic, double numeric);

/// Compares analytic parameter and input gradients with central differences.
/// Requires 0 < h <= 1e-3 and a batch of at most 8 samples.
GradCheckReport finite_difference_check(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                                        std::span<const Label> labels, double h, double tol,
                                        const LossFn& loss = loss_cross_entropy);

/// Smallest distance of any ReLU pre-activation from zero and of any pooling
/// maximum from its runner-up. Central differences are unreliable when this
/// is comparable to the step size.
double kink_margin(const ModelSpec& spec, const ParamSet& params, const Tensor& x);

}  // namespace fedalc
