#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bslb/errors.hpp"

namespace bslb {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

/// Read-only vector argument. Non-deduced, so columns and blocks bind
/// without naming the scalar type.
template <typename Scalar>
using InputRef = const std::type_identity_t<Eigen::Ref<const VectorX<Scalar>>>&;

enum class Activation { relu, identity };

struct LayerSpec {
  Index input_width = 0;
  Index output_width = 0;
  bool has_bias = true;
  Activation activation = Activation::relu;

  Index parameter_count() const {
    return input_width * output_width + (has_bias ? output_width : 0);
  }
  bool operator==(const LayerSpec&) const = default;
};

/// Architecture of a fully-connected feed-forward classifier.
///
/// Layers chain (each output width feeds the next input width), the last
/// layer is linear and emits one logit per class.
class NetworkSpec {
 public:
  NetworkSpec() = default;

  NetworkSpec(std::vector<LayerSpec> layers, int class_count)
      : layers_(std::move(layers)), class_count_(class_count) {
    if (layers_.empty()) throw ParameterError("network needs at least one layer");
    if (class_count_ < 1) throw ParameterError("class_count must be positive");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      if (layer.input_width < 1 || layer.output_width < 1)
        throw ParameterError("layer " + std::to_string(l) + " has a non-positive width");
      if (l + 1 < layers_.size() && layer.output_width != layers_[l + 1].input_width)
        throw ShapeError("layer " + std::to_string(l) + " output width " +
                         std::to_string(layer.output_width) + " does not feed layer " +
                         std::to_string(l + 1) + " input width " +
                         std::to_string(layers_[l + 1].input_width));
    }
    if (layers_.back().activation != Activation::identity)
      throw ParameterError("final layer must be linear (pre-softmax logits)");
    if (layers_.back().output_width != class_count_)
      throw ShapeError("final layer width " + std::to_string(layers_.back().output_width) +
                       " differs from class_count " + std::to_string(class_count_));
    Index offset = 0;
    for (const auto& layer : layers_) {
      offsets_.push_back(offset);
      offset += layer.parameter_count();
    }
    parameter_count_ = offset;
  }

  /// ReLU hidden layers followed by a linear output layer.
  static NetworkSpec mlp(Index input_width, std::span<const Index> hidden, int class_count,
                         bool bias = true) {
    std::vector<LayerSpec> layers;
    Index in = input_width;
    for (Index width : hidden) {
      layers.push_back({in, width, bias, Activation::relu});
      in = width;
    }
    layers.push_back({in, class_count, bias, Activation::identity});
    return NetworkSpec(std::move(layers), class_count);
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  int class_count() const { return class_count_; }
  Index input_width() const { return layers_.front().input_width; }
  Index parameter_count() const { return parameter_count_; }

  /// Offset of layer l's row-major weight matrix in the flat parameter vector.
  Index weight_offset(int l) const { return offsets_.at(static_cast<std::size_t>(l)); }
  /// Offset of layer l's bias (directly after its weights); meaningless without a bias.
  Index bias_offset(int l) const {
    const auto& layer = this->layer(l);
    return weight_offset(l) + layer.input_width * layer.output_width;
  }

  bool operator==(const NetworkSpec& other) const {
    return layers_ == other.layers_ && class_count_ == other.class_count_;
  }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Index> offsets_;
  int class_count_ = 0;
  Index parameter_count_ = 0;
};

/// Flat parameter vector with per-layer views.
///
/// Layer l stores an output_width x input_width weight matrix in row-major
/// order followed by its bias vector.
template <typename Scalar>
class WeightVector {
 public:
  using Matrix = RowMatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  WeightVector() = default;

  WeightVector(const NetworkSpec& spec, Vector values) : values_(std::move(values)) {
    if (values_.size() != spec.parameter_count())
      throw ShapeError("weight vector has " + std::to_string(values_.size()) +
                       " entries, architecture needs " + std::to_string(spec.parameter_count()));
    if (!values_.allFinite()) throw NumericError("weight vector contains non-finite values");
    for (int l = 0; l < spec.layer_count(); ++l) {
      const auto& layer = spec.layer(l);
      blocks_.push_back({spec.weight_offset(l), layer.output_width, layer.input_width,
                         layer.has_bias ? spec.bias_offset(l) : Index{-1}});
    }
  }

  static WeightVector zeros(const NetworkSpec& spec) {
    return WeightVector(spec, Vector::Zero(spec.parameter_count()));
  }

  Index size() const { return values_.size(); }
  int layer_count() const { return static_cast<int>(blocks_.size()); }
  const Vector& values() const { return values_; }

  /// Direct access for optimizers. Callers keep the values finite.
  Vector& mutable_values() { return values_; }

  Eigen::Map<const Matrix> weights(int l) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(l));
    return Eigen::Map<const Matrix>(values_.data() + b.weight_offset, b.rows, b.cols);
  }
  Eigen::Map<Matrix> weights(int l) {
    const auto& b = blocks_.at(static_cast<std::size_t>(l));
    return Eigen::Map<Matrix>(values_.data() + b.weight_offset, b.rows, b.cols);
  }
  bool has_bias(int l) const { return blocks_.at(static_cast<std::size_t>(l)).bias_offset >= 0; }
  Eigen::Map<const Vector> bias(int l) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(l));
    if (b.bias_offset < 0) throw IndexError("layer " + std::to_string(l) + " has no bias");
    return Eigen::Map<const Vector>(values_.data() + b.bias_offset, b.rows);
  }
  Eigen::Map<Vector> bias(int l) {
    const auto& b = blocks_.at(static_cast<std::size_t>(l));
    if (b.bias_offset < 0) throw IndexError("layer " + std::to_string(l) + " has no bias");
    return Eigen::Map<Vector>(values_.data() + b.bias_offset, b.rows);
  }

 private:
  struct Block {
    Index weight_offset;
    Index rows;
    Index cols;
    Index bias_offset;
  };
  std::vector<Block> blocks_;
  Vector values_;
};

using Weights = WeightVector<double>;

/// Pre- and post-activations of every layer for one input.
template <typename Scalar>
struct ActivationTrace {
  VectorX<Scalar> input;
  std::vector<VectorX<Scalar>> pre_activations;
  std::vector<VectorX<Scalar>> post_activations;

  const VectorX<Scalar>& logits() const { return post_activations.back(); }
  /// Input to layer l: the raw input for l = 0, else the previous post-activation.
  const VectorX<Scalar>& layer_input(int l) const {
    return l == 0 ? input : post_activations[static_cast<std::size_t>(l - 1)];
  }
};

/// Inputs are stored column-wise: inputs.col(i) is example i.
struct LabeledDataset {
  Eigen::MatrixXd inputs;
  std::vector<int> labels;

  Index size() const { return inputs.cols(); }
  Index dim() const { return inputs.rows(); }
  bool empty() const { return inputs.cols() == 0; }

  LabeledDataset subset(std::span<const Index> indices) const {
    LabeledDataset out;
    out.inputs.resize(inputs.rows(), static_cast<Index>(indices.size()));
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.inputs.col(static_cast<Index>(i)) = inputs.col(indices[i]);
      out.labels.push_back(labels.at(static_cast<std::size_t>(indices[i])));
    }
    return out;
  }
};

/// Throws unless the dataset matches the architecture.
void validate_dataset(const NetworkSpec& spec, const LabeledDataset& data);

namespace detail {

template <typename Scalar>
void check_compatible(const NetworkSpec& spec, const WeightVector<Scalar>& w, Index input_size) {
  if (w.size() != spec.parameter_count() || w.layer_count() != spec.layer_count())
    throw ShapeError("weights do not match the architecture");
  if (input_size != spec.input_width())
    throw ShapeError("input has dimension " + std::to_string(input_size) + ", network expects " +
                     std::to_string(spec.input_width()));
}

template <typename Derived>
VectorX<typename Derived::Scalar> activate(const Eigen::MatrixBase<Derived>& z, Activation act) {
  using Scalar = typename Derived::Scalar;
  if (act == Activation::relu) return z.cwiseMax(Scalar(0));
  return z;
}

}  // namespace detail

template <typename Scalar>
ActivationTrace<Scalar> forward(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                InputRef<Scalar> x) {
  detail::check_compatible(spec, w, x.size());
  if (!x.allFinite()) throw NumericError("input contains non-finite values");
  ActivationTrace<Scalar> trace;
  trace.input = x;
  trace.pre_activations.reserve(static_cast<std::size_t>(spec.layer_count()));
  trace.post_activations.reserve(static_cast<std::size_t>(spec.layer_count()));
  for (int l = 0; l < spec.layer_count(); ++l) {
    VectorX<Scalar> z = w.weights(l) * trace.layer_input(l);
    if (w.has_bias(l)) z += w.bias(l);
    trace.post_activations.push_back(detail::activate(z, spec.layer(l).activation));
    trace.pre_activations.push_back(std::move(z));
  }
  return trace;
}

/// Max-subtracted softmax.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  const auto m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

/// Cross-entropy of the softmax over `logits` against class y.
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits, int y) {
  return log_sum_exp(logits) - logits(y);
}

template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

template <typename Scalar>
VectorX<Scalar> predict_softmax(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                InputRef<Scalar> x) {
  return softmax(forward(spec, w, x).logits());
}

template <typename Scalar>
int predict_class(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                  InputRef<Scalar> x) {
  return argmax(forward(spec, w, x).logits());
}

/// Reverse-mode sweep over a recorded trace.
///
/// `output_grad` is the derivative of the objective with respect to the
/// logits. Either output pointer may be null.
template <typename Scalar>
void backpropagate(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                   const ActivationTrace<Scalar>& trace, VectorX<Scalar> output_grad,
                   VectorX<Scalar>* weight_grad, VectorX<Scalar>* input_grad) {
  if (output_grad.size() != spec.class_count()) throw ShapeError("output gradient size mismatch");
  if (weight_grad) weight_grad->setZero(spec.parameter_count());
  VectorX<Scalar> delta = std::move(output_grad);
  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const auto& layer = spec.layer(l);
    if (layer.activation == Activation::relu)
      delta = (trace.pre_activations[static_cast<std::size_t>(l)].array() > Scalar(0))
                  .select(delta.array(), Scalar(0))
                  .matrix();
    if (weight_grad) {
      Eigen::Map<RowMatrixX<Scalar>> gw(weight_grad->data() + spec.weight_offset(l),
                                        layer.output_width, layer.input_width);
      gw.noalias() = delta * trace.layer_input(l).transpose();
      if (layer.has_bias) weight_grad->segment(spec.bias_offset(l), layer.output_width) = delta;
    }
    if (l > 0 || input_grad) delta = (w.weights(l).transpose() * delta).eval();
  }
  if (input_grad) *input_grad = std::move(delta);
}

namespace detail {

template <typename Scalar>
VectorX<Scalar> loss_output_grad(const ActivationTrace<Scalar>& trace, int y) {
  if (y < 0 || y >= trace.logits().size())
    throw IndexError("class " + std::to_string(y) + " out of range");
  VectorX<Scalar> g = softmax(trace.logits());
  g(y) -= Scalar(1);
  return g;
}

}  // namespace detail

/// Gradient of the per-example cross-entropy with respect to all weights.
template <typename Scalar>
VectorX<Scalar> grad_loss_weights(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                  InputRef<Scalar> x, int y) {
  const auto trace = forward(spec, w, x);
  VectorX<Scalar> grad;
  backpropagate(spec, w, trace, detail::loss_output_grad(trace, y), &grad,
                static_cast<VectorX<Scalar>*>(nullptr));
  return grad;
}

/// Gradient of the per-example cross-entropy with respect to the input.
template <typename Scalar>
VectorX<Scalar> grad_loss_input(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                InputRef<Scalar> x, int y) {
  const auto trace = forward(spec, w, x);
  VectorX<Scalar> grad;
  backpropagate(spec, w, trace, detail::loss_output_grad(trace, y),
                static_cast<VectorX<Scalar>*>(nullptr), &grad);
  return grad;
}

/// Gradient of logit c (pre-softmax) with respect to the input.
template <typename Scalar>
VectorX<Scalar> grad_logit_input(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                 InputRef<Scalar> x, int c) {
  if (c < 0 || c >= spec.class_count())
    throw IndexError("class " + std::to_string(c) + " out of range");
  const auto trace = forward(spec, w, x);
  VectorX<Scalar> seed = VectorX<Scalar>::Zero(spec.class_count());
  seed(c) = Scalar(1);
  VectorX<Scalar> grad;
  backpropagate(spec, w, trace, std::move(seed), static_cast<VectorX<Scalar>*>(nullptr), &grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Batched evaluation and training (double precision).

/// Summed cross-entropy over the columns of `inputs`. When `grad` is
/// non-null it receives the summed weight gradient.
double batch_loss(const NetworkSpec& spec, const Weights& w,
                  const Eigen::Ref<const Eigen::MatrixXd>& inputs, std::span<const int> labels,
                  Eigen::VectorXd* grad);

/// Logits for every column of `inputs` (class_count x n).
Eigen::MatrixXd batch_logits(const NetworkSpec& spec, const Weights& w,
                             const Eigen::Ref<const Eigen::MatrixXd>& inputs);

double accuracy(const NetworkSpec& spec, const Weights& w, const LabeledDataset& data);

/// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Weights initialize_weights(const NetworkSpec& spec, std::uint64_t seed);

struct SgdOptions {
  double learning_rate = 0.05;
  int epochs = 10;
  int batch_size = 64;
  double momentum = 0.0;
  /// L2 coefficient on the mean loss: adds weight_decay * w to the step gradient.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// Start here instead of a fresh initialization.
  std::optional<Weights> initial;
};

/// Mini-batch SGD on the mean cross-entropy. Reproducible given the seed.
/// `epoch_losses`, when given, receives the mean training loss per epoch.
Weights train_sgd(const NetworkSpec& spec, const LabeledDataset& data, const SgdOptions& options,
                  std::vector<double>* epoch_losses = nullptr);

}  // namespace bslb
