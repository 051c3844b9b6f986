#include "bslb/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bslb/rng.hpp"

namespace bslb {

void validate_dataset(const NetworkSpec& spec, const LabeledDataset& data) {
  if (static_cast<std::size_t>(data.size()) != data.labels.size())
    throw ShapeError("dataset has " + std::to_string(data.size()) + " inputs but " +
                     std::to_string(data.labels.size()) + " labels");
  if (!data.empty() && data.dim() != spec.input_width())
    throw ShapeError("dataset dimension " + std::to_string(data.dim()) +
                     " does not match network input width " + std::to_string(spec.input_width()));
  for (int y : data.labels)
    if (y < 0 || y >= spec.class_count())
      throw IndexError("label " + std::to_string(y) + " out of range");
}

namespace {

struct BatchTrace {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
};

BatchTrace batch_forward(const NetworkSpec& spec, const Weights& w,
                         const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  if (inputs.rows() != spec.input_width())
    throw ShapeError("batch rows " + std::to_string(inputs.rows()) + " != input width " +
                     std::to_string(spec.input_width()));
  BatchTrace t;
  for (int l = 0; l < spec.layer_count(); ++l) {
    Eigen::MatrixXd z;
    if (l == 0)
      z.noalias() = w.weights(l) * inputs;
    else
      z.noalias() = w.weights(l) * t.post.back();
    if (w.has_bias(l)) z.colwise() += w.bias(l);
    t.post.push_back(spec.layer(l).activation == Activation::relu ? z.cwiseMax(0.0).eval() : z);
    t.pre.push_back(std::move(z));
  }
  return t;
}

}  // namespace

Eigen::MatrixXd batch_logits(const NetworkSpec& spec, const Weights& w,
                             const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  return std::move(batch_forward(spec, w, inputs).post.back());
}

double batch_loss(const NetworkSpec& spec, const Weights& w,
                  const Eigen::Ref<const Eigen::MatrixXd>& inputs, std::span<const int> labels,
                  Eigen::VectorXd* grad) {
  if (static_cast<Index>(labels.size()) != inputs.cols())
    throw ShapeError("label count does not match batch size");
  if (grad) grad->setZero(spec.parameter_count());
  if (inputs.cols() == 0) return 0.0;

  BatchTrace t = batch_forward(spec, w, inputs);
  const Eigen::MatrixXd& logits = t.post.back();
  Eigen::MatrixXd delta(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Index i = 0; i < logits.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= spec.class_count()) throw IndexError("label out of range");
    const auto col = logits.col(i);
    loss += cross_entropy(col, y);
    if (grad) {
      delta.col(i) = softmax(col);
      delta(y, i) -= 1.0;
    }
  }
  if (!grad) return loss;

  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const auto& layer = spec.layer(l);
    if (layer.activation == Activation::relu)
      delta = (t.pre[static_cast<std::size_t>(l)].array() > 0.0).select(delta.array(), 0.0).matrix();
    Eigen::Map<RowMatrixX<double>> gw(grad->data() + spec.weight_offset(l), layer.output_width,
                                      layer.input_width);
    if (l == 0)
      gw.noalias() = delta * inputs.transpose();
    else
      gw.noalias() = delta * t.post[static_cast<std::size_t>(l - 1)].transpose();
    if (layer.has_bias)
      grad->segment(spec.bias_offset(l), layer.output_width) = delta.rowwise().sum();
    if (l > 0) delta = (w.weights(l).transpose() * delta).eval();
  }
  return loss;
}

double accuracy(const NetworkSpec& spec, const Weights& w, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  constexpr Index chunk = 1024;
  Index correct = 0;
  for (Index start = 0; start < data.size(); start += chunk) {
    const Index n = std::min(chunk, data.size() - start);
    const Eigen::MatrixXd logits = batch_logits(spec, w, data.inputs.middleCols(start, n));
    for (Index i = 0; i < n; ++i)
      if (argmax(logits.col(i)) == data.labels[static_cast<std::size_t>(start + i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Weights initialize_weights(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd values(spec.parameter_count());
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto& layer = spec.layer(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.input_width));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto block = values.segment(spec.weight_offset(l), layer.parameter_count());
    for (Index i = 0; i < block.size(); ++i) block(i) = dist(rng);
  }
  return Weights(spec, std::move(values));
}

Weights train_sgd(const NetworkSpec& spec, const LabeledDataset& data, const SgdOptions& options,
                  std::vector<double>* epoch_losses) {
  validate_dataset(spec, data);
  if (data.empty()) throw ParameterError("training data is empty");
  if (options.batch_size < 1) throw ParameterError("batch size must be positive");
  if (options.epochs < 0) throw ParameterError("epoch count must be non-negative");
  if (!(options.weight_decay >= 0.0)) throw ParameterError("weight decay must be non-negative");

  Weights w = options.initial ? *options.initial
                              : initialize_weights(spec, derive_seed(options.seed, "init"));
  if (w.size() != spec.parameter_count()) throw ShapeError("initial weights do not match");
  Rng shuffle_rng = make_stream(options.seed, "shuffle");

  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Eigen::VectorXd grad;
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(w.size());
  Eigen::MatrixXd batch(data.dim(), options.batch_size);
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const Index n = static_cast<Index>(end - start);
      batch_labels.clear();
      for (Index i = 0; i < n; ++i) {
        const Index src = order[start + static_cast<std::size_t>(i)];
        batch.col(i) = data.inputs.col(src);
        batch_labels.push_back(data.labels[static_cast<std::size_t>(src)]);
      }
      const double loss = batch_loss(spec, w, batch.leftCols(n), batch_labels, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch));
      epoch_loss += loss;
      grad /= static_cast<double>(n);
      if (options.weight_decay > 0.0) grad += options.weight_decay * w.values();
      velocity = options.momentum * velocity - options.learning_rate * grad;
      w.mutable_values() += velocity;
    }
    if (!w.values().allFinite())
      throw DivergenceError("non-finite weights after epoch " + std::to_string(epoch));
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return w;
}

}  // namespace bslb
