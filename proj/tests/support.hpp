#pragma once

#include <random>
#include <vector>

#include "bslb/network.hpp"
#include "bslb/rng.hpp"

namespace bslb::testing {

/// Random ReLU MLP with 1-4 learnable layers and widths in [1, max_width].
inline NetworkSpec random_spec(Rng& rng, bool bias, int max_width = 8) {
  std::uniform_int_distribution<int> width(1, max_width);
  std::uniform_int_distribution<int> depth(0, 3);
  const Index input = width(rng);
  std::vector<Index> hidden(static_cast<std::size_t>(depth(rng)));
  for (auto& h : hidden) h = width(rng);
  const int classes = std::uniform_int_distribution<int>(2, max_width)(rng);
  return NetworkSpec::mlp(input, hidden, classes, bias);
}

inline Eigen::VectorXd normal_vector(Rng& rng, Index n, double std = 1.0) {
  std::normal_distribution<double> d(0.0, std);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

inline Eigen::VectorXd uniform_vector(Rng& rng, Index n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

inline Weights random_weights(const NetworkSpec& spec, Rng& rng, double std = 1.0) {
  return Weights(spec, normal_vector(rng, spec.parameter_count(), std));
}

/// Central differences of f around v.
template <typename F>
Eigen::VectorXd central_difference(F&& f, const Eigen::VectorXd& v, double h = 1e-5) {
  Eigen::VectorXd g(v.size());
  Eigen::VectorXd probe = v;
  for (Index i = 0; i < v.size(); ++i) {
    probe(i) = v(i) + h;
    const double up = f(probe);
    probe(i) = v(i) - h;
    const double down = f(probe);
    probe(i) = v(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                             double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

/// True when no pre-activation of the trace sits within `margin` of a ReLU
/// kink, so finite differences do not straddle one.
inline bool away_from_kinks(const ActivationTrace<double>& trace, double margin) {
  for (std::size_t l = 0; l + 1 < trace.pre_activations.size(); ++l)
    if ((trace.pre_activations[l].array().abs() < margin).any()) return false;
  return true;
}

/// Two-class linear model z = (0, w x) so that p(class 1) = sigmoid(w . x).
inline NetworkSpec logistic_spec(Index dim) {
  return NetworkSpec({{dim, 2, false, Activation::identity}}, 2);
}

inline Weights logistic_weights(const NetworkSpec& spec, const Eigen::VectorXd& w) {
  Weights out = Weights::zeros(spec);
  out.weights(0).row(1) = w.transpose();
  return out;
}

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace bslb::testing
