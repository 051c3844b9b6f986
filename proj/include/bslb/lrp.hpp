#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bslb/network.hpp"

namespace bslb {

/// How the epsilon term enters the LRP denominator.
enum class Stabilizer {
  literal,       // z + eps
  sign_matched,  // z + eps * sign(z), sign(0) = +1
};

enum class Ranking { signed_descending, absolute_descending };

/// Where relevance is injected before propagating down to the input.
///
/// A specific unit is seeded with its own post-activation (for the output
/// layer that is the pre-softmax logit). Without a unit, every unit of the
/// layer is seeded with its own post-activation.
struct RelevanceSeed {
  int layer = -1;
  std::optional<int> unit;

  static RelevanceSeed class_logit(const NetworkSpec& spec, int class_index) {
    return {spec.layer_count() - 1, class_index};
  }
  static RelevanceSeed all_units(int layer) { return {layer, std::nullopt}; }

  bool operator==(const RelevanceSeed&) const = default;
};

template <typename Scalar>
struct Heatmap {
  VectorX<Scalar> relevances;
  int seed_layer = -1;
  std::optional<int> seed_class;  // empty in all-units mode
  double lrp_epsilon = 0.0;

  Index size() const { return relevances.size(); }
};

struct TopKSet {
  std::vector<Index> indices;  // ascending
  Index k = 0;
  Index total = 0;
};

namespace detail {

template <typename Scalar>
Scalar stabilized(Scalar z, Scalar eps, Stabilizer stabilizer) {
  if (stabilizer == Stabilizer::literal) return z + eps;
  return z + (z >= Scalar(0) ? eps : -eps);
}

}  // namespace detail

/// Pushes a relevance vector sitting on the outputs of `from_layer` down to
/// the input pixels with the epsilon rule. Bias shares are dropped.
template <typename Scalar>
VectorX<Scalar> propagate_relevance(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                    const ActivationTrace<Scalar>& trace, int from_layer,
                                    VectorX<Scalar> relevance, Scalar eps,
                                    Stabilizer stabilizer = Stabilizer::sign_matched) {
  if (from_layer < 0 || from_layer >= spec.layer_count())
    throw IndexError("seed layer " + std::to_string(from_layer) + " outside [0, " +
                     std::to_string(spec.layer_count()) + ")");
  if (static_cast<int>(trace.pre_activations.size()) != spec.layer_count())
    throw ShapeError("activation trace does not match the architecture");
  if (relevance.size() != spec.layer(from_layer).output_width)
    throw ShapeError("relevance vector does not match layer width");
  if (eps < Scalar(0)) throw ParameterError("LRP epsilon must be non-negative");

  VectorX<Scalar> ratio;
  for (int l = from_layer; l >= 0; --l) {
    const auto& z = trace.pre_activations[static_cast<std::size_t>(l)];
    ratio.resize(z.size());
    for (Index k = 0; k < z.size(); ++k) {
      const Scalar denom = detail::stabilized(z(k), eps, stabilizer);
      if (denom == Scalar(0)) throw DivisionHazardError(l, static_cast<long>(k));
      ratio(k) = relevance(k) / denom;
    }
    relevance = trace.layer_input(l).cwiseProduct(w.weights(l).transpose() * ratio);
  }
  if (!relevance.allFinite()) throw NumericError("LRP produced non-finite relevances");
  return relevance;
}

/// Epsilon-rule relevance heatmap over the input pixels.
template <typename Scalar>
Heatmap<Scalar> lrp_epsilon(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                            const ActivationTrace<Scalar>& trace, const RelevanceSeed& seed,
                            Scalar eps, Stabilizer stabilizer = Stabilizer::sign_matched) {
  if (seed.layer < 0 || seed.layer >= spec.layer_count())
    throw IndexError("seed layer " + std::to_string(seed.layer) + " outside [0, " +
                     std::to_string(spec.layer_count()) + ")");
  if (static_cast<int>(trace.post_activations.size()) != spec.layer_count())
    throw ShapeError("activation trace does not match the architecture");
  const auto& activations = trace.post_activations[static_cast<std::size_t>(seed.layer)];
  VectorX<Scalar> relevance;
  if (seed.unit) {
    if (*seed.unit < 0 || *seed.unit >= activations.size())
      throw IndexError("seed unit " + std::to_string(*seed.unit) + " out of range");
    relevance = VectorX<Scalar>::Zero(activations.size());
    relevance(*seed.unit) = activations(*seed.unit);
  } else {
    relevance = activations;
  }
  Heatmap<Scalar> hm;
  hm.relevances = propagate_relevance(spec, w, trace, seed.layer, std::move(relevance), eps,
                                      stabilizer);
  hm.seed_layer = seed.layer;
  hm.seed_class = seed.unit;
  hm.lrp_epsilon = static_cast<double>(eps);
  return hm;
}

/// Indices of the k highest scores; ties go to the lower index.
template <typename Derived>
TopKSet top_k(const Eigen::MatrixBase<Derived>& scores, Index k,
              Ranking ranking = Ranking::signed_descending) {
  const Index total = scores.size();
  if (k < 1 || k > total)
    throw ParameterError("k = " + std::to_string(k) + " outside [1, " + std::to_string(total) +
                         "]");
  using Scalar = typename Derived::Scalar;
  std::vector<Scalar> key(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i)
    key[static_cast<std::size_t>(i)] =
        ranking == Ranking::absolute_descending ? std::abs(scores(i)) : scores(i);
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    const Scalar ka = key[static_cast<std::size_t>(a)];
    const Scalar kb = key[static_cast<std::size_t>(b)];
    return ka > kb || (ka == kb && a < b);
  });
  TopKSet out;
  out.indices.assign(order.begin(), order.begin() + k);
  std::sort(out.indices.begin(), out.indices.end());
  out.k = k;
  out.total = total;
  return out;
}

template <typename Scalar>
TopKSet top_k(const Heatmap<Scalar>& hm, Index k, Ranking ranking = Ranking::signed_descending) {
  return top_k(hm.relevances, k, ranking);
}

/// First-order Taylor attribution of a logit around a root point.
///
/// f(x) = sum(per_pixel_terms) + value_at_root + residual holds by
/// construction; the residual collects every higher-order effect.
template <typename Scalar>
struct TaylorAttribution {
  VectorX<Scalar> per_pixel_terms;
  VectorX<Scalar> root_point;
  int seed_class = 0;
  Scalar value_at_input = 0;
  Scalar value_at_root = 0;
  Scalar residual = 0;
};

/// Attribution of logit `class_index` (default: the predicted class at x).
template <typename Scalar>
TaylorAttribution<Scalar> taylor_attribution(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                                             InputRef<Scalar> x,
                                             InputRef<Scalar> root,
                                             std::optional<int> class_index = std::nullopt) {
  if (root.size() != x.size()) throw ShapeError("root point dimension differs from input");
  const auto at_x = forward(spec, w, x);
  const int c = class_index.value_or(argmax(at_x.logits()));
  if (c < 0 || c >= spec.class_count()) throw IndexError("class out of range");
  const auto at_root = forward(spec, w, root);

  TaylorAttribution<Scalar> out;
  out.seed_class = c;
  out.root_point = root;
  out.per_pixel_terms = grad_logit_input(spec, w, root, c).cwiseProduct(x - root);
  out.value_at_input = at_x.logits()(c);
  out.value_at_root = at_root.logits()(c);
  out.residual = out.value_at_input - out.value_at_root - out.per_pixel_terms.sum();
  return out;
}

}  // namespace bslb
