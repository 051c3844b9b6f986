#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "bslb/ensemble.hpp"
#include "bslb/network.hpp"
#include "bslb/rng.hpp"

namespace bslb {

enum class AttackMethod { fgsm, pgd };

struct AttackSpec {
  AttackMethod method = AttackMethod::fgsm;
  double delta = 0.25;  // FGSM strength
  double eps = 0.25;    // PGD ball radius
  double alpha = 0.05;  // PGD step
  int steps = 10;
  bool random_init = true;
  double clip_low = 0.0;
  double clip_high = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(clip_low < clip_high)) throw ParameterError("clip range must satisfy low < high");
    if (method == AttackMethod::fgsm && !(delta >= 0.0))
      throw ParameterError("FGSM delta must be non-negative");
    if (method == AttackMethod::pgd) {
      if (!(eps >= 0.0)) throw ParameterError("PGD eps must be non-negative");
      if (!(alpha >= 0.0) || alpha > eps)
        throw ParameterError("PGD step alpha must lie in [0, eps]");
      if (steps < 1) throw ParameterError("PGD needs at least one step");
    }
  }
};

/// Called with every PGD iterate (including the random start).
template <typename Scalar>
using IterateObserver = std::function<void(const VectorX<Scalar>&)>;

/// delta * sgn(g) with sgn(0) = 0.
template <typename Scalar>
VectorX<Scalar> sign_step(const VectorX<Scalar>& grad, Scalar delta) {
  if (!grad.allFinite()) throw NumericError("attack gradient is not finite");
  return grad.unaryExpr([delta](Scalar g) {
    return g > Scalar(0) ? delta : (g < Scalar(0) ? -delta : Scalar(0));
  });
}

namespace detail {

template <typename Scalar>
VectorX<Scalar> clip(const VectorX<Scalar>& v, const AttackSpec& attack) {
  return v.cwiseMax(Scalar(attack.clip_low)).cwiseMin(Scalar(attack.clip_high));
}

template <typename Scalar, typename GradFn>
VectorX<Scalar> fgsm_with(InputRef<Scalar> x, Scalar delta,
                          const AttackSpec& attack, GradFn&& grad_at) {
  const VectorX<Scalar> x0 = x;
  return clip<Scalar>(x0 + sign_step<Scalar>(grad_at(x0), delta), attack);
}

template <typename Scalar, typename GradFn>
VectorX<Scalar> pgd_with(InputRef<Scalar> x, const AttackSpec& attack,
                         GradFn&& grad_at, const IterateObserver<Scalar>& observe) {
  const Scalar eps(attack.eps);
  const VectorX<Scalar> lower = (x.array() - eps).matrix();
  const VectorX<Scalar> upper = (x.array() + eps).matrix();
  auto project = [&](const VectorX<Scalar>& v) {
    return clip<Scalar>(v.cwiseMax(lower).cwiseMin(upper), attack);
  };
  VectorX<Scalar> current = x;
  if (attack.random_init && eps > Scalar(0)) {
    Rng rng = make_stream(attack.seed, "attack-init");
    std::uniform_real_distribution<double> dist(-attack.eps, attack.eps);
    for (Index i = 0; i < current.size(); ++i) current(i) += Scalar(dist(rng));
    current = project(current);
  }
  if (observe) observe(current);
  for (int t = 0; t < attack.steps; ++t) {
    current = project(current + sign_step<Scalar>(grad_at(current), Scalar(attack.alpha)));
    if (observe) observe(current);
  }
  return current;
}

template <typename Scalar>
int resolve_label(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                  InputRef<Scalar> x, std::optional<int> label) {
  const int y = label ? *label : predict_class(spec, w, x);
  if (y < 0 || y >= spec.class_count()) throw IndexError("attack label out of range");
  return y;
}

}  // namespace detail

/// Fast gradient sign attack. The loss label defaults to the model's own
/// prediction on x.
template <typename Scalar>
VectorX<Scalar> fgsm(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                     InputRef<Scalar> x, std::optional<int> label,
                     const AttackSpec& attack) {
  attack.validate();
  const int y = detail::resolve_label(spec, w, x, label);
  return detail::fgsm_with<Scalar>(x, Scalar(attack.delta), attack, [&](const VectorX<Scalar>& v) {
    return grad_loss_input(spec, w, v, y);
  });
}

/// Projected gradient descent inside the eps L-infinity ball around x.
template <typename Scalar>
VectorX<Scalar> pgd(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                    InputRef<Scalar> x, std::optional<int> label,
                    const AttackSpec& attack, const IterateObserver<Scalar>& observe = {}) {
  attack.validate();
  const int y = detail::resolve_label(spec, w, x, label);
  return detail::pgd_with<Scalar>(
      x, attack, [&](const VectorX<Scalar>& v) { return grad_loss_input(spec, w, v, y); },
      observe);
}

/// Dispatches on attack.method.
template <typename Scalar>
VectorX<Scalar> attack_input(const NetworkSpec& spec, const WeightVector<Scalar>& w,
                             InputRef<Scalar> x, std::optional<int> label,
                             const AttackSpec& attack) {
  return attack.method == AttackMethod::fgsm ? fgsm(spec, w, x, label, attack)
                                             : pgd(spec, w, x, label, attack);
}

// Ensemble attacks work on the summed per-sample input gradient; its sign
// equals the sign of the posterior mean gradient.

Eigen::VectorXd ensemble_loss_gradient(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                       const Eigen::Ref<const Eigen::VectorXd>& x, int label);

/// Class with the highest posterior predictive probability.
int ensemble_predict_class(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                           const Eigen::Ref<const Eigen::VectorXd>& x);

Eigen::VectorXd bayes_fgsm(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                           const Eigen::Ref<const Eigen::VectorXd>& x, std::optional<int> label,
                           const AttackSpec& attack);

Eigen::VectorXd bayes_pgd(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                          const Eigen::Ref<const Eigen::VectorXd>& x, std::optional<int> label,
                          const AttackSpec& attack, const IterateObserver<double>& observe = {});

Eigen::VectorXd bayes_attack_input(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                   const Eigen::Ref<const Eigen::VectorXd>& x,
                                   std::optional<int> label, const AttackSpec& attack);

}  // namespace bslb
