#include "bslb/attack.hpp"

#include "bslb/bayes.hpp"

namespace bslb {

Eigen::VectorXd ensemble_loss_gradient(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                       const Eigen::Ref<const Eigen::VectorXd>& x, int label) {
  require_nonempty(ensemble);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.size());
  for (const auto& w : ensemble.samples) sum += grad_loss_input(spec, w, x, label);
  return sum;
}

int ensemble_predict_class(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                           const Eigen::Ref<const Eigen::VectorXd>& x) {
  return argmax(posterior_predictive(spec, ensemble, x));
}

namespace {

int resolve_ensemble_label(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                           const Eigen::Ref<const Eigen::VectorXd>& x, std::optional<int> label) {
  require_nonempty(ensemble);
  const int y = label ? *label : ensemble_predict_class(spec, ensemble, x);
  if (y < 0 || y >= spec.class_count()) throw IndexError("attack label out of range");
  return y;
}

}  // namespace

Eigen::VectorXd bayes_fgsm(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                           const Eigen::Ref<const Eigen::VectorXd>& x, std::optional<int> label,
                           const AttackSpec& attack) {
  attack.validate();
  const int y = resolve_ensemble_label(spec, ensemble, x, label);
  return detail::fgsm_with<double>(x, attack.delta, attack, [&](const Eigen::VectorXd& v) {
    return ensemble_loss_gradient(spec, ensemble, v, y);
  });
}

Eigen::VectorXd bayes_pgd(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                          const Eigen::Ref<const Eigen::VectorXd>& x, std::optional<int> label,
                          const AttackSpec& attack, const IterateObserver<double>& observe) {
  attack.validate();
  const int y = resolve_ensemble_label(spec, ensemble, x, label);
  return detail::pgd_with<double>(
      x, attack, [&](const Eigen::VectorXd& v) { return ensemble_loss_gradient(spec, ensemble, v, y); },
      observe);
}

Eigen::VectorXd bayes_attack_input(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                   const Eigen::Ref<const Eigen::VectorXd>& x,
                                   std::optional<int> label, const AttackSpec& attack) {
  return attack.method == AttackMethod::fgsm ? bayes_fgsm(spec, ensemble, x, label, attack)
                                             : bayes_pgd(spec, ensemble, x, label, attack);
}

}  // namespace bslb
