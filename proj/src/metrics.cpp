#include "bslb/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "bslb/bayes.hpp"

namespace bslb {

double topk_overlap(const TopKSet& a, const TopKSet& b) {
  if (a.k != b.k || a.total != b.total) throw ShapeError("top-k sets are not comparable");
  std::size_t common = 0;
  auto ia = a.indices.begin();
  auto ib = b.indices.begin();
  while (ia != a.indices.end() && ib != b.indices.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(common) / static_cast<double>(a.k);
}

double klrp_robustness(const Eigen::Ref<const Eigen::VectorXd>& clean,
                       const Eigen::Ref<const Eigen::VectorXd>& adversarial, Index k,
                       Ranking ranking) {
  if (clean.size() != adversarial.size())
    throw ShapeError("heatmaps have different sizes (" + std::to_string(clean.size()) + " vs " +
                     std::to_string(adversarial.size()) + ")");
  return topk_overlap(top_k(clean, k, ranking), top_k(adversarial, k, ranking));
}

namespace {

void check_simplex(const Eigen::Ref<const Eigen::VectorXd>& p, const char* name) {
  constexpr double tol = 1e-9;
  if (!p.allFinite() || p.minCoeff() < -tol || std::abs(p.sum() - 1.0) > tol)
    throw ParameterError(std::string(name) + " is not a probability vector");
}

}  // namespace

double softmax_robustness(const Eigen::Ref<const Eigen::VectorXd>& p,
                          const Eigen::Ref<const Eigen::VectorXd>& p_adv) {
  if (p.size() != p_adv.size()) throw ShapeError("probability vectors differ in length");
  check_simplex(p, "clean prediction");
  check_simplex(p_adv, "adversarial prediction");
  return std::clamp(1.0 - (p - p_adv).cwiseAbs().maxCoeff(), 0.0, 1.0);
}

double bayes_klrp_robustness(std::span<const Heatmap<double>> clean,
                             std::span<const Heatmap<double>> adversarial, Index k,
                             BayesRobustnessMode mode, Ranking ranking) {
  if (clean.empty() || clean.size() != adversarial.size())
    throw ParameterError("need matching, non-empty per-sample heatmap lists");
  if (mode == BayesRobustnessMode::averaged_heatmap)
    return klrp_robustness(mean_heatmap(clean), mean_heatmap(adversarial), k, ranking);
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i)
    total += klrp_robustness(clean[i], adversarial[i], k, ranking);
  return total / static_cast<double>(clean.size());
}

double bayes_klrp_robustness(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                             const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& x_adv, Index k, int layer,
                             BayesRobustnessMode mode, const LrpSettings& lrp,
                             std::optional<int> class_index) {
  require_nonempty(ensemble);
  RelevanceSeed seed = RelevanceSeed::all_units(layer);
  if (layer == spec.layer_count() - 1)
    seed.unit = class_index ? *class_index : argmax(posterior_predictive(spec, ensemble, x));
  std::vector<Heatmap<double>> clean, adversarial;
  bayes_heatmap(spec, ensemble, x, seed, lrp.eps, lrp.stabilizer, &clean);
  bayes_heatmap(spec, ensemble, x_adv, seed, lrp.eps, lrp.stabilizer, &adversarial);
  return bayes_klrp_robustness(clean, adversarial, k, mode, lrp.ranking);
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw ParameterError("mean of an empty sequence");
  double s = 0.0;
  for (double v : xs) s += v;
  return s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw ParameterError("variance needs at least two values");
  const double m = mean(xs);
  double s = 0.0;
  for (double v : xs) s += (v - m) * (v - m);
  return s / static_cast<double>(xs.size() - 1);
}

double pearson_correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("correlation inputs differ in length");
  if (xs.size() < 2) throw ParameterError("correlation needs at least two pairs");
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInputError("correlation of a constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  const double va = sample_variance(a) / static_cast<double>(a.size());
  const double vb = sample_variance(b) / static_cast<double>(b.size());
  const double diff = mean(a) - mean(b);
  WelchResult r;
  if (va + vb == 0.0) {
    r.t = diff > 0 ? std::numeric_limits<double>::infinity()
                   : (diff < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    r.dof = static_cast<double>(a.size() + b.size() - 2);
    r.p_value = diff > 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = diff / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) /
          (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  const boost::math::students_t dist(r.dof);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace bslb
