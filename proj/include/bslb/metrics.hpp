#pragma once

#include <optional>
#include <span>

#include "bslb/ensemble.hpp"
#include "bslb/lrp.hpp"

namespace bslb {

/// Fraction of shared indices between the top-k sets of two heatmaps.
double klrp_robustness(const Eigen::Ref<const Eigen::VectorXd>& clean,
                       const Eigen::Ref<const Eigen::VectorXd>& adversarial, Index k,
                       Ranking ranking = Ranking::signed_descending);

inline double klrp_robustness(const Heatmap<double>& clean, const Heatmap<double>& adversarial,
                              Index k, Ranking ranking = Ranking::signed_descending) {
  return klrp_robustness(clean.relevances, adversarial.relevances, k, ranking);
}

/// |A ∩ B| / k for two top-k sets over the same pixels.
double topk_overlap(const TopKSet& a, const TopKSet& b);

/// 1 - ||p - q||_inf for two probability vectors.
double softmax_robustness(const Eigen::Ref<const Eigen::VectorXd>& p,
                          const Eigen::Ref<const Eigen::VectorXd>& p_adv);

enum class BayesRobustnessMode {
  averaged_heatmap,     // robustness of the two mean heatmaps
  expected_robustness,  // mean of per-sample robustness values
};

struct LrpSettings {
  double eps = 0.1;
  Stabilizer stabilizer = Stabilizer::sign_matched;
  Ranking ranking = Ranking::signed_descending;
};

/// Bayesian k-LRP robustness of (x, x_adv) at a seed layer. With a class
/// seed the same logit is explained for both inputs; `class_index` defaults
/// to the posterior predictive class on x.
double bayes_klrp_robustness(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                             const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& x_adv, Index k, int layer,
                             BayesRobustnessMode mode, const LrpSettings& lrp = {},
                             std::optional<int> class_index = std::nullopt);

/// Same as above, from per-sample heatmaps computed elsewhere.
double bayes_klrp_robustness(std::span<const Heatmap<double>> clean,
                             std::span<const Heatmap<double>> adversarial, Index k,
                             BayesRobustnessMode mode,
                             Ranking ranking = Ranking::signed_descending);

double pearson_correlation(std::span<const double> xs, std::span<const double> ys);

double mean(std::span<const double> xs);
/// Unbiased sample variance.
double sample_variance(std::span<const double> xs);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean(a) > mean(b)
};

/// One-sided Welch t-test of mean(a) > mean(b).
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace bslb
