#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "bslb/ensemble.hpp"
#include "bslb/lrp.hpp"
#include "bslb/network.hpp"
#include "bslb/rng.hpp"

namespace bslb {

/// Isotropic zero-mean Gaussian prior over all weights.
struct GaussianPrior {
  double std = 1.0;

  void validate() const {
    if (!(std > 0.0) || !std::isfinite(std))
      throw ParameterError("prior std must be finite and positive");
  }
};

/// Potential energy U(q); writes dU/dq into `grad` when it is non-null.
using PotentialFn = std::function<double(const Eigen::VectorXd& q, Eigen::VectorXd* grad)>;

/// U(w) = -log p(D|w) - log p(w) up to a constant, full batch. An empty
/// dataset leaves the prior alone.
PotentialFn network_potential(const NetworkSpec& spec, const LabeledDataset& data,
                              const GaussianPrior& prior);

// ---------------------------------------------------------------------------
// Hamiltonian Monte Carlo

struct HmcOptions {
  double step_size = 1e-3;
  int leapfrog_steps = 20;
  int draws = 500;       // total Markov transitions, burn-in included
  int burn_in = -1;      // < 0: 20% of draws
  int thinning = -1;     // < 1: largest stride keeping >= 100 stored samples
  std::uint64_t seed = 0;
  /// Progress callback: (iteration, accepted so far).
  std::function<void(int, int)> progress;
};

struct HmcChain {
  std::vector<Eigen::VectorXd> samples;
  double acceptance_rate = 0.0;
  bool poorly_tuned = false;  // acceptance below 5%
  int burn_in = 0;
  int thinning = 1;
};

/// Kinetic plus potential energy with unit mass.
double hamiltonian(const PotentialFn& potential, const Eigen::VectorXd& q, const Eigen::VectorXd& p);

/// Velocity-Verlet trajectory of `steps` steps; returns the end point (q, p).
std::pair<Eigen::VectorXd, Eigen::VectorXd> leapfrog(const PotentialFn& potential,
                                                     Eigen::VectorXd q, Eigen::VectorXd p,
                                                     double step_size, int steps);

/// Metropolis-corrected HMC with unit-mass momenta.
HmcChain hmc_chain(const PotentialFn& potential, Eigen::VectorXd initial, const HmcOptions& options);

/// HMC over network weights. Starts at `initial` or at a seeded fresh
/// initialization.
PosteriorEnsemble hmc_sample(const NetworkSpec& spec, const LabeledDataset& data,
                             const GaussianPrior& prior, const HmcOptions& options,
                             const std::optional<Weights>& initial = std::nullopt);

// ---------------------------------------------------------------------------
// Mean-field variational inference

/// Diagonal Gaussian q(w) with std = softplus(rho).
struct VariationalPosterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd rho;

  Eigen::VectorXd stddev() const;
  Index size() const { return mu.size(); }
};

double softplus(double x);
double inverse_softplus(double y);

/// KL(q || prior), closed form.
double kl_divergence(const VariationalPosterior& q, const GaussianPrior& prior);

/// Unbiased estimate of the full-data negative log-likelihood at w; writes
/// its gradient into `grad`. The generator drives mini-batch selection.
using NllEstimator = std::function<double(const Eigen::VectorXd& w, Eigen::VectorXd& grad, Rng& rng)>;

struct ViOptions {
  int mc_samples = 1;        // reparameterized draws per step
  int steps = 1000;
  double learning_rate = 1e-3;
  double final_lr_fraction = 1.0;  // linear decay target
  int batch_size = 0;        // <= 0: full batch
  double init_std = 1e-3;    // initial posterior std for network fits
  std::uint64_t seed = 0;
};

/// Maximizes a Monte Carlo ELBO with Adam, starting at `init`.
/// `elbo_trace`, when given, receives one ELBO estimate per step.
VariationalPosterior vi_fit(const NllEstimator& nll, VariationalPosterior init,
                            const GaussianPrior& prior, const ViOptions& options,
                            std::vector<double>* elbo_trace = nullptr);

/// Network fit; means start at the seeded initialization, stds at init_std.
VariationalPosterior vi_fit(const NetworkSpec& spec, const LabeledDataset& data,
                            const GaussianPrior& prior, const ViOptions& options,
                            std::vector<double>* elbo_trace = nullptr);

PosteriorEnsemble vi_sample(const NetworkSpec& spec, const VariationalPosterior& posterior,
                            std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Posterior averages

/// Bayesian model average of the per-sample softmax outputs.
Eigen::VectorXd posterior_predictive(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                     const Eigen::Ref<const Eigen::VectorXd>& x);

/// Elementwise mean of per-sample epsilon-LRP heatmaps. When `per_sample`
/// is given it receives the individual heatmaps.
Heatmap<double> bayes_heatmap(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                              const Eigen::Ref<const Eigen::VectorXd>& x, const RelevanceSeed& seed,
                              double eps, Stabilizer stabilizer = Stabilizer::sign_matched,
                              std::vector<Heatmap<double>>* per_sample = nullptr);

/// Mean of already computed heatmaps (all with the same seed).
Heatmap<double> mean_heatmap(std::span<const Heatmap<double>> heatmaps);

}  // namespace bslb
