#include "bslb/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bslb {

PotentialFn network_potential(const NetworkSpec& spec, const LabeledDataset& data,
                              const GaussianPrior& prior) {
  prior.validate();
  validate_dataset(spec, data);
  const double precision = 1.0 / (prior.std * prior.std);
  return [&spec, &data, precision](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
    if (!q.allFinite()) {
      if (grad) grad->setConstant(q.size(), std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::infinity();
    }
    const Weights w(spec, q);
    double u = 0.5 * precision * q.squaredNorm();
    if (!data.empty()) u += batch_loss(spec, w, data.inputs, data.labels, grad);
    else if (grad) grad->setZero(q.size());
    if (grad) *grad += precision * q;
    return u;
  };
}

double hamiltonian(const PotentialFn& potential, const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  return potential(q, nullptr) + 0.5 * p.squaredNorm();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> leapfrog(const PotentialFn& potential,
                                                     Eigen::VectorXd q, Eigen::VectorXd p,
                                                     double step_size, int steps) {
  Eigen::VectorXd grad;
  potential(q, &grad);
  for (int s = 0; s < steps; ++s) {
    p -= 0.5 * step_size * grad;
    q += step_size * p;
    potential(q, &grad);
    p -= 0.5 * step_size * grad;
  }
  return {std::move(q), std::move(p)};
}

HmcChain hmc_chain(const PotentialFn& potential, Eigen::VectorXd initial, const HmcOptions& options) {
  if (options.draws < 1) throw ParameterError("HMC needs at least one draw");
  if (options.leapfrog_steps < 1) throw ParameterError("HMC needs at least one leapfrog step");
  if (!(options.step_size >= 0.0)) throw ParameterError("HMC step size must be non-negative");

  HmcChain chain;
  chain.burn_in = options.burn_in >= 0 ? options.burn_in : options.draws / 5;
  if (chain.burn_in >= options.draws) throw ParameterError("burn-in consumes every draw");
  const int kept = options.draws - chain.burn_in;
  chain.thinning = options.thinning >= 1 ? options.thinning : std::max(1, kept / 100);

  Rng rng = make_stream(options.seed, "hmc");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Eigen::VectorXd q = std::move(initial);
  Eigen::VectorXd grad;
  double u = potential(q, &grad);
  if (!std::isfinite(u)) throw NumericError("HMC initial potential is not finite");
  Eigen::VectorXd p(q.size());
  int accepted = 0;

  for (int it = 0; it < options.draws; ++it) {
    for (Index i = 0; i < p.size(); ++i) p(i) = normal(rng);
    const double h0 = u + 0.5 * p.squaredNorm();

    Eigen::VectorXd q_new = q;
    Eigen::VectorXd grad_new = grad;
    double u_new = u;
    for (int s = 0; s < options.leapfrog_steps; ++s) {
      p -= 0.5 * options.step_size * grad_new;
      q_new += options.step_size * p;
      u_new = potential(q_new, &grad_new);
      if (!std::isfinite(u_new)) break;
      p -= 0.5 * options.step_size * grad_new;
    }
    const double h1 = u_new + 0.5 * p.squaredNorm();
    const double log_u = std::log(uniform(rng));
    if (std::isfinite(h1) && log_u < h0 - h1) {
      q = std::move(q_new);
      grad = std::move(grad_new);
      u = u_new;
      ++accepted;
    }
    if (it >= chain.burn_in && (it - chain.burn_in) % chain.thinning == chain.thinning - 1)
      chain.samples.push_back(q);
    if (options.progress) options.progress(it, accepted);
  }
  chain.acceptance_rate = static_cast<double>(accepted) / options.draws;
  chain.poorly_tuned = chain.acceptance_rate < 0.05;
  return chain;
}

PosteriorEnsemble hmc_sample(const NetworkSpec& spec, const LabeledDataset& data,
                             const GaussianPrior& prior, const HmcOptions& options,
                             const std::optional<Weights>& initial) {
  const PotentialFn potential = network_potential(spec, data, prior);
  Weights start = initial ? *initial : initialize_weights(spec, derive_seed(options.seed, "hmc-init"));
  if (start.size() != spec.parameter_count()) throw ShapeError("HMC start does not match network");
  HmcChain chain = hmc_chain(potential, start.values(), options);

  PosteriorEnsemble ensemble;
  ensemble.method = InferenceMethod::hmc;
  ensemble.meta.seed = options.seed;
  ensemble.meta.burn_in = chain.burn_in;
  ensemble.meta.thinning = chain.thinning;
  ensemble.meta.acceptance_rate = chain.acceptance_rate;
  ensemble.meta.poorly_tuned = chain.poorly_tuned;
  ensemble.samples.reserve(chain.samples.size());
  for (auto& s : chain.samples) ensemble.samples.emplace_back(spec, std::move(s));
  return ensemble;
}

// ---------------------------------------------------------------------------

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw ParameterError("softplus is strictly positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Eigen::VectorXd VariationalPosterior::stddev() const { return rho.unaryExpr(&softplus); }

double kl_divergence(const VariationalPosterior& q, const GaussianPrior& prior) {
  prior.validate();
  const Eigen::VectorXd sd = q.stddev();
  const double pv = prior.std * prior.std;
  double kl = 0.0;
  for (Index i = 0; i < q.size(); ++i)
    kl += std::log(prior.std / sd(i)) + (sd(i) * sd(i) + q.mu(i) * q.mu(i)) / (2.0 * pv) - 0.5;
  return kl;
}

VariationalPosterior vi_fit(const NllEstimator& nll, VariationalPosterior init,
                            const GaussianPrior& prior, const ViOptions& options,
                            std::vector<double>* elbo_trace) {
  prior.validate();
  if (init.mu.size() != init.rho.size()) throw ShapeError("mu and rho lengths differ");
  if (options.mc_samples < 1) throw ParameterError("VI needs at least one MC sample per step");
  if (options.steps < 0) throw ParameterError("VI step count must be non-negative");

  const Index n = init.size();
  const double pv = prior.std * prior.std;
  Rng rng = make_stream(options.seed, "vi");
  std::normal_distribution<double> normal(0.0, 1.0);

  // Adam state for the stacked (mu, rho) parameters.
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Eigen::VectorXd m_mu = Eigen::VectorXd::Zero(n), v_mu = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd m_rho = Eigen::VectorXd::Zero(n), v_rho = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd zeta(n), w(n), g_w(n), g_mu(n), g_rho(n);

  VariationalPosterior q = std::move(init);
  for (int step = 0; step < options.steps; ++step) {
    const Eigen::VectorXd sd = q.stddev();
    g_mu.setZero();
    g_rho.setZero();
    double expected_nll = 0.0;
    for (int s = 0; s < options.mc_samples; ++s) {
      for (Index i = 0; i < n; ++i) zeta(i) = normal(rng);
      w = q.mu + sd.cwiseProduct(zeta);
      expected_nll += nll(w, g_w, rng);
      g_mu += g_w;
      g_rho += g_w.cwiseProduct(zeta);
    }
    const double inv_s = 1.0 / options.mc_samples;
    expected_nll *= inv_s;
    g_mu *= inv_s;
    g_rho *= inv_s;
    // KL gradient, then chain through std = softplus(rho).
    g_mu += q.mu / pv;
    for (Index i = 0; i < n; ++i)
      g_rho(i) = (g_rho(i) - 1.0 / sd(i) + sd(i) / pv) * sigmoid(q.rho(i));

    const double elbo = -expected_nll - kl_divergence(q, prior);
    if (!std::isfinite(elbo) || !g_mu.allFinite() || !g_rho.allFinite())
      throw DivergenceError("non-finite ELBO at VI step " + std::to_string(step));
    if (elbo_trace) elbo_trace->push_back(elbo);

    const double progress = options.steps > 1 ? static_cast<double>(step) / (options.steps - 1) : 0.0;
    const double lr = options.learning_rate * (1.0 - (1.0 - options.final_lr_fraction) * progress);
    const double c1 = 1.0 - std::pow(beta1, step + 1);
    const double c2 = 1.0 - std::pow(beta2, step + 1);
    m_mu = beta1 * m_mu + (1 - beta1) * g_mu;
    v_mu = beta2 * v_mu + (1 - beta2) * g_mu.cwiseAbs2();
    m_rho = beta1 * m_rho + (1 - beta1) * g_rho;
    v_rho = beta2 * v_rho + (1 - beta2) * g_rho.cwiseAbs2();
    q.mu.array() -= lr * (m_mu.array() / c1) / ((v_mu.array() / c2).sqrt() + adam_eps);
    q.rho.array() -= lr * (m_rho.array() / c1) / ((v_rho.array() / c2).sqrt() + adam_eps);
  }
  return q;
}

VariationalPosterior vi_fit(const NetworkSpec& spec, const LabeledDataset& data,
                            const GaussianPrior& prior, const ViOptions& options,
                            std::vector<double>* elbo_trace) {
  validate_dataset(spec, data);
  if (data.empty()) throw ParameterError("training data is empty");
  const Index total = data.size();
  const Index batch = options.batch_size > 0 ? std::min<Index>(options.batch_size, total) : total;

  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();
  Eigen::MatrixXd inputs(data.dim(), batch);
  std::vector<int> labels(static_cast<std::size_t>(batch));

  NllEstimator nll = [&](const Eigen::VectorXd& w, Eigen::VectorXd& grad, Rng& rng) {
    const Weights weights(spec, w);
    if (batch == total) return batch_loss(spec, weights, data.inputs, data.labels, &grad);
    for (Index i = 0; i < batch; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Index src = order[cursor++];
      inputs.col(i) = data.inputs.col(src);
      labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
    }
    const double scale = static_cast<double>(total) / static_cast<double>(batch);
    const double loss = batch_loss(spec, weights, inputs, labels, &grad);
    grad *= scale;
    return loss * scale;
  };

  VariationalPosterior init;
  init.mu = initialize_weights(spec, derive_seed(options.seed, "vi-init")).values();
  init.rho = Eigen::VectorXd::Constant(init.mu.size(), inverse_softplus(options.init_std));
  return vi_fit(nll, std::move(init), prior, options, elbo_trace);
}

PosteriorEnsemble vi_sample(const NetworkSpec& spec, const VariationalPosterior& posterior,
                            std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ParameterError("need at least one sample");
  if (posterior.size() != spec.parameter_count())
    throw ShapeError("variational posterior does not match the architecture");
  Rng rng = make_stream(seed, "vi-sample");
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd sd = posterior.stddev();
  PosteriorEnsemble ensemble;
  ensemble.method = InferenceMethod::vi;
  ensemble.meta.seed = seed;
  ensemble.samples.reserve(n);
  Eigen::VectorXd w(posterior.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (Index i = 0; i < w.size(); ++i) w(i) = posterior.mu(i) + sd(i) * normal(rng);
    ensemble.samples.emplace_back(spec, w);
  }
  return ensemble;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd posterior_predictive(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                     const Eigen::Ref<const Eigen::VectorXd>& x) {
  require_nonempty(ensemble);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.class_count());
  for (const auto& w : ensemble.samples) mean += predict_softmax(spec, w, x);
  return mean / static_cast<double>(ensemble.size());
}

Heatmap<double> mean_heatmap(std::span<const Heatmap<double>> heatmaps) {
  if (heatmaps.empty()) throw ParameterError("no heatmaps to average");
  Heatmap<double> out = heatmaps.front();
  for (std::size_t i = 1; i < heatmaps.size(); ++i) {
    if (heatmaps[i].size() != out.size()) throw ShapeError("heatmap sizes differ");
    out.relevances += heatmaps[i].relevances;
  }
  out.relevances /= static_cast<double>(heatmaps.size());
  return out;
}

Heatmap<double> bayes_heatmap(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                              const Eigen::Ref<const Eigen::VectorXd>& x, const RelevanceSeed& seed,
                              double eps, Stabilizer stabilizer,
                              std::vector<Heatmap<double>>* per_sample) {
  require_nonempty(ensemble);
  std::vector<Heatmap<double>> maps;
  maps.reserve(ensemble.size());
  for (const auto& w : ensemble.samples)
    maps.push_back(lrp_epsilon(spec, w, forward(spec, w, x), seed, eps, stabilizer));
  Heatmap<double> mean = mean_heatmap(maps);
  if (per_sample) *per_sample = std::move(maps);
  return mean;
}

}  // namespace bslb
