#include <doctest.h>

#include <cmath>

#include "bslb/bayes.hpp"
#include "bslb/metrics.hpp"
#include "support.hpp"

using namespace bslb;
using namespace bslb::testing;

namespace {

PosteriorEnsemble ensemble_of(std::vector<Weights> samples) {
  PosteriorEnsemble e;
  e.samples = std::move(samples);
  return e;
}

PotentialFn standard_normal_potential() {
  return [](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
    if (grad) *grad = q;
    return 0.5 * q.squaredNorm();
  };
}

}  // namespace

TEST_CASE("hmc: prior-only chain matches standard normal moments") {
  HmcOptions o;
  o.step_size = 0.2;
  o.leapfrog_steps = 10;
  o.draws = 2500;
  o.burn_in = 500;
  o.thinning = 1;
  o.seed = 7;
  const auto chain = hmc_chain(standard_normal_potential(), Eigen::VectorXd::Zero(4), o);
  REQUIRE(chain.samples.size() == 2000);
  for (Index d = 0; d < 4; ++d) {
    std::vector<double> xs;
    for (const auto& s : chain.samples) xs.push_back(s(d));
    CHECK(std::abs(mean(xs)) < 0.1);
    CHECK(std::abs(sample_variance(xs) - 1.0) < 0.15);
  }
  CHECK(chain.acceptance_rate > 0.9);
}

TEST_CASE("hmc: network sampler on an empty dataset samples the prior") {
  const std::vector<Index> hidden{2};
  const auto spec = NetworkSpec::mlp(2, hidden, 2);
  LabeledDataset empty;
  empty.inputs.resize(2, 0);
  HmcOptions o;
  o.step_size = 0.2;
  o.leapfrog_steps = 10;
  o.draws = 2500;
  o.burn_in = 500;
  o.thinning = 1;
  o.seed = 3;
  const auto e = hmc_sample(spec, empty, GaussianPrior{1.0}, o);
  REQUIRE(e.size() == 2000);
  for (Index d = 0; d < spec.parameter_count(); ++d) {
    std::vector<double> xs;
    for (const auto& s : e.samples) xs.push_back(s.values()(d));
    CHECK(std::abs(mean(xs)) < 0.1);
    CHECK(std::abs(sample_variance(xs) - 1.0) < 0.15);
  }
}

TEST_CASE("hmc: step size 0 never moves") {
  HmcOptions o;
  o.step_size = 0.0;
  o.draws = 50;
  o.seed = 1;
  const Eigen::VectorXd init = Eigen::Vector3d(0.3, -1.0, 2.0);
  const auto chain = hmc_chain(standard_normal_potential(), init, o);
  CHECK(chain.acceptance_rate == 1.0);
  for (const auto& s : chain.samples) CHECK(s == init);
}

TEST_CASE("hmc: leapfrog conserves energy on a quadratic potential") {
  Rng rng(5);
  const Eigen::VectorXd q = normal_vector(rng, 10);
  const Eigen::VectorXd p = normal_vector(rng, 10);
  const auto u = standard_normal_potential();
  const auto [q1, p1] = leapfrog(u, q, p, 1e-3, 100);
  CHECK(std::abs(hamiltonian(u, q1, p1) - hamiltonian(u, q, p)) < 1e-4);
}

TEST_CASE("hmc: burn-in and thinning defaults keep at least 100 samples") {
  HmcOptions o;
  o.step_size = 0.1;
  o.leapfrog_steps = 5;
  o.draws = 650;
  o.seed = 2;
  const auto chain = hmc_chain(standard_normal_potential(), Eigen::VectorXd::Zero(2), o);
  CHECK(chain.burn_in == 130);
  CHECK(chain.thinning == 5);
  CHECK(chain.samples.size() >= 100);
}

TEST_CASE("hmc: poorly tuned chains are flagged, not fatal") {
  HmcOptions o;
  o.step_size = 50.0;
  o.leapfrog_steps = 3;
  o.draws = 100;
  o.seed = 4;
  const auto chain = hmc_chain(standard_normal_potential(), Eigen::VectorXd::Zero(20), o);
  CHECK(chain.acceptance_rate < 0.05);
  CHECK(chain.poorly_tuned);
}

TEST_CASE("hmc: network chains are reproducible") {
  Rng rng(6);
  LabeledDataset data;
  data.inputs = Eigen::MatrixXd::Random(3, 12);
  for (int i = 0; i < 12; ++i) data.labels.push_back(i % 2);
  const std::vector<Index> hidden{4};
  const auto spec = NetworkSpec::mlp(3, hidden, 2);
  HmcOptions o;
  o.step_size = 0.01;
  o.leapfrog_steps = 5;
  o.draws = 20;
  o.seed = 11;
  const auto a = hmc_sample(spec, data, GaussianPrior{1.0}, o);
  const auto b = hmc_sample(spec, data, GaussianPrior{1.0}, o);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples[i].values() == b.samples[i].values());
}

TEST_CASE("network potential gradient matches finite differences") {
  Rng rng(9);
  LabeledDataset data;
  data.inputs = Eigen::MatrixXd::Random(3, 7);
  for (int i = 0; i < 7; ++i) data.labels.push_back(i % 3);
  const std::vector<Index> hidden{4};
  const auto spec = NetworkSpec::mlp(3, hidden, 3);
  const auto u = network_potential(spec, data, GaussianPrior{0.5});
  const Eigen::VectorXd q = normal_vector(rng, spec.parameter_count());
  Eigen::VectorXd grad;
  u(q, &grad);
  const Eigen::VectorXd fd = central_difference([&](const Eigen::VectorXd& v) { return u(v, nullptr); }, q);
  CHECK(relative_error(grad, fd) < 1e-6);
}

namespace {

// Likelihood N(y_i | w, 1), prior N(0, 1): posterior N(sum / (n + 1), 1 / (n + 1)).
struct ConjugateModel {
  std::vector<double> ys;

  NllEstimator nll() const {
    return [this](const Eigen::VectorXd& w, Eigen::VectorXd& grad, Rng&) {
      double value = 0.0;
      grad.setZero(1);
      for (double y : ys) {
        value += 0.5 * (y - w(0)) * (y - w(0));
        grad(0) += w(0) - y;
      }
      return value;
    };
  }
  double posterior_mean() const {
    double s = 0.0;
    for (double y : ys) s += y;
    return s / (static_cast<double>(ys.size()) + 1.0);
  }
  double posterior_std() const { return 1.0 / std::sqrt(static_cast<double>(ys.size()) + 1.0); }
};

}  // namespace

TEST_CASE("vi: conjugate Gaussian mean model") {
  ConjugateModel model{{1.2, 0.7, 2.1, 1.5, 0.9, 1.8, 1.1, 1.4, 2.0, 0.6}};
  VariationalPosterior init;
  init.mu = Eigen::VectorXd::Zero(1);
  init.rho = Eigen::VectorXd::Constant(1, inverse_softplus(1.0));
  ViOptions o;
  o.steps = 6000;
  o.learning_rate = 0.02;
  o.final_lr_fraction = 0.05;
  o.mc_samples = 1;
  o.seed = 5;
  const auto q = vi_fit(model.nll(), init, GaussianPrior{1.0}, o);
  CHECK(std::abs(q.mu(0) - model.posterior_mean()) < 0.05 * model.posterior_mean());
  CHECK(std::abs(q.stddev()(0) - model.posterior_std()) < 0.15 * model.posterior_std());
}

TEST_CASE("vi: zero steps return the initialization") {
  ConjugateModel model{{1.0, 2.0}};
  VariationalPosterior init;
  init.mu = Eigen::VectorXd::Constant(1, 0.3);
  init.rho = Eigen::VectorXd::Constant(1, -1.0);
  ViOptions o;
  o.steps = 0;
  const auto q = vi_fit(model.nll(), init, GaussianPrior{1.0}, o);
  CHECK(q.mu == init.mu);
  CHECK(q.rho == init.rho);
}

TEST_CASE("vi: KL is zero at the prior") {
  VariationalPosterior q;
  q.mu = Eigen::VectorXd::Zero(5);
  q.rho = Eigen::VectorXd::Constant(5, inverse_softplus(0.7));
  CHECK(std::abs(kl_divergence(q, GaussianPrior{0.7})) < 1e-12);
  q.mu(2) = 0.1;
  CHECK(kl_divergence(q, GaussianPrior{0.7}) > 0.0);
}

TEST_CASE("vi: softplus round trip") {
  for (double y : {1e-6, 0.01, 0.5, 1.0, 3.0, 40.0})
    CHECK(softplus(inverse_softplus(y)) == doctest::Approx(y).epsilon(1e-12));
  CHECK_THROWS_AS(inverse_softplus(0.0), ParameterError);
}

TEST_CASE("vi_sample: degenerate, CLT and reproducibility") {
  const std::vector<Index> hidden{2};
  const auto spec = NetworkSpec::mlp(2, hidden, 2);
  Rng rng(1);
  VariationalPosterior post;
  post.mu = normal_vector(rng, spec.parameter_count());
  post.rho = Eigen::VectorXd::Constant(spec.parameter_count(), -40.0);
  for (const auto& s : vi_sample(spec, post, 10, 3).samples)
    CHECK((s.values() - post.mu).cwiseAbs().maxCoeff() < 1e-9);

  post.rho = Eigen::VectorXd::Constant(spec.parameter_count(), inverse_softplus(0.5));
  const auto e = vi_sample(spec, post, 10000, 4);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(spec.parameter_count());
  for (const auto& s : e.samples) m += s.values();
  m /= 10000.0;
  const double se = 0.5 / std::sqrt(10000.0);
  CHECK((m - post.mu).cwiseAbs().maxCoeff() < 4.0 * se);

  const auto a = vi_sample(spec, post, 5, 9);
  const auto b = vi_sample(spec, post, 5, 9);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.samples[i].values() == b.samples[i].values());
}

TEST_CASE("vi: network fit improves the ELBO and is reproducible") {
  LabeledDataset data;
  data.inputs = Eigen::MatrixXd::Random(2, 40);
  for (Index i = 0; i < 40; ++i) data.labels.push_back(data.inputs(0, i) > 0 ? 1 : 0);
  const std::vector<Index> hidden{8};
  const auto spec = NetworkSpec::mlp(2, hidden, 2);
  ViOptions o;
  o.steps = 600;
  o.learning_rate = 0.02;
  o.batch_size = 10;
  o.seed = 2;
  std::vector<double> trace;
  const auto q = vi_fit(spec, data, GaussianPrior{1.0}, o, &trace);
  REQUIRE(trace.size() == 600);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += trace[static_cast<std::size_t>(i)];
    tail += trace[trace.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(tail > head);
  const auto q2 = vi_fit(spec, data, GaussianPrior{1.0}, o);
  CHECK(q.mu == q2.mu);
  CHECK(q.rho == q2.rho);
}

TEST_CASE("posterior predictive: identical, opposite and hand-built ensembles") {
  Rng rng(3);
  const std::vector<Index> hidden{5};
  const auto spec = NetworkSpec::mlp(4, hidden, 3);
  const auto w = random_weights(spec, rng);
  const Eigen::VectorXd x = uniform_vector(rng, 4);
  CHECK(relative_error(posterior_predictive(spec, ensemble_of({w, w, w}), x),
                       predict_softmax(spec, w, x)) < 1e-14);

  // Two near-certain models on opposite classes.
  const auto lspec = logistic_spec(1);
  const auto one = Eigen::VectorXd::Constant(1, 1.0);
  const auto e = ensemble_of({logistic_weights(lspec, Eigen::VectorXd::Constant(1, 1000.0)),
                              logistic_weights(lspec, Eigen::VectorXd::Constant(1, -1000.0))});
  const Eigen::VectorXd p = posterior_predictive(lspec, e, one);
  CHECK(p(0) == doctest::Approx(0.5));
  CHECK(p(1) == doctest::Approx(0.5));

  const Eigen::VectorXd x3 = Eigen::VectorXd::Constant(1, 0.5);
  const auto e3 = ensemble_of({logistic_weights(lspec, Eigen::VectorXd::Constant(1, 2.0)),
                               logistic_weights(lspec, Eigen::VectorXd::Constant(1, -2.0)),
                               logistic_weights(lspec, Eigen::VectorXd::Constant(1, 4.0))});
  const double expected = (sigmoid(1.0) + sigmoid(-1.0) + sigmoid(2.0)) / 3.0;
  CHECK(posterior_predictive(lspec, e3, x3)(1) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("posterior predictive stays on the simplex") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto spec = random_spec(rng, true);
    std::vector<Weights> ws;
    for (int i = 0; i < 1 + t % 5; ++i) ws.push_back(random_weights(spec, rng, 3.0));
    const Eigen::VectorXd p =
        posterior_predictive(spec, ensemble_of(ws), normal_vector(rng, spec.input_width()));
    CHECK((p.array() >= 0.0).all());
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("bayes heatmap: singleton, cancellation and hand average") {
  Rng rng(10);
  const std::vector<Index> hidden{5};
  const auto spec = NetworkSpec::mlp(4, hidden, 3);
  const auto w = random_weights(spec, rng);
  const Eigen::VectorXd x = uniform_vector(rng, 4);
  const auto seed = RelevanceSeed::class_logit(spec, 0);
  const auto single = bayes_heatmap(spec, ensemble_of({w}), x, seed, 0.1);
  CHECK(single.relevances == lrp_epsilon(spec, w, forward(spec, w, x), seed, 0.1).relevances);

  // Negating the last layer flips the seeded logit and every relevance.
  Weights neg = w;
  neg.weights(1) *= -1.0;
  neg.bias(1) *= -1.0;
  CHECK(bayes_heatmap(spec, ensemble_of({w, neg}), x, seed, 0.1).relevances.cwiseAbs().maxCoeff() <
        1e-14);

  const auto w2 = random_weights(spec, rng);
  const auto w3 = random_weights(spec, rng);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(4);
  for (const auto& s : {w, w2, w3})
    expected += lrp_epsilon(spec, s, forward(spec, s, x), seed, 0.1).relevances;
  expected /= 3.0;
  std::vector<Heatmap<double>> per;
  const auto avg = bayes_heatmap(spec, ensemble_of({w, w2, w3}), x, seed, 0.1,
                                 Stabilizer::sign_matched, &per);
  CHECK(relative_error(avg.relevances, expected) < 1e-14);
  CHECK(per.size() == 3);
}

TEST_CASE("bayes heatmap is linear in the ensemble") {
  Rng rng(12);
  const std::vector<Index> hidden{6};
  const auto spec = NetworkSpec::mlp(5, hidden, 3);
  std::vector<Weights> a, b;
  for (int i = 0; i < 3; ++i) a.push_back(random_weights(spec, rng));
  for (int i = 0; i < 5; ++i) b.push_back(random_weights(spec, rng));
  std::vector<Weights> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const Eigen::VectorXd x = uniform_vector(rng, 5);
  const auto seed = RelevanceSeed::all_units(0);
  const Eigen::VectorXd ha = bayes_heatmap(spec, ensemble_of(a), x, seed, 0.1).relevances;
  const Eigen::VectorXd hb = bayes_heatmap(spec, ensemble_of(b), x, seed, 0.1).relevances;
  const Eigen::VectorXd hab = bayes_heatmap(spec, ensemble_of(both), x, seed, 0.1).relevances;
  CHECK(relative_error(hab, (3.0 * ha + 5.0 * hb) / 8.0) < 1e-13);
}

TEST_CASE("ensemble subset picks evenly spaced samples") {
  const std::vector<Index> hidden{1};
  const auto spec = NetworkSpec::mlp(1, hidden, 1);
  std::vector<Weights> ws;
  for (int i = 0; i < 10; ++i)
    ws.emplace_back(spec, Eigen::VectorXd::Constant(spec.parameter_count(), i));
  const auto sub = ensemble_of(ws).subset(5);
  REQUIRE(sub.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(sub.samples[i].values()(0) == 2.0 * static_cast<double>(i));
  CHECK_THROWS_AS(ensemble_of(ws).subset(11), ParameterError);
  CHECK_THROWS_AS(ensemble_of(ws).subset(0), ParameterError);
}
