#include <doctest.h>

#include <cmath>

#include "bslb/attack.hpp"
#include "support.hpp"

using namespace bslb;
using namespace bslb::testing;

namespace {

AttackSpec fgsm_spec(double delta) {
  AttackSpec a;
  a.method = AttackMethod::fgsm;
  a.delta = delta;
  return a;
}

AttackSpec pgd_spec(double eps, double alpha, int steps, bool random_init, std::uint64_t seed = 0) {
  AttackSpec a;
  a.method = AttackMethod::pgd;
  a.eps = eps;
  a.alpha = alpha;
  a.steps = steps;
  a.random_init = random_init;
  a.seed = seed;
  return a;
}

PosteriorEnsemble ensemble_of(std::vector<Weights> samples) {
  PosteriorEnsemble e;
  e.samples = std::move(samples);
  return e;
}

}  // namespace

TEST_CASE("fgsm: delta 0 and zero gradients leave x unchanged") {
  Rng rng(1);
  const std::vector<Index> hidden{6};
  const auto spec = NetworkSpec::mlp(5, hidden, 3);
  const auto w = random_weights(spec, rng);
  const Eigen::VectorXd x = uniform_vector(rng, 5);
  CHECK(fgsm(spec, w, x, std::nullopt, fgsm_spec(0.0)) == x);
  CHECK(fgsm(spec, Weights::zeros(spec), x, 1, fgsm_spec(0.3)) == x);
}

TEST_CASE("fgsm: one-dimensional logistic example") {
  const auto spec = logistic_spec(1);
  const auto w = logistic_weights(spec, Eigen::VectorXd::Constant(1, 2.0));
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.4);
  // dL/dx = (sigmoid(0.8) - 1) * 2 < 0, so the step goes down by delta.
  CHECK((sigmoid(0.8) - 1.0) * 2.0 < 0.0);
  CHECK(grad_loss_input(spec, w, x, 1)(0) < 0.0);
  CHECK(fgsm(spec, w, x, 1, fgsm_spec(0.1))(0) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("fgsm: perturbation lies in {-delta, 0, +delta} before clipping") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const auto spec = random_spec(rng, true);
    const auto w = random_weights(spec, rng);
    const Eigen::VectorXd x = uniform_vector(rng, spec.input_width());
    AttackSpec a = fgsm_spec(0.05 + 0.3 * (t % 7) / 7.0);
    a.clip_low = -1e9;
    a.clip_high = 1e9;
    const Eigen::VectorXd d = fgsm(spec, w, x, std::nullopt, a) - x;
    for (Index i = 0; i < d.size(); ++i) {
      const double v = std::abs(d(i));
      CHECK((v == 0.0 || std::abs(v - a.delta) < 1e-15));
    }
  }
}

TEST_CASE("fgsm: output is clipped to the pixel range") {
  const auto spec = logistic_spec(2);
  const auto w = logistic_weights(spec, Eigen::Vector2d(1.0, -1.0));
  const Eigen::Vector2d x(0.95, 0.02);
  const Eigen::VectorXd adv = fgsm(spec, w, x, 0, fgsm_spec(0.25));
  CHECK(adv.minCoeff() >= 0.0);
  CHECK(adv.maxCoeff() <= 1.0);
}

TEST_CASE("pgd: eps 0 returns x") {
  Rng rng(2);
  const std::vector<Index> hidden{6};
  const auto spec = NetworkSpec::mlp(5, hidden, 3);
  const auto w = random_weights(spec, rng);
  const Eigen::VectorXd x = uniform_vector(rng, 5);
  CHECK(pgd(spec, w, x, std::nullopt, pgd_spec(0.0, 0.0, 5, true)) == x);
}

TEST_CASE("pgd: one step with alpha = eps equals fgsm") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto spec = random_spec(rng, true);
    const auto w = random_weights(spec, rng);
    const Eigen::VectorXd x = uniform_vector(rng, spec.input_width());
    const double eps = 0.01 + 0.3 * (t % 10) / 10.0;
    CHECK(pgd(spec, w, x, std::nullopt, pgd_spec(eps, eps, 1, false)) ==
          fgsm(spec, w, x, std::nullopt, fgsm_spec(eps)));
  }
}

TEST_CASE("pgd: every iterate stays inside the ball") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto spec = random_spec(rng, true);
    const auto w = random_weights(spec, rng);
    const Eigen::VectorXd x = uniform_vector(rng, spec.input_width());
    const auto a = pgd_spec(0.1, 0.04, 6, true, static_cast<std::uint64_t>(t));
    int iterates = 0;
    pgd<double>(spec, w, x, std::nullopt, a, [&](const Eigen::VectorXd& v) {
      ++iterates;
      CHECK((v - x).cwiseAbs().maxCoeff() <= a.eps + 1e-12);
      CHECK(v.minCoeff() >= 0.0);
      CHECK(v.maxCoeff() <= 1.0);
    });
    CHECK(iterates == a.steps + 1);
  }
}

TEST_CASE("pgd: random start is reproducible from the seed") {
  Rng rng(5);
  const std::vector<Index> hidden{6};
  const auto spec = NetworkSpec::mlp(5, hidden, 3);
  const auto w = random_weights(spec, rng);
  const Eigen::VectorXd x = uniform_vector(rng, 5);
  const auto a = pgd_spec(0.2, 0.05, 3, true, 42);
  auto b = a;
  b.seed = 43;
  CHECK(pgd(spec, w, x, std::nullopt, a) == pgd(spec, w, x, std::nullopt, a));
  CHECK(pgd(spec, w, x, std::nullopt, a) != pgd(spec, w, x, std::nullopt, b));
}

TEST_CASE("attack spec validation") {
  CHECK_THROWS_AS(fgsm_spec(-0.1).validate(), ParameterError);
  CHECK_THROWS_AS(pgd_spec(0.1, 0.2, 3, false).validate(), ParameterError);
  CHECK_THROWS_AS(pgd_spec(0.1, 0.05, 0, false).validate(), ParameterError);
  AttackSpec bad_clip;
  bad_clip.clip_low = 1.0;
  CHECK_THROWS_AS(bad_clip.validate(), ParameterError);
  CHECK_NOTHROW(pgd_spec(0.1, 0.1, 1, false).validate());
}

TEST_CASE("bayes_fgsm: identical samples match the deterministic attack") {
  Rng rng(6);
  const std::vector<Index> hidden{6};
  const auto spec = NetworkSpec::mlp(5, hidden, 3);
  const auto w = random_weights(spec, rng);
  const auto e = ensemble_of({w, w, w, w});
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd x = uniform_vector(rng, 5);
    CHECK(bayes_fgsm(spec, e, x, std::nullopt, fgsm_spec(0.1)) ==
          fgsm(spec, w, x, std::nullopt, fgsm_spec(0.1)));
  }
}

TEST_CASE("bayes_fgsm: opposite gradients cancel") {
  // Logistic models w and -w at x = 0 give p = 0.5 for both, so the
  // class-1 loss gradients are -0.5 w and +0.5 w.
  const auto spec = logistic_spec(3);
  const Eigen::Vector3d v(1.0, -2.0, 0.5);
  const auto e = ensemble_of({logistic_weights(spec, v), logistic_weights(spec, -v)});
  const Eigen::VectorXd x = Eigen::Vector3d(0.0, 0.0, 0.0);
  CHECK(ensemble_loss_gradient(spec, e, x, 1).isZero());
  CHECK(bayes_fgsm(spec, e, x, 1, fgsm_spec(0.2)) == x);
}

TEST_CASE("bayes_fgsm: three linear models with a hand-summed gradient") {
  const auto spec = logistic_spec(2);
  // Class-1 gradient of model i is (sigmoid(w_i . x) - 1) w_i.
  const Eigen::Vector2d w1(1.0, 2.0), w2(-3.0, 1.0), w3(1.0, -4.0);
  const auto e = ensemble_of(
      {logistic_weights(spec, w1), logistic_weights(spec, w2), logistic_weights(spec, w3)});
  const Eigen::VectorXd x = Eigen::Vector2d(0.5, 0.5);
  Eigen::Vector2d expected = Eigen::Vector2d::Zero();
  for (const auto& w : {w1, w2, w3}) expected += (sigmoid(w.dot(x)) - 1.0) * w;
  CHECK(relative_error(ensemble_loss_gradient(spec, e, x, 1), expected) < 1e-12);
  // Summed gradient is (+, +) here, so both pixels rise by delta.
  CHECK((expected.array() > 0.0).all());
  const Eigen::VectorXd adv = bayes_fgsm(spec, e, x, 1, fgsm_spec(0.1));
  CHECK(adv(0) == doctest::Approx(0.6));
  CHECK(adv(1) == doctest::Approx(0.6));
}

TEST_CASE("bayes_pgd: singleton and single-step coincidences") {
  Rng rng(7);
  const std::vector<Index> hidden{6};
  const auto spec = NetworkSpec::mlp(5, hidden, 3);
  const auto w = random_weights(spec, rng);
  const auto single = ensemble_of({w});
  const auto many = ensemble_of({w, random_weights(spec, rng), random_weights(spec, rng)});
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd x = uniform_vector(rng, 5);
    const auto a = pgd_spec(0.2, 0.05, 4, true, static_cast<std::uint64_t>(t));
    CHECK(bayes_pgd(spec, single, x, std::nullopt, a) == pgd(spec, w, x, std::nullopt, a));
    CHECK(bayes_pgd(spec, many, x, std::nullopt, pgd_spec(0.2, 0.2, 1, false)) ==
          bayes_fgsm(spec, many, x, std::nullopt, fgsm_spec(0.2)));
    bayes_pgd(spec, many, x, std::nullopt, a, [&](const Eigen::VectorXd& v) {
      CHECK((v - x).cwiseAbs().maxCoeff() <= a.eps + 1e-12);
    });
  }
}

TEST_CASE("ensemble attacks reject empty ensembles and bad labels") {
  const auto spec = logistic_spec(2);
  const Eigen::VectorXd x = Eigen::Vector2d(0.5, 0.5);
  CHECK_THROWS_AS(bayes_fgsm(spec, PosteriorEnsemble{}, x, 1, fgsm_spec(0.1)), ParameterError);
  const auto e = ensemble_of({Weights::zeros(spec)});
  CHECK_THROWS_AS(bayes_fgsm(spec, e, x, 5, fgsm_spec(0.1)), IndexError);
  CHECK_THROWS_AS(fgsm(spec, Weights::zeros(spec), x, -1, fgsm_spec(0.1)), IndexError);
}
