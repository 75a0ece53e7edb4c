#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "optest/gauss.hpp"
#include "optest/random.hpp"

using namespace optest;
using Catch::Approx;

namespace {

ModelParams random_params(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> mu(-2.0, 2.0), var(0.2, 3.0);
  std::vector<double> vars(k);
  for (auto& v : vars) v = var(rng);
  return ModelParams(mu(rng), var(rng), vars);
}

}  // namespace

TEST_CASE("posterior with no observations is the prior") {
  const ModelParams p(0.0, 1.0, {1.0, 1.0});
  const Gaussian g = posterior(p, {});
  CHECK(g.mean() == 0.0);
  CHECK(g.variance() == 1.0);
}

TEST_CASE("equal precision posterior sits at the midpoint") {
  const ModelParams p(0.0, 1.0, {1.0, 1.0});
  const std::vector<Observation> obs{{0, 2.0}};
  const Gaussian g = posterior(p, obs);
  CHECK(g.mean() == Approx(1.0).epsilon(1e-15));
  CHECK(g.variance() == Approx(0.5).epsilon(1e-15));
}

TEST_CASE("posterior N(0.8, 1/3) agrees with a kernel-weighted Monte Carlo average") {
  const ModelParams p(0.0, 1.0, {0.5, 1.0});
  const std::vector<Observation> obs{{0, 1.2}};
  const Gaussian g = posterior(p, obs);
  CHECK(g.mean() == Approx(0.8).epsilon(1e-14));
  CHECK(g.variance() == Approx(1.0 / 3.0).epsilon(1e-14));

  RandomStream rng(11);
  double wsum = 0.0, wq = 0.0, wq2 = 0.0;
  const double h = 0.02;
  for (int i = 0; i < 10'000'000; ++i) {
    const double q = rng.normal(0.0, 1.0);
    const double theta = q + rng.normal(0.0, std::sqrt(0.5));
    const double d = (theta - 1.2) / h;
    if (std::abs(d) > 4.0) continue;
    const double w = std::exp(-0.5 * d * d);
    wsum += w;
    wq += w * q;
    wq2 += w * q * q;
  }
  const double mean = wq / wsum;
  CHECK(std::abs(mean - 0.8) < 0.02);
  CHECK(std::abs(wq2 / wsum - mean * mean - 1.0 / 3.0) < 0.02);
}

TEST_CASE("posterior rejects bad indices") {
  const ModelParams p(0.0, 1.0, {1.0, 1.0});
  const std::vector<Observation> dup{{0, 1.0}, {0, 2.0}};
  const std::vector<Observation> far{{2, 1.0}};
  CHECK_THROWS_AS(posterior(p, dup), std::invalid_argument);
  CHECK_THROWS_AS(posterior(p, far), std::out_of_range);
}

TEST_CASE("model parameters are validated") {
  CHECK_THROWS(ModelParams(0.0, 0.0, {1.0, 1.0}));
  CHECK_THROWS(ModelParams(0.0, 1.0, {1.0}));
  CHECK_THROWS(ModelParams(0.0, 1.0, {1.0, -1.0}));
  CHECK_THROWS(ModelParams(0.0, 1.0, {1.0, INFINITY}));
  CHECK_THROWS(Gaussian(0.0, 0.0));
}

TEST_CASE("posterior matches quadrature of the generative model on random instances") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> theta(-3.0, 3.0);
  for (int rep = 0; rep < 25; ++rep) {
    const ModelParams p = random_params(rng, 2 + rep % 4);
    FeatureProfile prof;
    for (std::size_t k = 0; k + 1 < p.num_features(); ++k) prof.others.push_back(theta(rng));
    const Gaussian g = posterior_without_test(p, prof);
    const oracle::Model m{p.mu(), p.sigma2(), {p.feature_vars().begin(), p.feature_vars().end()}, prof.others};
    CHECK(g.mean() == Approx(m.base_mean()).margin(1e-9));
    CHECK(g.variance() == Approx(m.base_var()).margin(1e-9));
  }
}

TEST_CASE("precision additivity and order invariance") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> theta(-3.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const ModelParams p = random_params(rng, 5);
    std::vector<Observation> obs;
    for (std::size_t k = 0; k < 5; ++k)
      if ((rep >> k) & 1 || k == 0) obs.push_back({k, theta(rng)});
    double prec = 1.0 / p.sigma2();
    for (const auto& o : obs) prec += 1.0 / p.feature_vars()[o.feature];
    const Gaussian a = posterior(p, obs);
    CHECK(a.precision() == Approx(prec).epsilon(1e-14));
    std::shuffle(obs.begin(), obs.end(), rng);
    const Gaussian b = posterior(p, obs);
    CHECK(a == b);
  }
}

TEST_CASE("posterior mean increases in each observation with the precision-share slope") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    const ModelParams p = random_params(rng, 3);
    std::vector<Observation> obs{{0, 0.3}, {1, -0.7}, {2, 1.1}};
    const Gaussian base = posterior(p, obs);
    for (std::size_t k = 0; k < 3; ++k) {
      auto bumped = obs;
      bumped[k].value += 0.5;
      const double slope = (posterior(p, bumped).mean() - base.mean()) / 0.5;
      CHECK(slope > 0.0);
      CHECK(slope == Approx((1.0 / p.feature_vars()[k]) * base.variance()).epsilon(1e-10));
    }
  }
}

TEST_CASE("predictive test score distribution") {
  const ModelParams p(0.0, 1.0, {1.0, 0.5});
  const FeatureProfile prof{{2.0}, std::nullopt};
  const Gaussian g = predictive_test_score(p, prof);
  CHECK(g.mean() == Approx(1.0).epsilon(1e-15));
  CHECK(g.variance() == Approx(1.0).epsilon(1e-15));
  CHECK(g.variance() > p.test_var());
  CHECK_THROWS(predictive_test_score(p, FeatureProfile{{2.0}, 1.0}));

  // Sampling (q, theta_1, theta_2) and keeping theta_1 within 2 +/- 0.01.
  RandomStream rng(17);
  std::vector<double> kept;
  while (kept.size() < 20000) {
    const double q = rng.normal(0.0, 1.0);
    const double t1 = q + rng.normal(0.0, 1.0);
    const double t2 = q + rng.normal(0.0, std::sqrt(0.5));
    if (std::abs(t1 - 2.0) < 0.01) kept.push_back(t2);
  }
  CHECK(std::abs(oracle::mean_se(kept).mean - 1.0) < 0.02);
  CHECK(std::abs(oracle::sample_var(kept) - 1.0) < 0.03);
}

TEST_CASE("truncated means") {
  CHECK(truncated_mean_below(Gaussian(0.0, 1.0), 0.0) == Approx(-std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-14));
  CHECK(truncated_mean_above(Gaussian(0.0, 1.0), 0.0) == Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-14));
  CHECK(truncated_mean_below(Gaussian(1.5, 2.0), kInf) == 1.5);
  CHECK(truncated_mean_below(Gaussian(1.5, 2.0), 40.0) == Approx(1.5).epsilon(1e-15));

  const Gaussian g(1.0, 4.0);
  const double num = oracle::integrate([](double x) { return x * oracle::npdf(x, 1.0, 4.0); }, -40.0, 0.0);
  const double den = oracle::integrate([](double x) { return oracle::npdf(x, 1.0, 4.0); }, -40.0, 0.0);
  CHECK(truncated_mean_below(g, 0.0) == Approx(num / den).margin(1e-6));
  CHECK(truncated_mean_below(g, 0.0) == Approx(1.0 - 2.0 * 0.3520653267642995 / 0.3085375387259869).margin(1e-12));
}

TEST_CASE("truncated means stay on the correct side and match quadrature across the tail") {
  const Gaussian g(0.5, 2.25);
  for (double t = -12.0; t <= 12.0; t += 0.37) {
    const double below = truncated_mean_below(g, t);
    const double above = truncated_mean_above(g, t);
    CHECK(below < t);
    CHECK(below < g.mean());
    CHECK(above > t);
    CHECK(above > g.mean());
    if (std::abs(t - g.mean()) / g.sd() < 6.0) {
      const double lo = t - 30.0, hi = t + 30.0;
      const double num = oracle::integrate([&](double x) { return x * oracle::npdf(x, 0.5, 2.25); }, lo, t);
      const double den = oracle::integrate([&](double x) { return oracle::npdf(x, 0.5, 2.25); }, lo, t);
      CHECK(below == Approx(num / den).margin(1e-7));
      const double num2 = oracle::integrate([&](double x) { return x * oracle::npdf(x, 0.5, 2.25); }, t, hi);
      const double den2 = oracle::integrate([&](double x) { return oracle::npdf(x, 0.5, 2.25); }, t, hi);
      CHECK(above == Approx(num2 / den2).margin(1e-7));
    }
  }
}

TEST_CASE("far tails use the flagged asymptotic branch without blowing up") {
  const Gaussian g(0.0, 1.0);
  const TailMean far = truncated_mean_below_detail(g, -40.0);
  CHECK(far.asymptotic);
  CHECK(std::isfinite(far.value));
  CHECK(far.value < -40.0);
  CHECK(far.value > -40.0 - 1.0 / 40.0 - 1e-9);
  const TailMean huge = truncated_mean_below_detail(g, -1e6);
  CHECK(std::isfinite(huge.value));
  const TailMean near = truncated_mean_below_detail(g, -1.0);
  CHECK_FALSE(near.asymptotic);
  // The asymptotic branch joins the direct formula smoothly at the cutoff.
  const double left = truncated_mean_below(g, -kMillsAsymptoticCutoff - 1e-9);
  const double right = truncated_mean_below(g, -kMillsAsymptoticCutoff + 1e-9);
  CHECK(left == Approx(right).margin(1e-8));
  CHECK(truncated_mean_above(g, 50.0) > 50.0);
}

TEST_CASE("survival probabilities") {
  CHECK(survival(Gaussian(0.0, 1.0), 0.0) == 0.5);
  CHECK(survival(Gaussian(0.0, 1.0), kInf) == 0.0);
  CHECK(survival(Gaussian(0.0, 1.0), -kInf) == 1.0);
  CHECK(survival(Gaussian(2.0, 4.0), 3.0) == Approx(1.0 - oracle::ncdf(0.5, 0.0, 1.0)).margin(1e-9));
  CHECK(survival(Gaussian(2.0, 4.0), 3.0) == Approx(0.3085375387).margin(1e-9));
  double prev = 1.0;
  for (double t = -6.0; t <= 6.0; t += 0.25) {
    const double s = survival(Gaussian(0.3, 1.7), t);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    CHECK(s < prev);
    CHECK(s + cdf(Gaussian(0.3, 1.7), t) == Approx(1.0).epsilon(1e-14));
    prev = s;
  }
}

TEST_CASE("random streams are reproducible and keyed") {
  RandomStream a(1, 2, 3, StreamPurpose::Skill), b(1, 2, 3, StreamPurpose::Skill);
  RandomStream c(1, 2, 4, StreamPurpose::Skill), d(1, 2, 3, StreamPurpose::TestScore);
  const auto x = a(), y = b();
  CHECK(x == y);
  CHECK(c() != x);
  CHECK(d() != x);
}
