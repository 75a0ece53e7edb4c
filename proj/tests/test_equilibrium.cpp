#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "optest/equilibrium.hpp"
#include "optest/random.hpp"

using namespace optest;
using Catch::Approx;

namespace {

const ModelParams kSym(0.0, 1.0, {1.0, 1.0});
const FeatureProfile kSymProfile{{0.0}, std::nullopt};

oracle::Model model_of(const ModelParams& p, const FeatureProfile& prof) {
  return {p.mu(), p.sigma2(), {p.feature_vars().begin(), p.feature_vars().end()}, prof.others};
}

struct Instance {
  ModelParams params;
  FeatureProfile profile;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu(-2.0, 2.0), var(0.2, 3.0), theta(-3.0, 3.0);
  std::uniform_int_distribution<int> k(2, 5);
  std::vector<double> vars(static_cast<std::size_t>(k(rng)));
  for (auto& v : vars) v = var(rng);
  ModelParams p(mu(rng), var(rng), vars);
  FeatureProfile prof;
  for (std::size_t i = 0; i + 1 < vars.size(); ++i) prof.others.push_back(p.mu() + theta(rng));
  return {p, prof};
}

}  // namespace

TEST_CASE("withholding estimate limits") {
  const double m = posterior_without_test(kSym, kSymProfile).mean();
  CHECK(withhold_estimate_unknown_access(kSym, kSymProfile, 1e-12, 0.7) == Approx(m).margin(1e-11));
  CHECK(withhold_estimate_unknown_access(kSym, kSymProfile, 0.5, -kInf) == m);
  CHECK(withhold_estimate_unknown_access(kSym, kSymProfile, 0.5, -60.0) == Approx(m).margin(1e-12));
  CHECK_THROWS(withhold_estimate_unknown_access(kSym, kSymProfile, 1.0, 0.0));
  CHECK_THROWS(withhold_estimate_unknown_access(kSym, kSymProfile, 0.0, 0.0));
}

TEST_CASE("withholding estimate matches a pooled Monte Carlo population") {
  const double w = withhold_estimate_unknown_access(kSym, kSymProfile, 0.5, 0.0);
  // Students with theta_1 = 0: q | theta_1 ~ N(0, 1/2). Half have access and
  // withhold when theta_2 < 0.
  RandomStream rng(99);
  std::vector<double> pooled;
  pooled.reserve(8'000'000);
  for (int i = 0; i < 10'000'000; ++i) {
    const double q = rng.normal(0.0, std::sqrt(0.5));
    if (i % 2 == 0) {
      pooled.push_back(q);
    } else if (q + rng.normal(0.0, 1.0) < 0.0) {
      pooled.push_back(q);
    }
  }
  const auto ms = oracle::mean_se(pooled);
  CHECK(std::abs(ms.mean - w) < 3.0 * ms.se);
  CHECK(w == Approx(model_of(kSym, kSymProfile).withhold_estimate(0.5, 0.0)).margin(1e-9));
}

TEST_CASE("withholding estimate agrees with quadrature on random instances") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> c(0.05, 0.95), z(-4.0, 4.0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = random_instance(rng);
    const auto om = model_of(inst.params, inst.profile);
    const Gaussian pred = predictive_test_score(inst.params, inst.profile);
    const double C = c(rng), t = pred.mean() + z(rng) * pred.sd();
    CHECK(withhold_estimate_unknown_access(inst.params, inst.profile, C, t) ==
          Approx(om.withhold_estimate(C, t)).margin(1e-8));
    CHECK(nontaker_estimate_unknown_access(inst.params, inst.profile, C, t) ==
          Approx(om.nontaker_estimate(C, t)).margin(1e-8));
  }
}

TEST_CASE("withholding estimate is continuous in the threshold") {
  double prev_jump = kInf;
  for (int n : {200, 2000, 20000}) {
    double worst = 0.0;
    double prev = withhold_estimate_unknown_access(kSym, kSymProfile, 0.5, -10.0);
    for (int i = 1; i <= n; ++i) {
      const double t = -10.0 + 20.0 * i / n;
      const double w = withhold_estimate_unknown_access(kSym, kSymProfile, 0.5, t);
      worst = std::max(worst, std::abs(w - prev));
      prev = w;
    }
    CHECK(worst < prev_jump);
    prev_jump = worst;
  }
  CHECK(prev_jump < 1e-3);
}

TEST_CASE("symmetric score threshold matches the grid-scan oracle") {
  const auto sol = solve_report_threshold(kSym, kSymProfile, 0.5);
  REQUIRE(sol.kind == EquilibriumKind::ScoreThreshold);
  REQUIRE(sol.canonical);
  const auto om = model_of(kSym, kSymProfile);
  const auto roots = oracle::grid_roots(
      [&](double t) { return om.report_estimate(t) - om.withhold_estimate(0.5, t); }, -10.0, 10.0, 1e-2);
  REQUIRE(roots.size() == sol.roots.size());
  CHECK(*sol.canonical == Approx(roots.front()).margin(1e-7));
  CHECK(std::abs(sol.residuals.front()) <= 1e-9);
  // Profile-free standardized form: x = -C phi(x) / (C Phi(x) + 1 - C).
  const double x = standardized_threshold(kSym, kSymProfile, sol.kind, *sol.canonical);
  const double phi = oracle::npdf(x, 0.0, 1.0), Phi = oracle::ncdf(x, 0.0, 1.0);
  CHECK(x == Approx(-0.5 * phi / (0.5 * Phi + 0.5)).margin(1e-9));
}

TEST_CASE("score thresholds stay finite at extreme access fractions") {
  const auto om = model_of(kSym, kSymProfile);
  for (double C : {0.01, 0.99}) {
    const auto sol = solve_report_threshold(kSym, kSymProfile, C);
    REQUIRE(sol.canonical);
    CHECK(std::isfinite(*sol.canonical));
    const auto roots = oracle::grid_roots(
        [&](double t) { return om.report_estimate(t) - om.withhold_estimate(C, t); }, -10.0, 10.0, 1e-2);
    REQUIRE_FALSE(roots.empty());
    CHECK(*sol.canonical == Approx(roots.front()).margin(1e-7));
  }
}

TEST_CASE("skill threshold matches the oracle and collapses to the mean as C vanishes") {
  const auto sol = solve_taking_threshold(kSym, kSymProfile, 0.5);
  REQUIRE(sol.kind == EquilibriumKind::SkillThreshold);
  const auto om = model_of(kSym, kSymProfile);
  const auto roots = oracle::grid_roots(
      [&](double q) { return om.report_estimate(q) - om.nontaker_estimate(0.5, q); }, -10.0, 10.0, 1e-2);
  REQUIRE_FALSE(roots.empty());
  CHECK(*sol.canonical == Approx(roots.front()).margin(1e-7));
  CHECK(std::abs(sol.residuals.front()) <= 1e-9);

  const auto tiny = solve_taking_threshold(kSym, kSymProfile, 1e-9);
  CHECK(*tiny.canonical == Approx(posterior_without_test(kSym, kSymProfile).mean()).margin(1e-6));
}

TEST_CASE("every solved root satisfies the two-sided preference conditions") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const auto inst = random_instance(rng);
    for (double C : {0.1, 0.5, 0.9}) {
      for (auto req : {RequirementPolicy::ReportOptional, RequirementPolicy::ReportIfTake}) {
        const auto sol = solve_unknown_access(inst.params, inst.profile, C, req);
        for (double r : sol.residuals) CHECK(std::abs(r) <= 1e-9);
        CHECK_FALSE(check_two_sided_preference(inst.params, sol, 201).has_value());
      }
    }
  }
}

TEST_CASE("solutions rebase across profiles by a shift") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const auto inst = random_instance(rng);
    FeatureProfile other = inst.profile;
    for (auto& v : other.others) v += 1.3;
    const auto a = solve_report_threshold(inst.params, inst.profile, 0.4);
    const auto b = solve_report_threshold(inst.params, other, 0.4);
    const auto moved = rebase(a, inst.params, other);
    CHECK(*moved.canonical == Approx(*b.canonical).margin(1e-8));
    CHECK(std::abs(moved.residuals.front()) <= 1e-9);
  }
}

TEST_CASE("report_if_access cannot be solved without observing access") {
  CHECK_THROWS_AS(solve_unknown_access(kSym, kSymProfile, 0.5, RequirementPolicy::ReportIfAccess),
                  std::invalid_argument);
}

TEST_CASE("known access gives full reporting for every requirement") {
  for (auto req : {RequirementPolicy::ReportOptional, RequirementPolicy::ReportIfTake,
                   RequirementPolicy::ReportIfAccess})
    CHECK(known_access_equilibrium(kSym, kSymProfile, req).kind == EquilibriumKind::FullReporting);
}

TEST_CASE("every finite withholding threshold is unstable under known access") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    const auto inst = random_instance(rng);
    const Gaussian pred = predictive_test_score(inst.params, inst.profile);
    const auto om = model_of(inst.params, inst.profile);
    for (int i = 0; i < 101; ++i) {
      const double t = pred.mean() - 5.0 * pred.sd() + 10.0 * pred.sd() * i / 100.0;
      const auto w = check_threshold_instability(inst.params, inst.profile, t);
      REQUIRE(w.has_value());
      CHECK(w->score < t);
      CHECK(w->score >= w->indifference_score);
      CHECK(w->report_estimate >= w->pooled_estimate);
      if (i % 25 == 0) {
        // Pooled estimate of withholders, from the generative model.
        const double mass = om.moment([&](double q) { return oracle::ncdf(t, q, om.test_var()); });
        const double first = om.moment([&](double q) { return q * oracle::ncdf(t, q, om.test_var()); });
        CHECK(w->pooled_estimate == Approx(first / mass).margin(1e-8));
      }
    }
  }
  CHECK_FALSE(check_threshold_instability(kSym, kSymProfile, -kInf).has_value());
}

TEST_CASE("instability witness at the predictive mean sits just below the threshold") {
  const Gaussian pred = predictive_test_score(kSym, kSymProfile);
  const auto w = check_threshold_instability(kSym, kSymProfile, pred.mean());
  REQUIRE(w);
  // Equating the linear report estimate to the pooled one gives the truncated
  // predictive mean.
  const double num = oracle::integrate([&](double x) { return x * oracle::npdf(x, 0.0, 1.5); }, -40.0, 0.0);
  const double den = oracle::integrate([&](double x) { return oracle::npdf(x, 0.0, 1.5); }, -40.0, 0.0);
  CHECK(w->indifference_score == Approx(num / den).margin(1e-9));
  CHECK(w->score < pred.mean());
  CHECK(w->score > w->indifference_score);
}

TEST_CASE("symmetric thresholds reproduce the golden file") {
  std::ifstream in(OPTEST_GOLDEN_DIR "/symmetric_thresholds.csv");
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string kind, c, t;
    std::getline(ss, kind, ',');
    std::getline(ss, c, ',');
    std::getline(ss, t, ',');
    const auto req = kind == "score_threshold" ? RequirementPolicy::ReportOptional : RequirementPolicy::ReportIfTake;
    const auto sol = solve_unknown_access(kSym, kSymProfile, std::stod(c), req);
    CHECK(sol.roots.size() == 1);
    CHECK(*sol.canonical == Approx(std::stod(t)).margin(1e-9));
    ++rows;
  }
  CHECK(rows == 6);
}
