#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "optest/dynamics.hpp"

using namespace optest;
using Catch::Approx;

namespace {

const ModelParams kSym(0.0, 1.0, {1.0, 1.0});
const FeatureProfile kSymProfile{{0.0}, std::nullopt};

}  // namespace

TEST_CASE("known-access dynamics reach full reporting from the predictive mean") {
  const auto tr = best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::BoKnownAccess, 0.5, 0.0,
                                         {100, 1e-9});
  REQUIRE(tr.status == DynamicsStatus::Converged);
  CHECK(tr.converged_to == DynamicsOutcome::FullReporting);
  CHECK(tr.last().reporting_fraction >= 1.0 - 1e-9);
  // Each round lowers the threshold.
  for (std::size_t i = 1; i < tr.steps.size(); ++i) CHECK(tr.steps[i].threshold < tr.steps[i - 1].threshold);
}

TEST_CASE("known-access dynamics with nobody reporting at first") {
  const auto tr = best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::BoKnownAccess, 0.5, kInf,
                                         {100, 1e-9});
  CHECK(tr.converged_to == DynamicsOutcome::FullReporting);
}

TEST_CASE("equalizing dynamics unravel to no reporting") {
  const auto tr = best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::Equalizing, 0.5, -kInf,
                                         {200, 1e-9, 10000, 3});
  REQUIRE(tr.status == DynamicsStatus::Converged);
  CHECK(tr.converged_to == DynamicsOutcome::NoReporting);
  CHECK(tr.last().reporting_fraction == 0.0);
  CHECK(tr.steps.front().reporting_fraction == 1.0);
  for (std::size_t i = 1; i < tr.steps.size(); ++i)
    CHECK(tr.steps[i].reporting_fraction < tr.steps[i - 1].reporting_fraction);
  CHECK(tr.reporter_pool_z.empty());
}

TEST_CASE("unknown-access dynamics settle on the solver's root") {
  const auto sol = solve_report_threshold(kSym, kSymProfile, 0.5);
  const auto tr = best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::BoUnknownAccess, 0.5, 0.0,
                                         {500, 1e-12});
  REQUIRE(tr.status == DynamicsStatus::Converged);
  CHECK(tr.converged_to == DynamicsOutcome::Interior);
  CHECK(tr.last().threshold == Approx(*sol.canonical).margin(1e-6));

  const oracle::Model om{0.0, 1.0, {1.0, 1.0}, {0.0}};
  const auto roots = oracle::grid_roots(
      [&](double t) { return om.report_estimate(t) - om.withhold_estimate(0.5, t); }, -3.0, 3.0, 1e-2);
  REQUIRE(roots.size() == 1);
  CHECK(tr.last().threshold == Approx(roots.front()).margin(1e-6));
}

TEST_CASE("running out of iterations is reported, not hidden") {
  const auto tr = best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::BoUnknownAccess, 0.5, 3.0,
                                         {2, 1e-15});
  CHECK(tr.status == DynamicsStatus::NonConvergent);
  CHECK_FALSE(tr.converged_to.has_value());
  CHECK(tr.steps.size() == 3);
}

TEST_CASE("dynamics arguments are validated") {
  CHECK_THROWS(best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::BoUnknownAccess, 1.5, 0.0));
  CHECK_THROWS(best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::Equalizing, 0.5, NAN));
  DynamicsOptions none;
  none.pool_size = 0;
  CHECK_THROWS(best_response_dynamics(kSym, kSymProfile, DynamicsPolicy::Equalizing, 0.5, 0.0, none));
  CHECK_THROWS(dynamics_policy_for(policy::TestBlank{}));
  CHECK(dynamics_policy_for(policy::Equalizing{}) == DynamicsPolicy::Equalizing);
}
