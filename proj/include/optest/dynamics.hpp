#pragma once

// Synchronous best-response dynamics over a cohort with fixed non-test
// features. Each round every student with access best-responds to the school's
// non-reporter estimate of the previous round; the new reporting set is again
// an upper set of scores, so the state is a single threshold.
//
// BoUnknownAccess and BoKnownAccess evolve the continuum of students exactly.
// Equalizing follows a finite pool of with-access students, because the
// policy resamples from the empirical reported-score distribution of the round.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "optest/equilibrium.hpp"
#include "optest/gauss.hpp"
#include "optest/policies.hpp"
#include "optest/random.hpp"

namespace optest {

enum class DynamicsPolicy { BoUnknownAccess, BoKnownAccess, Equalizing };
enum class DynamicsOutcome { Interior, NoReporting, FullReporting };
enum class DynamicsStatus { Converged, NonConvergent };

inline std::string_view to_string(DynamicsOutcome o) {
  switch (o) {
    case DynamicsOutcome::Interior: return "interior";
    case DynamicsOutcome::NoReporting: return "no_reporting";
    case DynamicsOutcome::FullReporting: return "full_reporting";
  }
  return "?";
}

inline std::string_view to_string(DynamicsStatus s) {
  return s == DynamicsStatus::Converged ? "converged" : "non_convergent";
}

inline DynamicsPolicy dynamics_policy_for(const PolicySpec& p) {
  if (std::holds_alternative<policy::BoUnknownAccess>(p)) return DynamicsPolicy::BoUnknownAccess;
  if (std::holds_alternative<policy::BoKnownAccess>(p)) return DynamicsPolicy::BoKnownAccess;
  if (std::holds_alternative<policy::Equalizing>(p)) return DynamicsPolicy::Equalizing;
  throw std::invalid_argument("dynamics are defined for bo_unknown_z, bo_known_z and equalizing");
}

struct DynamicsStep {
  std::size_t iteration;
  double reporting_fraction;  // among students with access
  double threshold;           // students report iff theta_K >= threshold
  double withhold_estimate;   // expected estimate of a non-reporter with access
};

struct DynamicsTrace {
  std::vector<DynamicsStep> steps;
  std::optional<DynamicsOutcome> converged_to;
  DynamicsStatus status = DynamicsStatus::NonConvergent;
  // Equalizing only: reported scores (predictive standard units) of the last round.
  std::vector<double> reporter_pool_z;

  const DynamicsStep& last() const { return steps.back(); }
};

struct DynamicsOptions {
  std::size_t max_iter = 200;
  double tol = kDefaultSolverTol;
  std::size_t pool_size = 10000;  // Equalizing only
  std::uint64_t seed = 0;         // Equalizing only
};

namespace detail {

inline DynamicsTrace continuum_dynamics(const ModelParams& params, const FeatureProfile& profile,
                                        bool access_known, double access_fraction,
                                        double threshold, const DynamicsOptions& opt) {
  const ProfileSummary s = summarize(params, profile);
  const Gaussian predictive{s.base_mean(), s.test_var + s.base_variance()};
  DynamicsTrace trace;
  for (std::size_t it = 0; it <= opt.max_iter; ++it) {
    const double lambda = survival(predictive, threshold);
    const double withhold =
        access_known ? known_access_pooled_estimate(params, profile, threshold)
                     : withhold_estimate_unknown_access(params, profile, access_fraction, threshold);
    trace.steps.push_back({it, lambda, threshold, withhold});
    if (access_known && lambda >= 1.0 - opt.tol) {
      trace.converged_to = DynamicsOutcome::FullReporting;
      trace.status = DynamicsStatus::Converged;
      return trace;
    }
    if (it == opt.max_iter) break;
    const double next = s.score_for_estimate(withhold);
    if (!access_known && std::isfinite(threshold) &&
        std::abs(next - threshold) <= opt.tol * predictive.sd()) {
      trace.steps.push_back({it + 1, survival(predictive, next), next,
                             withhold_estimate_unknown_access(params, profile, access_fraction, next)});
      trace.converged_to = DynamicsOutcome::Interior;
      trace.status = DynamicsStatus::Converged;
      return trace;
    }
    threshold = next;
  }
  return trace;
}

inline DynamicsTrace equalizing_dynamics(const ModelParams& params, const FeatureProfile& profile,
                                         double threshold, const DynamicsOptions& opt) {
  if (opt.pool_size == 0) throw std::invalid_argument("equalizing dynamics need a non-empty pool");
  const ProfileSummary s = summarize(params, profile);
  const double m = s.base_mean();
  const double sd = std::sqrt(s.test_var + s.base_variance());
  std::vector<double> z(opt.pool_size);
  for (std::size_t i = 0; i < z.size(); ++i) {
    RandomStream rng(opt.seed, 0, i, StreamPurpose::Pool);
    z[i] = rng.normal(0.0, 1.0);
  }
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  // Reporters form the suffix [first, n).
  const double z0 = (threshold - m) / sd;
  auto first = static_cast<std::size_t>(std::lower_bound(z.begin(), z.end(), z0) - z.begin());

  DynamicsTrace trace;
  for (std::size_t it = 0; it <= opt.max_iter; ++it) {
    const std::size_t count = z.size() - first;
    if (count == 0) {
      trace.steps.push_back({it, 0.0, threshold, m});
      trace.converged_to = DynamicsOutcome::NoReporting;
      trace.status = DynamicsStatus::Converged;
      return trace;
    }
    const double mean_z = std::accumulate(z.begin() + static_cast<std::ptrdiff_t>(first), z.end(), 0.0) /
                          static_cast<double>(count);
    trace.steps.push_back(
        {it, static_cast<double>(count) / n, threshold, s.report_estimate(m + sd * mean_z)});
    if (it == opt.max_iter) break;
    // Reporters at or below the pool mean do at least as well by withholding.
    const auto next = static_cast<std::size_t>(
        std::upper_bound(z.begin(), z.end(), mean_z) - z.begin());
    if (next == first) {
      trace.reporter_pool_z.assign(z.begin() + static_cast<std::ptrdiff_t>(first), z.end());
      trace.converged_to = DynamicsOutcome::Interior;
      trace.status = DynamicsStatus::Converged;
      return trace;
    }
    first = next;
    threshold = m + sd * mean_z;
  }
  trace.reporter_pool_z.assign(z.begin() + static_cast<std::ptrdiff_t>(first), z.end());
  return trace;
}

}  // namespace detail

// `init_threshold` may be -inf (everyone with access reports) or +inf (no one
// does). Reaching max_iter leaves status NonConvergent and converged_to empty.
inline DynamicsTrace best_response_dynamics(const ModelParams& params,
                                            const FeatureProfile& profile, DynamicsPolicy policy,
                                            double access_fraction, double init_threshold,
                                            const DynamicsOptions& opt = {}) {
  if (std::isnan(init_threshold)) throw std::invalid_argument("initial threshold is NaN");
  switch (policy) {
    case DynamicsPolicy::BoUnknownAccess:
      require_open_unit(access_fraction, "access_fraction");
      return detail::continuum_dynamics(params, profile, false, access_fraction, init_threshold, opt);
    case DynamicsPolicy::BoKnownAccess:
      return detail::continuum_dynamics(params, profile, true, access_fraction, init_threshold, opt);
    case DynamicsPolicy::Equalizing:
      return detail::equalizing_dynamics(params, profile, init_threshold, opt);
  }
  throw std::invalid_argument("unknown dynamics policy");
}

}  // namespace optest
