#pragma once

// Student decision thresholds under Bayesian estimation.
//
// Score threshold (report-optional, access unknown): students with access take
// the test and report iff theta_K >= threshold. At the equilibrium threshold
// the estimate of a reporter scoring exactly the threshold equals the pooled
// estimate of all non-reporters.
//
// Skill threshold (report-if-take, access unknown): students with access take
// the test iff q >= threshold, comparing the expected estimate from taking
// against the pooled estimate of non-takers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "optest/gauss.hpp"

namespace optest {

enum class RequirementPolicy { ReportOptional, ReportIfTake, ReportIfAccess };

inline std::string_view to_string(RequirementPolicy r) {
  switch (r) {
    case RequirementPolicy::ReportOptional: return "report_optional";
    case RequirementPolicy::ReportIfTake: return "report_if_take";
    case RequirementPolicy::ReportIfAccess: return "report_if_access";
  }
  return "?";
}

enum class EquilibriumKind { ScoreThreshold, SkillThreshold, FullReporting, NoReporting };

inline std::string_view to_string(EquilibriumKind k) {
  switch (k) {
    case EquilibriumKind::ScoreThreshold: return "score_threshold";
    case EquilibriumKind::SkillThreshold: return "skill_threshold";
    case EquilibriumKind::FullReporting: return "full_reporting";
    case EquilibriumKind::NoReporting: return "no_reporting";
  }
  return "?";
}

struct SolverDiagnostics {
  std::size_t grid_points = 0;
  double bracket_halfwidth_sd = 0.0;  // grid spans centre +/- this many sd
  std::size_t sign_changes = 0;
  std::size_t bisection_steps = 0;
};

struct EquilibriumSolution {
  EquilibriumKind kind = EquilibriumKind::FullReporting;
  std::vector<double> roots;      // ascending
  std::optional<double> canonical;  // smallest root
  std::vector<double> residuals;  // same order as roots
  double access_fraction = 0.0;
  FeatureProfile profile;
  SolverDiagnostics diagnostics;

  bool multiple_roots() const noexcept { return roots.size() > 1; }
  bool is_threshold() const noexcept {
    return kind == EquilibriumKind::ScoreThreshold || kind == EquilibriumKind::SkillThreshold;
  }
};

class SolverError : public std::runtime_error {
 public:
  enum class Code { NoRoot, NonConvergent };
  SolverError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

inline void require_open_unit(double c, const char* name) {
  if (!(c > 0.0 && c < 1.0))
    throw std::invalid_argument(std::string(name) + " must lie strictly inside (0, 1)");
}

// Pooled non-reporter estimate given the with-access pooled mean and the mass
// of with-access students who withhold. No-access students contribute the
// posterior mean without the test.
inline double mix_with_no_access(double no_access_mean, double with_access_mean,
                                 double access_fraction, double with_access_withhold_mass) {
  const double w_access = access_fraction * with_access_withhold_mass;
  const double w_none = 1.0 - access_fraction;
  if (w_access == 0.0) return no_access_mean;
  return (w_none * no_access_mean + w_access * with_access_mean) / (w_none + w_access);
}

// E[q | theta_1..theta_{K-1}, X = 0] when access is unobserved and students
// with access report iff theta_K >= threshold.
inline double withhold_estimate_unknown_access(const ModelParams& params,
                                               const FeatureProfile& profile,
                                               double access_fraction, double threshold) {
  require_open_unit(access_fraction, "access_fraction");
  if (std::isnan(threshold)) throw std::invalid_argument("threshold is NaN");
  const ProfileSummary s = summarize(params, profile);
  const Gaussian predictive{s.base_mean(), s.test_var + s.base_variance()};
  const double withhold_mass = 1.0 - survival(predictive, threshold);
  if (withhold_mass == 0.0) return s.base_mean();
  // Posterior mean is linear in theta_K, so the pooled mean over theta_K < t is
  // the report estimate evaluated at the truncated predictive mean.
  const double pooled_with_access = s.report_estimate(truncated_mean_below(predictive, threshold));
  return mix_with_no_access(s.base_mean(), pooled_with_access, access_fraction, withhold_mass);
}

// E[q | theta_1..theta_{K-1}, Y = X = 0] when access is unobserved and
// students with access take the test iff q >= threshold.
inline double nontaker_estimate_unknown_access(const ModelParams& params,
                                               const FeatureProfile& profile,
                                               double access_fraction, double threshold) {
  require_open_unit(access_fraction, "access_fraction");
  if (std::isnan(threshold)) throw std::invalid_argument("threshold is NaN");
  const ProfileSummary s = summarize(params, profile);
  const Gaussian skill{s.base_mean(), s.base_variance()};
  const double nontake_mass = cdf(skill, threshold);
  if (nontake_mass == 0.0) return s.base_mean();
  return mix_with_no_access(s.base_mean(), truncated_mean_below(skill, threshold),
                            access_fraction, nontake_mass);
}

// Expected estimate of a taker with skill q; the score is still unknown when
// deciding, and E[theta_K | q] = q.
inline double expected_taker_estimate(const ProfileSummary& s, double q) {
  return s.report_estimate(q);
}

inline double report_residual(const ModelParams& params, const FeatureProfile& profile,
                              double access_fraction, double threshold) {
  const ProfileSummary s = summarize(params, profile);
  return s.report_estimate(threshold) -
         withhold_estimate_unknown_access(params, profile, access_fraction, threshold);
}

inline double taking_residual(const ModelParams& params, const FeatureProfile& profile,
                              double access_fraction, double threshold) {
  const ProfileSummary s = summarize(params, profile);
  return expected_taker_estimate(s, threshold) -
         nontaker_estimate_unknown_access(params, profile, access_fraction, threshold);
}

inline constexpr std::size_t kRootGridPoints = 4001;
inline constexpr double kRootGridHalfwidthSd = 8.0;
inline constexpr double kDefaultSolverTol = 1e-9;

namespace detail {

template <class Residual>
double bisect(Residual&& f, double lo, double hi, double flo, std::size_t& steps) {
  for (int i = 0; i < 400; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    ++steps;
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  const double fl = f(lo), fh = f(hi);
  return std::abs(fl) <= std::abs(fh) ? lo : hi;
}

// Scans centre +/- w*scale on a uniform grid, widening w until at least one
// sign change is found, then bisects every bracket.
template <class Residual>
EquilibriumSolution solve_on_grid(Residual&& f, double centre, double scale, double tol,
                                  EquilibriumKind kind, const char* what) {
  if (!(tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
  EquilibriumSolution sol;
  sol.kind = kind;
  for (double w = kRootGridHalfwidthSd; w <= 64.0; w *= 2.0) {
    const std::size_t n = kRootGridPoints;
    const double lo = centre - w * scale;
    const double step = 2.0 * w * scale / static_cast<double>(n - 1);
    double x_prev = lo;
    double f_prev = f(x_prev);
    sol.diagnostics = {n, w, 0, 0};
    for (std::size_t i = 1; i < n; ++i) {
      const double x = lo + step * static_cast<double>(i);
      const double fx = f(x);
      if (f_prev == 0.0) {
        sol.roots.push_back(x_prev);
      } else if ((f_prev < 0.0) != (fx < 0.0) && fx != 0.0) {
        sol.roots.push_back(bisect(f, x_prev, x, f_prev, sol.diagnostics.bisection_steps));
      }
      x_prev = x;
      f_prev = fx;
    }
    if (f_prev == 0.0) sol.roots.push_back(x_prev);
    sol.diagnostics.sign_changes = sol.roots.size();
    if (!sol.roots.empty()) break;
  }
  if (sol.roots.empty())
    throw SolverError(SolverError::Code::NoRoot,
                      std::string("no sign change of the ") + what +
                          " residual on the expanded bracket");
  std::sort(sol.roots.begin(), sol.roots.end());
  for (double r : sol.roots) {
    const double res = f(r);
    if (!(std::abs(res) <= tol))
      throw SolverError(SolverError::Code::NoRoot,
                        std::string(what) + " root residual " + std::to_string(res) +
                            " exceeds tolerance");
    sol.residuals.push_back(res);
  }
  sol.canonical = sol.roots.front();
  return sol;
}

}  // namespace detail

inline EquilibriumSolution solve_report_threshold(const ModelParams& params,
                                                  const FeatureProfile& profile,
                                                  double access_fraction,
                                                  double tol = kDefaultSolverTol) {
  require_open_unit(access_fraction, "access_fraction");
  const ProfileSummary s = summarize(params, profile);
  const Gaussian predictive{s.base_mean(), s.test_var + s.base_variance()};
  auto f = [&](double t) { return report_residual(params, profile, access_fraction, t); };
  EquilibriumSolution sol = detail::solve_on_grid(f, predictive.mean(), predictive.sd(), tol,
                                                  EquilibriumKind::ScoreThreshold, "report");
  sol.access_fraction = access_fraction;
  sol.profile = profile;
  return sol;
}

inline EquilibriumSolution solve_taking_threshold(const ModelParams& params,
                                                  const FeatureProfile& profile,
                                                  double access_fraction,
                                                  double tol = kDefaultSolverTol) {
  require_open_unit(access_fraction, "access_fraction");
  const ProfileSummary s = summarize(params, profile);
  auto f = [&](double t) { return taking_residual(params, profile, access_fraction, t); };
  EquilibriumSolution sol =
      detail::solve_on_grid(f, s.base_mean(), std::sqrt(s.base_variance()), tol,
                            EquilibriumKind::SkillThreshold, "taking");
  sol.access_fraction = access_fraction;
  sol.profile = profile;
  return sol;
}

// Solves the threshold regime that the requirement policy induces when the
// school does not observe access.
inline EquilibriumSolution solve_unknown_access(const ModelParams& params,
                                                const FeatureProfile& profile,
                                                double access_fraction,
                                                RequirementPolicy requirement,
                                                double tol = kDefaultSolverTol) {
  switch (requirement) {
    case RequirementPolicy::ReportOptional:
      return solve_report_threshold(params, profile, access_fraction, tol);
    case RequirementPolicy::ReportIfTake:
      return solve_taking_threshold(params, profile, access_fraction, tol);
    case RequirementPolicy::ReportIfAccess:
      break;
  }
  throw std::invalid_argument("report_if_access requires the school to observe access");
}

inline EquilibriumSolution known_access_equilibrium(const ModelParams& params,
                                                    const FeatureProfile& profile,
                                                    RequirementPolicy /*requirement*/,
                                                    double access_fraction = 0.5) {
  validate_profile(params, profile);
  EquilibriumSolution sol;
  sol.kind = EquilibriumKind::FullReporting;
  sol.access_fraction = access_fraction;
  sol.profile = profile;
  return sol;
}

// The fixed-point equations depend on the profile only through the posterior
// mean without the test; the variances are profile independent. A threshold
// solved for one profile therefore carries to another by a shift.
inline EquilibriumSolution rebase(const EquilibriumSolution& sol, const ModelParams& params,
                                  const FeatureProfile& profile) {
  EquilibriumSolution out = sol;
  out.profile = profile;
  if (!sol.is_threshold()) {
    validate_profile(params, profile);
    return out;
  }
  const double shift = summarize(params, profile).base_mean() -
                       summarize(params, sol.profile).base_mean();
  for (double& r : out.roots) r += shift;
  if (out.canonical) *out.canonical += shift;
  for (std::size_t i = 0; i < out.roots.size(); ++i) {
    out.residuals[i] = sol.kind == EquilibriumKind::ScoreThreshold
                           ? report_residual(params, profile, sol.access_fraction, out.roots[i])
                           : taking_residual(params, profile, sol.access_fraction, out.roots[i]);
  }
  return out;
}

// Threshold expressed in standard deviations of the relevant distribution
// (predictive score for score thresholds, skill posterior for skill ones).
inline double standardized_threshold(const ModelParams& params, const FeatureProfile& profile,
                                     EquilibriumKind kind, double threshold) {
  const ProfileSummary s = summarize(params, profile);
  const double scale = kind == EquilibriumKind::SkillThreshold
                           ? std::sqrt(s.base_variance())
                           : std::sqrt(s.test_var + s.base_variance());
  return (threshold - s.base_mean()) / scale;
}

struct PreferenceViolation {
  double type;        // theta_K for score thresholds, q for skill thresholds
  double follow;      // expected estimate from the prescribed action
  double deviate;     // expected estimate from the alternative
};

// Checks that, at the canonical threshold, types at or above it weakly prefer
// reporting (taking) and types below weakly prefer withholding, on a uniform
// grid of centre +/- 5 sd. Returns the first violation found.
inline std::optional<PreferenceViolation> check_two_sided_preference(
    const ModelParams& params, const EquilibriumSolution& sol, std::size_t grid_points = 201,
    double tol = kDefaultSolverTol) {
  if (!sol.is_threshold() || !sol.canonical)
    throw std::invalid_argument("preference check needs a threshold equilibrium");
  const ProfileSummary s = summarize(params, sol.profile);
  const double t = *sol.canonical;
  const bool score = sol.kind == EquilibriumKind::ScoreThreshold;
  const double withhold =
      score ? withhold_estimate_unknown_access(params, sol.profile, sol.access_fraction, t)
            : nontaker_estimate_unknown_access(params, sol.profile, sol.access_fraction, t);
  const double scale = score ? std::sqrt(s.test_var + s.base_variance())
                             : std::sqrt(s.base_variance());
  const double lo = s.base_mean() - 5.0 * scale;
  const double step = 10.0 * scale / static_cast<double>(grid_points - 1);
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double type = lo + step * static_cast<double>(i);
    const double report = s.report_estimate(type);
    if (type >= t) {
      if (report < withhold - tol) return PreferenceViolation{type, report, withhold};
    } else {
      if (withhold < report - tol) return PreferenceViolation{type, withhold, report};
    }
  }
  return std::nullopt;
}

// Pooled estimate of with-access withholders when access is observed and
// students report iff theta_K >= threshold.
inline double known_access_pooled_estimate(const ModelParams& params,
                                           const FeatureProfile& profile, double threshold) {
  const ProfileSummary s = summarize(params, profile);
  const Gaussian predictive{s.base_mean(), s.test_var + s.base_variance()};
  return s.report_estimate(truncated_mean_below(predictive, threshold));
}

struct InstabilityWitness {
  double indifference_score;  // report estimate equals the pooled estimate here
  double score;               // a withholder who gains by reporting
  double report_estimate;
  double pooled_estimate;
};

// With access observed and Bayesian estimation, any finite withholding
// threshold t leaves students in [indifference_score, t) who would rather
// report. Returns such a student, or nothing when t = -inf (full reporting).
inline std::optional<InstabilityWitness> check_threshold_instability(
    const ModelParams& params, const FeatureProfile& profile, double threshold) {
  if (std::isnan(threshold)) throw std::invalid_argument("threshold is NaN");
  if (threshold == -kInf) return std::nullopt;
  const ProfileSummary s = summarize(params, profile);
  const Gaussian predictive{s.base_mean(), s.test_var + s.base_variance()};
  const double indifference = truncated_mean_below(predictive, threshold);
  const double pooled = s.report_estimate(indifference);
  double score = threshold == kInf ? indifference : 0.5 * (indifference + threshold);
  if (!(score < threshold) || s.report_estimate(score) < pooled) score = indifference;
  if (!(score < threshold)) return std::nullopt;
  return InstabilityWitness{indifference, score, s.report_estimate(score), pooled};
}

}  // namespace optest
