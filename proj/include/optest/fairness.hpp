#pragma once

// Fairness audits comparing skill-estimate distributions of students with and
// without test access (or, in the X variant, reporters and non-reporters).
//
// Analytic audits compare closed-form estimate laws parameter by parameter.
// Empirical audits run two-sample Kolmogorov-Smirnov tests per stratum with a
// Bonferroni-corrected asymptotic critical value.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "optest/equilibrium.hpp"
#include "optest/gauss.hpp"
#include "optest/policies.hpp"
#include "optest/random.hpp"
#include "optest/simulate.hpp"

namespace optest {

enum class FairnessNotion { LatentSkill, Observable, Demographic, TestBlank };
enum class AuditMethod { Analytic, Empirical };
enum class Verdict { Fair, Unfair, Inconclusive };
enum class GroupBy { Access, Reporting };

inline std::string_view to_string(FairnessNotion n) {
  switch (n) {
    case FairnessNotion::LatentSkill: return "latent";
    case FairnessNotion::Observable: return "observable";
    case FairnessNotion::Demographic: return "demographic";
    case FairnessNotion::TestBlank: return "test_blank";
  }
  return "?";
}
inline std::string_view to_string(AuditMethod m) {
  return m == AuditMethod::Analytic ? "analytic" : "empirical";
}
inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Fair: return "fair";
    case Verdict::Unfair: return "unfair";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}
inline std::string_view to_string(GroupBy g) { return g == GroupBy::Access ? "Z" : "X"; }

struct FairnessReport {
  FairnessNotion notion;
  AuditMethod method;
  GroupBy group_by = GroupBy::Access;
  double statistic = 0.0;       // worst stratum: KS distance or parameter gap
  double critical_value = 0.0;  // threshold applied to that stratum
  Verdict verdict = Verdict::Inconclusive;
  std::size_t strata = 0;
  std::string conditioning;
};

struct AuditOptions {
  double alpha = 0.01;
  GroupBy group_by = GroupBy::Access;
  std::optional<AuditMethod> method;  // unset: analytic when closed forms exist
  std::size_t min_per_side = 500;
  std::size_t latent_bins = 20;
  double analytic_tol = 1e-12;
  std::size_t test_blank_grid = 41;
  std::size_t test_blank_draws = 2000;
  std::uint64_t seed = 0;
};

class AuditError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Two-sample Kolmogorov-Smirnov.

inline double ks_statistic_sorted(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("KS statistic needs non-empty samples");
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return ks_statistic_sorted(sa, sb);
}

// c(alpha) * sqrt((n + m) / (n m)), c(alpha) = sqrt(-ln(alpha / 2) / 2).
inline double ks_critical_value(double alpha, std::size_t n, std::size_t m) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return c * std::sqrt((dn + dm) / (dn * dm));
}

// ---------------------------------------------------------------------------
// Closed-form estimate laws. Variance zero is a point mass.

struct EstimateLaw {
  double mean;
  double variance;
};

inline EstimateLaw point(double x) { return {x, 0.0}; }
inline EstimateLaw law(const Gaussian& g) { return {g.mean(), g.variance()}; }

// Estimate law of a student with the given profile and access status (and
// skill q, for latent audits) in the equilibrium `eq`. Empty when the law is
// not Gaussian or a point.
inline std::optional<EstimateLaw> estimate_law(const PolicySpec& spec, const ModelParams& params,
                                               const FeatureProfile& profile,
                                               const EquilibriumSolution& eq, bool access,
                                               std::optional<double> q = std::nullopt) {
  const ProfileSummary s = summarize(params, profile);
  const double m = s.base_mean();
  const bool blank = std::holds_alternative<policy::TestBlank>(spec);
  if (access) {
    switch (eq.kind) {
      case EquilibriumKind::FullReporting:
        if (blank) return point(m);
        return q ? law(latent_estimate_distribution(params, profile, *q))
                 : law(with_access_estimate_distribution(params, profile));
      case EquilibriumKind::NoReporting: {
        RandomStream unused(0);
        if (is_randomized(spec) && !std::holds_alternative<policy::Resampling>(spec))
          return std::nullopt;
        if (std::holds_alternative<policy::BoUnknownAccess>(spec)) return std::nullopt;
        return point(estimate(spec, params, InfoSet::withholding(profile, true), unused));
      }
      default:
        return std::nullopt;
    }
  }
  struct {
    const ModelParams& params;
    const FeatureProfile& profile;
    double m;
    std::optional<EstimateLaw> operator()(const policy::BoKnownAccess&) const { return point(m); }
    std::optional<EstimateLaw> operator()(const policy::Resampling&) const {
      return law(resampling_estimate_distribution(params, profile));
    }
    std::optional<EstimateLaw> operator()(const policy::TestBlank&) const { return point(m); }
    std::optional<EstimateLaw> operator()(const policy::BoUnknownAccess& p) const {
      RandomStream unused(0);
      return point(estimate(p, params, InfoSet::withholding(profile), unused));
    }
    std::optional<EstimateLaw> operator()(const policy::Equalizing& p) const {
      if (!p.reference_z.empty()) return std::nullopt;
      return point(m);
    }
  } v{params, profile, m};
  return std::visit(v, spec);
}

// Population marginal of an observable-level law. The law's mean is the
// posterior mean without the test plus a profile independent offset, and that
// posterior mean is N(mu, sigma2 - posterior variance) across the population.
inline EstimateLaw marginalize(const ModelParams& params, const EstimateLaw& at_reference) {
  const FeatureProfile ref = reference_profile(params);
  const ProfileSummary s = summarize(params, ref);
  return {params.mu() + (at_reference.mean - s.base_mean()),
          params.sigma2() - s.base_variance() + at_reference.variance};
}

inline double law_gap(const EstimateLaw& a, const EstimateLaw& b) {
  return std::max(std::abs(a.mean - b.mean), std::abs(a.variance - b.variance));
}

namespace detail {

struct StratumOutcome {
  double statistic;
  double critical;
  bool powered;
};

inline FairnessReport combine(FairnessNotion notion, AuditMethod method, GroupBy group,
                              const std::vector<StratumOutcome>& strata, std::string conditioning) {
  FairnessReport rep{notion, method, group, 0.0, 0.0, Verdict::Fair, strata.size(),
                     std::move(conditioning)};
  bool unfair = false, underpowered = false;
  double worst = -1.0;
  for (const auto& st : strata) {
    const bool exceeds = st.statistic > st.critical;
    if (!st.powered) underpowered = true;
    if (exceeds && st.powered) unfair = true;
    // Report the stratum with the largest statistic relative to its threshold.
    const double ratio = st.critical > 0.0 ? st.statistic / st.critical
                                           : (st.statistic > 0.0 ? kInf : 0.0);
    if (ratio > worst) {
      worst = ratio;
      rep.statistic = st.statistic;
      rep.critical_value = st.critical;
    }
  }
  rep.verdict = unfair ? Verdict::Unfair : underpowered ? Verdict::Inconclusive : Verdict::Fair;
  return rep;
}

inline StratumOutcome ks_stratum(std::vector<double>& a, std::vector<double>& b, double alpha,
                                 std::size_t strata, std::size_t min_per_side) {
  if (a.empty() || b.empty()) return {0.0, 0.0, false};
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {ks_statistic_sorted(a, b),
          ks_critical_value(alpha / static_cast<double>(strata), a.size(), b.size()),
          a.size() >= min_per_side && b.size() >= min_per_side};
}

inline bool in_group(const StudentRecord& r, GroupBy g) { return g == GroupBy::Access ? r.Z : r.X; }

inline const FixedProfiles& fixed_design(const SimulationResult& result, const char* audit) {
  const auto* fixed = std::get_if<FixedProfiles>(&result.config.cohorts);
  if (!fixed)
    throw AuditError(std::string(audit) + " audit needs fixed-profile cohorts");
  return *fixed;
}

inline const EquilibriumSolution& cohort_equilibrium(const SimulationResult& r, std::size_t c) {
  return r.equilibria.size() == 1 ? r.equilibria.front() : r.equilibria.at(c);
}

inline PolicySpec cohort_policy(const SimulationResult& r, std::size_t c) {
  return make_policy(r.config, {cohort_equilibrium(r, c)}, r.dynamics);
}

// Analytic X-grouped audits need X to coincide with Z.
inline bool analytic_grouping_ok(GroupBy g, const std::vector<EquilibriumSolution>& eqs) {
  if (g == GroupBy::Access) return true;
  return std::all_of(eqs.begin(), eqs.end(), [](const EquilibriumSolution& e) {
    return e.kind == EquilibriumKind::FullReporting;
  });
}

inline std::vector<double> latent_grid(const Gaussian& skill, std::size_t bins) {
  boost::math::normal_distribution<double> dist(skill.mean(), skill.sd());
  std::vector<double> q;
  for (std::size_t b = 0; b < bins; ++b)
    q.push_back(boost::math::quantile(dist, (static_cast<double>(b) + 0.5) / static_cast<double>(bins)));
  return q;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Analytic audits. Empty when some stratum has no closed form.

inline std::optional<FairnessReport> audit_observable_analytic(
    const PolicySpec& spec, const ModelParams& params, std::span<const FeatureProfile> profiles,
    const std::vector<EquilibriumSolution>& equilibria, const AuditOptions& opt = {}) {
  if (!detail::analytic_grouping_ok(opt.group_by, equilibria)) return std::nullopt;
  std::vector<detail::StratumOutcome> strata;
  for (std::size_t c = 0; c < profiles.size(); ++c) {
    const auto& eq = rebase(equilibria.size() == 1 ? equilibria.front() : equilibria.at(c), params,
                            profiles[c]);
    const auto with = estimate_law(spec, params, profiles[c], eq, true);
    const auto without = estimate_law(spec, params, profiles[c], eq, false);
    if (!with || !without) return std::nullopt;
    strata.push_back({law_gap(*with, *without), opt.analytic_tol, true});
  }
  return detail::combine(FairnessNotion::Observable, AuditMethod::Analytic, opt.group_by, strata,
                         std::to_string(profiles.size()) + " profiles");
}

inline std::optional<FairnessReport> audit_latent_analytic(
    const PolicySpec& spec, const ModelParams& params, std::span<const FeatureProfile> profiles,
    const std::vector<EquilibriumSolution>& equilibria, const AuditOptions& opt = {}) {
  if (!detail::analytic_grouping_ok(opt.group_by, equilibria)) return std::nullopt;
  std::vector<detail::StratumOutcome> strata;
  for (std::size_t c = 0; c < profiles.size(); ++c) {
    const auto& eq = rebase(equilibria.size() == 1 ? equilibria.front() : equilibria.at(c), params,
                            profiles[c]);
    for (double q : detail::latent_grid(posterior_without_test(params, profiles[c]), opt.latent_bins)) {
      const auto with = estimate_law(spec, params, profiles[c], eq, true, q);
      const auto without = estimate_law(spec, params, profiles[c], eq, false, q);
      if (!with || !without) return std::nullopt;
      strata.push_back({law_gap(*with, *without), opt.analytic_tol, true});
    }
  }
  return detail::combine(FairnessNotion::LatentSkill, AuditMethod::Analytic, opt.group_by, strata,
                         std::to_string(profiles.size()) + " profiles x " +
                             std::to_string(opt.latent_bins) + " skill quantiles");
}

inline std::optional<FairnessReport> audit_demographic_analytic(
    const PolicySpec& spec, const ModelParams& params, const EquilibriumSolution& eq,
    const AuditOptions& opt = {}) {
  if (!detail::analytic_grouping_ok(opt.group_by, {eq})) return std::nullopt;
  const FeatureProfile ref = reference_profile(params);
  const EquilibriumSolution local = rebase(eq, params, ref);
  const auto with = estimate_law(spec, params, ref, local, true);
  const auto without = estimate_law(spec, params, ref, local, false);
  if (!with || !without) return std::nullopt;
  const double gap = law_gap(marginalize(params, *with), marginalize(params, *without));
  return detail::combine(FairnessNotion::Demographic, AuditMethod::Analytic, opt.group_by,
                         {{gap, opt.analytic_tol, true}}, "population marginal");
}

// ---------------------------------------------------------------------------
// Audits of simulation output.

inline std::vector<FeatureProfile> cohort_profiles(const SimulationResult& result) {
  std::vector<FeatureProfile> out;
  for (const auto& p : detail::fixed_design(result, "profile").profiles) out.push_back({p, std::nullopt});
  return out;
}

inline FairnessReport audit_observable(const SimulationResult& result, const AuditOptions& opt = {}) {
  const auto& fixed = detail::fixed_design(result, "observable");
  const std::size_t cohorts = fixed.profiles.size();
  if (opt.method != AuditMethod::Empirical) {
    const auto profiles = cohort_profiles(result);
    if (auto rep = audit_observable_analytic(result.policy, result.config.params, profiles,
                                             result.equilibria, opt)) {
      // Per-cohort policies differ only for unknown-access thresholds, which
      // have no closed form, so the shared policy object suffices here.
      return *rep;
    }
    if (opt.method == AuditMethod::Analytic)
      throw AuditError("observable audit has no closed form for this policy and equilibrium");
  }
  std::vector<std::vector<double>> in(cohorts), out(cohorts);
  for (const auto& r : result.records)
    (detail::in_group(r, opt.group_by) ? in : out)[r.cohort].push_back(r.estimate);
  std::vector<detail::StratumOutcome> strata;
  for (std::size_t c = 0; c < cohorts; ++c) {
    if (in[c].empty() || out[c].empty())
      throw AuditError("cohort " + std::to_string(c) + " is missing a " +
                       std::string(to_string(opt.group_by)) + " group");
    strata.push_back(detail::ks_stratum(in[c], out[c], opt.alpha, cohorts, opt.min_per_side));
  }
  return detail::combine(FairnessNotion::Observable, AuditMethod::Empirical, opt.group_by, strata,
                         std::to_string(cohorts) + " profiles");
}

inline FairnessReport audit_latent(const SimulationResult& result, const AuditOptions& opt = {}) {
  const auto& fixed = detail::fixed_design(result, "latent");
  const std::size_t cohorts = fixed.profiles.size();
  if (opt.method != AuditMethod::Empirical) {
    const auto profiles = cohort_profiles(result);
    if (auto rep = audit_latent_analytic(result.policy, result.config.params, profiles,
                                         result.equilibria, opt))
      return *rep;
    if (opt.method == AuditMethod::Analytic)
      throw AuditError("latent audit has no closed form for this policy and equilibrium");
  }
  const std::size_t bins = opt.latent_bins;
  // Equal-probability bins of the skill distribution within each profile.
  std::vector<std::vector<double>> edges(cohorts);
  for (std::size_t c = 0; c < cohorts; ++c) {
    const Gaussian skill = posterior_without_test(result.config.params, {fixed.profiles[c], std::nullopt});
    boost::math::normal_distribution<double> dist(skill.mean(), skill.sd());
    for (std::size_t b = 1; b < bins; ++b)
      edges[c].push_back(boost::math::quantile(dist, static_cast<double>(b) / static_cast<double>(bins)));
  }
  std::vector<std::vector<double>> in(cohorts * bins), out(cohorts * bins);
  for (const auto& r : result.records) {
    const auto& e = edges[r.cohort];
    const auto b = static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), r.q) - e.begin());
    (detail::in_group(r, opt.group_by) ? in : out)[r.cohort * bins + b].push_back(r.estimate);
  }
  std::vector<detail::StratumOutcome> strata;
  for (std::size_t s = 0; s < in.size(); ++s)
    strata.push_back(detail::ks_stratum(in[s], out[s], opt.alpha, in.size(), opt.min_per_side));
  return detail::combine(FairnessNotion::LatentSkill, AuditMethod::Empirical, opt.group_by, strata,
                         std::to_string(cohorts) + " profiles x " + std::to_string(bins) +
                             " skill bins");
}

inline FairnessReport audit_demographic(const SimulationResult& result, const AuditOptions& opt = {}) {
  if (!sampled_design(result.config))
    throw AuditError("demographic audit needs sampled-profile cohorts to marginalize over features");
  if (opt.method != AuditMethod::Empirical) {
    if (auto rep = audit_demographic_analytic(result.policy, result.config.params,
                                              result.equilibria.front(), opt))
      return *rep;
    if (opt.method == AuditMethod::Analytic)
      throw AuditError("demographic audit has no closed form for this policy and equilibrium");
  }
  std::vector<double> in, out;
  for (const auto& r : result.records)
    (detail::in_group(r, opt.group_by) ? in : out).push_back(r.estimate);
  if (in.empty() || out.empty())
    throw AuditError(std::string("population is missing a ") + std::string(to_string(opt.group_by)) +
                     " group");
  const auto st = detail::ks_stratum(in, out, opt.alpha, 1, opt.min_per_side);
  return detail::combine(FairnessNotion::Demographic, AuditMethod::Empirical, opt.group_by, {st},
                         "population marginal");
}

// Checks that on-path estimates within each profile do not depend on the test
// score (and hence on the reporting decision it triggers). Deterministic
// policies are compared exactly across a score grid; randomized ones, and
// skill-threshold equilibria where X given theta_K is random, by KS tests.
inline FairnessReport audit_test_blank(const PolicySpec& spec, const ModelParams& params,
                                       std::span<const FeatureProfile> profiles,
                                       const std::vector<EquilibriumSolution>& equilibria,
                                       const AuditOptions& opt = {}) {
  if (profiles.empty()) throw std::invalid_argument("test-blank audit needs at least one profile");
  if (equilibria.empty()) throw std::invalid_argument("test-blank audit needs an equilibrium");
  const bool access = observes_access(spec);
  const std::size_t grid = std::max<std::size_t>(opt.test_blank_grid, 2);
  bool exact = !is_randomized(spec);
  for (const auto& e : equilibria) exact = exact && e.kind != EquilibriumKind::SkillThreshold;

  std::vector<detail::StratumOutcome> strata;
  for (std::size_t c = 0; c < profiles.size(); ++c) {
    const EquilibriumSolution eq =
        rebase(equilibria.size() == 1 ? equilibria.front() : equilibria.at(c), params, profiles[c]);
    const ProfileSummary s = summarize(params, profiles[c]);
    const double m = s.base_mean(), sd = std::sqrt(s.test_var + s.base_variance());
    auto reports_at = [&](double score, double q) {
      switch (eq.kind) {
        case EquilibriumKind::FullReporting: return true;
        case EquilibriumKind::NoReporting: return false;
        case EquilibriumKind::ScoreThreshold: return score >= *eq.canonical;
        case EquilibriumKind::SkillThreshold: return q >= *eq.canonical;
      }
      return false;
    };
    auto info_at = [&](double score, double q) {
      const std::optional<bool> z = access ? std::optional<bool>(true) : std::nullopt;
      return reports_at(score, q) ? InfoSet::reporting(profiles[c], score, z)
                                  : InfoSet::withholding(profiles[c], z);
    };
    std::vector<std::vector<double>> samples(grid);
    for (std::size_t g = 0; g < grid; ++g) {
      const double score = m - 4.0 * sd + 8.0 * sd * static_cast<double>(g) / static_cast<double>(grid - 1);
      if (exact) {
        RandomStream rng(opt.seed, c, g, StreamPurpose::Policy);
        samples[g].push_back(estimate(spec, params, info_at(score, score), rng));
        continue;
      }
      const Gaussian skill = posterior_with_test(params, profiles[c], score);
      for (std::size_t d = 0; d < opt.test_blank_draws; ++d) {
        RandomStream rng(opt.seed, c, g * opt.test_blank_draws + d, StreamPurpose::Policy);
        const double q = rng.normal(skill.mean(), skill.sd());
        samples[g].push_back(estimate(spec, params, info_at(score, q), rng));
      }
    }
    for (std::size_t g = 1; g < grid; ++g) {
      if (exact) {
        strata.push_back({std::abs(samples[g][0] - samples[0][0]), opt.analytic_tol, true});
      } else {
        strata.push_back(detail::ks_stratum(samples[g], samples[0], opt.alpha,
                                            profiles.size() * (grid - 1), opt.min_per_side));
      }
    }
  }
  std::ostringstream cond;
  cond << profiles.size() << " profiles x " << grid << " test scores";
  return detail::combine(FairnessNotion::TestBlank, exact ? AuditMethod::Analytic : AuditMethod::Empirical,
                         GroupBy::Reporting, strata, cond.str());
}

inline FairnessReport audit_test_blank(const SimulationResult& result, const AuditOptions& opt = {}) {
  std::vector<FeatureProfile> profiles;
  if (sampled_design(result.config)) profiles.push_back(reference_profile(result.config.params));
  else profiles = cohort_profiles(result);
  return audit_test_blank(result.policy, result.config.params, profiles, result.equilibria, opt);
}

}  // namespace optest
