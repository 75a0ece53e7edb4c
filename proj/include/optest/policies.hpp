#pragma once

// Estimation policies: maps from what the school sees about a student to a
// skill estimate, plus the closed-form estimate distributions they induce.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "optest/equilibrium.hpp"
#include "optest/gauss.hpp"
#include "optest/random.hpp"

namespace optest {

// What the school observes. Counterfactual scores of withholders never enter.
class InfoSet {
 public:
  static InfoSet reporting(FeatureProfile profile, double score,
                           std::optional<bool> access = std::nullopt) {
    if (!std::isfinite(score)) throw std::invalid_argument("reported score must be finite");
    if (access && !*access) throw std::invalid_argument("a student without access cannot report");
    profile.test_score.reset();
    return InfoSet(std::move(profile), true, access, score);
  }
  static InfoSet withholding(FeatureProfile profile, std::optional<bool> access = std::nullopt) {
    profile.test_score.reset();
    return InfoSet(std::move(profile), false, access, std::nullopt);
  }

  const FeatureProfile& profile() const noexcept { return profile_; }
  bool reported() const noexcept { return reported_; }
  std::optional<bool> access() const noexcept { return access_; }
  std::optional<double> score() const noexcept { return score_; }

 private:
  InfoSet(FeatureProfile profile, bool reported, std::optional<bool> access,
          std::optional<double> score)
      : profile_(std::move(profile)), reported_(reported), access_(access), score_(score) {}

  FeatureProfile profile_;
  bool reported_;
  std::optional<bool> access_;
  std::optional<double> score_;
};

namespace policy {

// Bayesian optimal with access observed. A with-access student who withholds
// is off the equilibrium path; the school then pools them as if every student
// below `off_path_z` predictive standard deviations withheld.
struct BoKnownAccess {
  double off_path_z = -kRootGridHalfwidthSd;
};

// Bayesian optimal with access unobserved; pools non-reporters at the carried
// equilibrium threshold.
struct BoUnknownAccess {
  EquilibriumSolution equilibrium;
};

// Bayesian optimal for students with access; students without access get a
// score drawn from the predictive distribution and are estimated as if it
// were real.
struct Resampling {};

// Ignores the test score and the reporting decision.
struct TestBlank {};

// Access unobserved. Non-reporters receive the estimate of a score drawn from
// the reported-score pool, stored in predictive standard units so it applies
// to any profile. An empty pool gives the posterior mean without the test.
struct Equalizing {
  std::vector<double> reference_z;
};

}  // namespace policy

using PolicySpec = std::variant<policy::BoKnownAccess, policy::BoUnknownAccess,
                                policy::Resampling, policy::TestBlank, policy::Equalizing>;

inline std::string_view policy_tag(const PolicySpec& p) {
  struct {
    std::string_view operator()(const policy::BoKnownAccess&) const { return "bo_known_z"; }
    std::string_view operator()(const policy::BoUnknownAccess&) const { return "bo_unknown_z"; }
    std::string_view operator()(const policy::Resampling&) const { return "resampling"; }
    std::string_view operator()(const policy::TestBlank&) const { return "test_blank"; }
    std::string_view operator()(const policy::Equalizing&) const { return "equalizing"; }
  } v;
  return std::visit(v, p);
}

inline bool observes_access(const PolicySpec& p) {
  return std::holds_alternative<policy::BoKnownAccess>(p) ||
         std::holds_alternative<policy::Resampling>(p);
}

inline bool is_randomized(const PolicySpec& p) {
  if (std::holds_alternative<policy::Resampling>(p)) return true;
  if (const auto* e = std::get_if<policy::Equalizing>(&p)) return !e->reference_z.empty();
  return false;
}

// Bayesian estimate of a student who reports `score`.
inline double report_estimate(const ModelParams& params, const FeatureProfile& profile,
                              double score) {
  return summarize(params, profile).report_estimate(score);
}

inline double estimate(const PolicySpec& spec, const ModelParams& params, const InfoSet& info,
                       RandomStream& rng) {
  const FeatureProfile& profile = info.profile();
  const ProfileSummary s = summarize(params, profile);
  const auto need_access = [&]() {
    if (!info.access())
      throw std::invalid_argument(std::string(policy_tag(spec)) +
                                  " needs the access indicator in the information set");
    return *info.access();
  };

  struct Visitor {
    const ModelParams& params;
    const InfoSet& info;
    const ProfileSummary& s;
    RandomStream& rng;
    decltype(need_access)& access;

    double bayes_known(const policy::BoKnownAccess& p) const {
      if (!access()) {
        if (info.reported()) throw std::invalid_argument("no-access student reported a score");
        return s.base_mean();
      }
      if (info.reported()) return s.report_estimate(*info.score());
      const double sd = std::sqrt(s.test_var + s.base_variance());
      return known_access_pooled_estimate(params, info.profile(), s.base_mean() + p.off_path_z * sd);
    }

    double operator()(const policy::BoKnownAccess& p) const { return bayes_known(p); }

    double operator()(const policy::BoUnknownAccess& p) const {
      if (info.reported()) return s.report_estimate(*info.score());
      const EquilibriumSolution& eq = p.equilibrium;
      if (!eq.is_threshold() || !eq.canonical)
        throw std::invalid_argument("bo_unknown_z needs a solved threshold equilibrium");
      const EquilibriumSolution local = rebase(eq, params, info.profile());
      if (eq.kind == EquilibriumKind::ScoreThreshold)
        return withhold_estimate_unknown_access(params, info.profile(), eq.access_fraction,
                                                *local.canonical);
      return nontaker_estimate_unknown_access(params, info.profile(), eq.access_fraction,
                                              *local.canonical);
    }

    double operator()(const policy::Resampling&) const {
      if (access()) return bayes_known(policy::BoKnownAccess{});
      if (info.reported()) throw std::invalid_argument("no-access student reported a score");
      const double draw = rng.normal(s.base_mean(), std::sqrt(s.test_var + s.base_variance()));
      return s.report_estimate(draw);
    }

    double operator()(const policy::TestBlank&) const { return s.base_mean(); }

    double operator()(const policy::Equalizing& p) const {
      if (info.reported()) return s.report_estimate(*info.score());
      if (p.reference_z.empty()) return s.base_mean();
      std::uniform_int_distribution<std::size_t> pick(0, p.reference_z.size() - 1);
      const double sd = std::sqrt(s.test_var + s.base_variance());
      return s.report_estimate(s.base_mean() + sd * p.reference_z[pick(rng)]);
    }
  };
  return std::visit(Visitor{params, info, s, rng, need_access}, spec);
}

// ---------------------------------------------------------------------------
// Closed-form estimate distributions.

// Estimate of a with-access student under full reporting, over theta_K drawn
// from the predictive distribution given the other features.
inline Gaussian with_access_estimate_distribution(const ModelParams& params,
                                                  const FeatureProfile& profile) {
  const ProfileSummary s = summarize(params, profile);
  const double d = s.full_precision();
  const double var =
      s.test_precision * s.test_precision * (s.test_var + s.base_variance()) / (d * d);
  return {s.base_mean(), var};
}

// Estimate of a no-access student under re-sampling. Same law as above.
inline Gaussian resampling_estimate_distribution(const ModelParams& params,
                                                 const FeatureProfile& profile) {
  return with_access_estimate_distribution(params, profile);
}

// Estimate of a with-access student of known skill q under full reporting,
// over theta_K ~ N(q, sigma_K^2).
inline Gaussian latent_estimate_distribution(const ModelParams& params,
                                             const FeatureProfile& profile, double q) {
  const ProfileSummary s = summarize(params, profile);
  const double d = s.full_precision();
  return {s.report_estimate(q), s.test_precision / (d * d)};
}

// Alternative latent variance (base + 2 test precision) / D^2. Kept only so
// the Monte Carlo arbitration can compare against it.
inline double latent_variance_alternative(const ModelParams& params,
                                          const FeatureProfile& profile) {
  const ProfileSummary s = summarize(params, profile);
  const double d = s.full_precision();
  return (s.base_precision + 2.0 * s.test_precision) / (d * d);
}

}  // namespace optest
