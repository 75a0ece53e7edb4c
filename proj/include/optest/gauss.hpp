#pragma once

// Conjugate Gaussian arithmetic for the test-optional admissions model.
//
// Latent skill q ~ N(mu, sigma2). Each feature k is theta_k = q + eps_k with
// eps_k ~ N(0, feature_vars[k]). Feature indices are zero based; the last
// feature (index K-1) is the test score.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace optest {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class ModelParams {
 public:
  ModelParams(double mu, double sigma2, std::vector<double> feature_vars)
      : mu_(mu), sigma2_(sigma2), feature_vars_(std::move(feature_vars)) {
    if (!std::isfinite(mu_)) throw std::invalid_argument("mu must be finite");
    if (!(sigma2_ > 0.0) || !std::isfinite(sigma2_))
      throw std::invalid_argument("sigma2 must be positive and finite");
    if (feature_vars_.size() < 2)
      throw std::invalid_argument("at least two features are required (K >= 2)");
    for (double v : feature_vars_) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument("feature variances must be positive and finite");
    }
  }

  double mu() const noexcept { return mu_; }
  double sigma2() const noexcept { return sigma2_; }
  std::span<const double> feature_vars() const noexcept { return feature_vars_; }
  std::size_t num_features() const noexcept { return feature_vars_.size(); }
  std::size_t test_index() const noexcept { return feature_vars_.size() - 1; }
  double test_var() const noexcept { return feature_vars_.back(); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  double mu_;
  double sigma2_;
  std::vector<double> feature_vars_;
};

class Gaussian {
 public:
  Gaussian(double mean, double variance) : mean_(mean), variance_(variance) {
    if (!std::isfinite(mean_)) throw std::invalid_argument("Gaussian mean must be finite");
    if (!(variance_ > 0.0) || !std::isfinite(variance_))
      throw std::invalid_argument("Gaussian variance must be positive and finite");
  }

  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return variance_; }
  double sd() const noexcept { return std::sqrt(variance_); }
  double precision() const noexcept { return 1.0 / variance_; }

  friend bool operator==(const Gaussian&, const Gaussian&) = default;

 private:
  double mean_;
  double variance_;
};

// theta_1..theta_{K-1}, and the test score when it is known.
struct FeatureProfile {
  std::vector<double> others;
  std::optional<double> test_score;

  friend bool operator==(const FeatureProfile&, const FeatureProfile&) = default;
};

inline void validate_profile(const ModelParams& params, const FeatureProfile& profile) {
  if (profile.others.size() != params.num_features() - 1)
    throw std::invalid_argument("profile has " + std::to_string(profile.others.size()) +
                                " non-test features, model expects " +
                                std::to_string(params.num_features() - 1));
  for (double v : profile.others)
    if (!std::isfinite(v)) throw std::invalid_argument("profile features must be finite");
  if (profile.test_score && !std::isfinite(*profile.test_score))
    throw std::invalid_argument("test score must be finite");
}

struct Observation {
  std::size_t feature;
  double value;
};

inline Gaussian posterior(const ModelParams& params, std::span<const Observation> observed) {
  std::vector<Observation> sorted(observed.begin(), observed.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Observation& a, const Observation& b) { return a.feature < b.feature; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].feature >= params.num_features())
      throw std::out_of_range("feature index " + std::to_string(sorted[i].feature) +
                              " out of range");
    if (i > 0 && sorted[i].feature == sorted[i - 1].feature)
      throw std::invalid_argument("duplicate feature index " + std::to_string(sorted[i].feature));
  }
  // Summed in feature-index order so the result does not depend on input order.
  double precision = 1.0 / params.sigma2();
  double weighted = params.mu() / params.sigma2();
  for (const auto& [k, value] : sorted) {
    const double p = 1.0 / params.feature_vars()[k];
    precision += p;
    weighted += value * p;
  }
  return {weighted / precision, 1.0 / precision};
}

// Sufficient statistics of a profile. The Bayesian estimate of a student who
// reports score s is (weighted_sum + s * test_precision) / full_precision.
struct ProfileSummary {
  double weighted_sum;    // mu/sigma2 + sum_{k<K} theta_k / sigma_k^2
  double base_precision;  // 1/sigma2 + sum_{k<K} 1/sigma_k^2
  double test_precision;  // 1/sigma_K^2
  double test_var;

  double full_precision() const noexcept { return base_precision + test_precision; }
  double base_mean() const noexcept { return weighted_sum / base_precision; }
  double base_variance() const noexcept { return 1.0 / base_precision; }
  double report_estimate(double score) const noexcept {
    return (weighted_sum + score * test_precision) / full_precision();
  }
  // Inverse of report_estimate.
  double score_for_estimate(double estimate) const noexcept {
    return (estimate * full_precision() - weighted_sum) / test_precision;
  }
  double report_slope() const noexcept { return test_precision / full_precision(); }
};

inline ProfileSummary summarize(const ModelParams& params, const FeatureProfile& profile) {
  validate_profile(params, profile);
  std::vector<Observation> obs;
  obs.reserve(profile.others.size());
  for (std::size_t k = 0; k < profile.others.size(); ++k) obs.push_back({k, profile.others[k]});
  const Gaussian base = posterior(params, obs);
  return {base.mean() * base.precision(), base.precision(), 1.0 / params.test_var(),
          params.test_var()};
}

inline Gaussian posterior_without_test(const ModelParams& params, const FeatureProfile& profile) {
  const ProfileSummary s = summarize(params, profile);
  return {s.base_mean(), s.base_variance()};
}

inline Gaussian posterior_with_test(const ModelParams& params, const FeatureProfile& profile,
                                    double score) {
  const ProfileSummary s = summarize(params, profile);
  return {s.report_estimate(score), 1.0 / s.full_precision()};
}

// Distribution of the test score given the other features.
inline Gaussian predictive_test_score(const ModelParams& params, const FeatureProfile& profile) {
  if (profile.test_score)
    throw std::invalid_argument("predictive_test_score expects the test score to be absent");
  const ProfileSummary s = summarize(params, profile);
  return {s.base_mean(), s.test_var + s.base_variance()};
}

// ---------------------------------------------------------------------------
// Standard normal helpers.

inline double normal_pdf(double z) noexcept {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline constexpr double kMillsAsymptoticCutoff = 8.0;

// phi(a) / Phi(a). Below -8 the ratio of two tiny numbers is replaced by the
// continued fraction Phi(a) = phi(a) / (|a| + 1/(|a| + 2/(|a| + ...))).
inline double inverse_mills_below(double alpha) noexcept {
  if (alpha == -kInf) return kInf;
  if (alpha == kInf) return 0.0;
  if (alpha < -kMillsAsymptoticCutoff) {
    const double x = -alpha;
    double tail = x;
    for (int n = 60; n >= 1; --n) tail = x + n / tail;
    return tail;
  }
  return normal_pdf(alpha) / normal_cdf(alpha);
}

struct TailMean {
  double value;
  bool asymptotic;  // true when the continued-fraction branch was taken
};

// E[X | X < t] for X ~ g.
inline TailMean truncated_mean_below_detail(const Gaussian& g, double t) {
  if (std::isnan(t)) throw std::invalid_argument("truncation point is NaN");
  if (t == kInf) return {g.mean(), false};
  if (t == -kInf) return {-kInf, false};
  const double s = g.sd();
  const double alpha = (t - g.mean()) / s;
  return {g.mean() - s * inverse_mills_below(alpha), alpha < -kMillsAsymptoticCutoff};
}

inline double truncated_mean_below(const Gaussian& g, double t) {
  return truncated_mean_below_detail(g, t).value;
}

// E[X | X > t] for X ~ g.
inline TailMean truncated_mean_above_detail(const Gaussian& g, double t) {
  if (std::isnan(t)) throw std::invalid_argument("truncation point is NaN");
  if (t == -kInf) return {g.mean(), false};
  if (t == kInf) return {kInf, false};
  const double s = g.sd();
  const double alpha = (t - g.mean()) / s;
  return {g.mean() + s * inverse_mills_below(-alpha), alpha > kMillsAsymptoticCutoff};
}

inline double truncated_mean_above(const Gaussian& g, double t) {
  return truncated_mean_above_detail(g, t).value;
}

// Pr[X >= t].
inline double survival(const Gaussian& g, double t) {
  if (std::isnan(t)) throw std::invalid_argument("survival point is NaN");
  if (t == kInf) return 0.0;
  if (t == -kInf) return 1.0;
  return 0.5 * std::erfc((t - g.mean()) / (g.sd() * std::numbers::sqrt2));
}

inline double cdf(const Gaussian& g, double t) {
  if (t == kInf) return 1.0;
  if (t == -kInf) return 0.0;
  return 0.5 * std::erfc(-(t - g.mean()) / (g.sd() * std::numbers::sqrt2));
}

}  // namespace optest
