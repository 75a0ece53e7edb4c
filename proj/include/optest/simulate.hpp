#pragma once

// Synthetic cohorts of students: draw skills and features, apply the
// equilibrium decision rule, and estimate every student under a policy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "optest/dynamics.hpp"
#include "optest/equilibrium.hpp"
#include "optest/gauss.hpp"
#include "optest/policies.hpp"
#include "optest/random.hpp"

namespace optest {

enum class PolicyName { BoKnownZ, BoUnknownZ, Resampling, TestBlank, Equalizing };

inline std::string_view to_string(PolicyName p) {
  switch (p) {
    case PolicyName::BoKnownZ: return "bo_known_z";
    case PolicyName::BoUnknownZ: return "bo_unknown_z";
    case PolicyName::Resampling: return "resampling";
    case PolicyName::TestBlank: return "test_blank";
    case PolicyName::Equalizing: return "equalizing";
  }
  return "?";
}

inline bool observes_access(PolicyName p) {
  return p == PolicyName::BoKnownZ || p == PolicyName::Resampling;
}

// Every cohort shares the listed non-test features.
struct FixedProfiles {
  std::vector<std::vector<double>> profiles;
};

// Every student's skill and features are drawn from the generative model;
// cohorts only partition students.
struct SampledProfiles {
  std::size_t n_cohorts = 1;
};

using CohortDesign = std::variant<FixedProfiles, SampledProfiles>;

struct SimulationConfig {
  ModelParams params;
  double access_fraction = 0.5;
  PolicyName policy = PolicyName::BoKnownZ;
  RequirementPolicy requirement = RequirementPolicy::ReportOptional;
  CohortDesign cohorts = SampledProfiles{};
  std::size_t n_per_cohort = 100000;
  std::uint64_t seed = 0;
  double tol = kDefaultSolverTol;
  unsigned threads = 1;
  DynamicsOptions dynamics{};  // used to unravel the equalizing policy
};

inline bool sampled_design(const SimulationConfig& c) {
  return std::holds_alternative<SampledProfiles>(c.cohorts);
}

inline std::size_t cohort_count(const SimulationConfig& c) {
  if (const auto* f = std::get_if<FixedProfiles>(&c.cohorts)) return f->profiles.size();
  return std::get<SampledProfiles>(c.cohorts).n_cohorts;
}

inline void validate(const SimulationConfig& c) {
  require_open_unit(c.access_fraction, "access_fraction");
  if (c.n_per_cohort < 1) throw std::invalid_argument("n_per_cohort must be at least 1");
  if (cohort_count(c) < 1) throw std::invalid_argument("at least one cohort is required");
  if (const auto* f = std::get_if<FixedProfiles>(&c.cohorts))
    for (const auto& p : f->profiles) validate_profile(c.params, FeatureProfile{p, std::nullopt});
  if (c.requirement == RequirementPolicy::ReportIfAccess && !observes_access(c.policy) &&
      c.policy != PolicyName::TestBlank)
    throw std::invalid_argument("report_if_access requires a policy that observes access");
}

struct StudentRecord {
  std::uint32_t cohort = 0;
  std::uint32_t index = 0;
  double q = 0.0;
  bool Z = false;
  bool Y = false;
  bool X = false;
  // Test score is drawn for every student with access, whether or not it is
  // reported; the policy only sees it when X = 1.
  FeatureProfile features;
  double estimate = 0.0;
};

struct SimulationResult {
  SimulationConfig config;
  PolicySpec policy;
  // One per cohort for fixed profiles; a single reference-profile solution
  // (rebased per student) for sampled profiles.
  std::vector<EquilibriumSolution> equilibria;
  std::optional<DynamicsTrace> dynamics;
  std::vector<StudentRecord> records;
};

// Profile with every non-test feature at the prior mean.
inline FeatureProfile reference_profile(const ModelParams& params) {
  return {std::vector<double>(params.num_features() - 1, params.mu()), std::nullopt};
}

namespace detail {

template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  threads = std::max(1u, threads);
  if (threads == 1 || n < 2 * threads) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline std::size_t access_count(const SimulationConfig& c) {
  return static_cast<std::size_t>(std::floor(c.access_fraction * static_cast<double>(c.n_per_cohort)));
}

inline std::vector<StudentRecord> generate_population(const SimulationConfig& config) {
  validate(config);
  const ModelParams& params = config.params;
  const std::size_t n = config.n_per_cohort;
  const std::size_t cohorts = cohort_count(config);
  const std::size_t with_access = access_count(config);
  const auto* fixed = std::get_if<FixedProfiles>(&config.cohorts);
  const std::size_t k_other = params.num_features() - 1;

  std::vector<Gaussian> skill_given_profile;
  if (fixed)
    for (const auto& p : fixed->profiles)
      skill_given_profile.push_back(posterior_without_test(params, {p, std::nullopt}));

  std::vector<StudentRecord> records(cohorts * n);
  detail::parallel_for(records.size(), config.threads, [&](std::size_t flat) {
    const std::size_t c = flat / n, i = flat % n;
    StudentRecord& r = records[flat];
    r.cohort = static_cast<std::uint32_t>(c);
    r.index = static_cast<std::uint32_t>(i);
    r.Z = i < with_access;
    RandomStream skill_rng(config.seed, c, i, StreamPurpose::Skill);
    if (fixed) {
      const Gaussian& g = skill_given_profile[c];
      r.q = skill_rng.normal(g.mean(), g.sd());
      r.features.others = fixed->profiles[c];
    } else {
      r.q = skill_rng.normal(params.mu(), std::sqrt(params.sigma2()));
      RandomStream feature_rng(config.seed, c, i, StreamPurpose::Features);
      r.features.others.resize(k_other);
      for (std::size_t k = 0; k < k_other; ++k)
        r.features.others[k] = r.q + feature_rng.normal(0.0, std::sqrt(params.feature_vars()[k]));
    }
    if (r.Z) {
      RandomStream score_rng(config.seed, c, i, StreamPurpose::TestScore);
      r.features.test_score = r.q + score_rng.normal(0.0, std::sqrt(params.test_var()));
    }
  });
  return records;
}

// Equilibrium played by a cohort with the given profile.
inline EquilibriumSolution equilibrium_for(const SimulationConfig& config,
                                           const FeatureProfile& profile,
                                           std::optional<DynamicsTrace>* trace_out = nullptr) {
  switch (config.policy) {
    case PolicyName::BoKnownZ:
    case PolicyName::Resampling:
    case PolicyName::TestBlank:
      // Test-blank students are indifferent; ties resolve toward reporting.
      return known_access_equilibrium(config.params, profile, config.requirement,
                                      config.access_fraction);
    case PolicyName::BoUnknownZ:
      return solve_unknown_access(config.params, profile, config.access_fraction,
                                  config.requirement, config.tol);
    case PolicyName::Equalizing: {
      DynamicsTrace trace = best_response_dynamics(config.params, profile,
                                                   DynamicsPolicy::Equalizing,
                                                   config.access_fraction, -kInf, config.dynamics);
      if (trace.status != DynamicsStatus::Converged ||
          trace.converged_to != DynamicsOutcome::NoReporting)
        throw SolverError(SolverError::Code::NonConvergent,
                          "equalizing dynamics did not unravel within max_iter");
      if (trace_out) *trace_out = std::move(trace);
      EquilibriumSolution sol;
      sol.kind = EquilibriumKind::NoReporting;
      sol.access_fraction = config.access_fraction;
      sol.profile = profile;
      return sol;
    }
  }
  throw std::invalid_argument("unknown policy");
}

inline void check_kind_matches(EquilibriumKind kind, RequirementPolicy req) {
  const bool ok = (kind == EquilibriumKind::ScoreThreshold && req == RequirementPolicy::ReportOptional) ||
                  (kind == EquilibriumKind::SkillThreshold && req == RequirementPolicy::ReportIfTake) ||
                  kind == EquilibriumKind::FullReporting ||
                  (kind == EquilibriumKind::NoReporting && req != RequirementPolicy::ReportIfAccess);
  if (!ok)
    throw std::invalid_argument(std::string("equilibrium kind ") + std::string(to_string(kind)) +
                                " does not fit requirement " + std::string(to_string(req)));
}

// Sets Y and X from the equilibrium rule. `equilibria` is indexed by cohort,
// or holds a single reference solution that is rebased to each profile.
inline void apply_decisions(std::vector<StudentRecord>& records, const SimulationConfig& config,
                            const std::vector<EquilibriumSolution>& equilibria) {
  if (equilibria.empty()) throw std::invalid_argument("no equilibrium supplied");
  for (const auto& eq : equilibria) check_kind_matches(eq.kind, config.requirement);
  const bool shared = equilibria.size() == 1;
  detail::parallel_for(records.size(), config.threads, [&](std::size_t i) {
    StudentRecord& r = records[i];
    if (!shared && r.cohort >= equilibria.size())
      throw std::invalid_argument("record cohort has no equilibrium");
    const EquilibriumSolution& eq = shared ? equilibria.front() : equilibria[r.cohort];
    if (!r.Z) {
      r.Y = r.X = false;
      return;
    }
    switch (eq.kind) {
      case EquilibriumKind::FullReporting:
        r.Y = r.X = true;
        break;
      case EquilibriumKind::NoReporting:
        r.Y = config.requirement == RequirementPolicy::ReportOptional;
        r.X = false;
        break;
      case EquilibriumKind::ScoreThreshold:
      case EquilibriumKind::SkillThreshold: {
        FeatureProfile p{r.features.others, std::nullopt};
        const double t = sampled_design(config) || shared
                             ? *rebase(eq, config.params, p).canonical
                             : *eq.canonical;
        if (eq.kind == EquilibriumKind::ScoreThreshold) {
          r.Y = true;
          r.X = *r.features.test_score >= t;
        } else {
          r.Y = r.X = r.q >= t;
        }
        break;
      }
    }
  });
}

inline PolicySpec make_policy(const SimulationConfig& config,
                              const std::vector<EquilibriumSolution>& equilibria,
                              const std::optional<DynamicsTrace>& trace) {
  switch (config.policy) {
    case PolicyName::BoKnownZ: return policy::BoKnownAccess{};
    case PolicyName::BoUnknownZ: return policy::BoUnknownAccess{equilibria.front()};
    case PolicyName::Resampling: return policy::Resampling{};
    case PolicyName::TestBlank: return policy::TestBlank{};
    case PolicyName::Equalizing:
      return policy::Equalizing{trace ? trace->reporter_pool_z : std::vector<double>{}};
  }
  throw std::invalid_argument("unknown policy");
}

inline InfoSet info_for(const StudentRecord& r, bool access_observed) {
  FeatureProfile p{r.features.others, std::nullopt};
  const std::optional<bool> access = access_observed ? std::optional<bool>(r.Z) : std::nullopt;
  if (r.X) return InfoSet::reporting(std::move(p), *r.features.test_score, access);
  return InfoSet::withholding(std::move(p), access);
}

inline SimulationResult run(const SimulationConfig& config) {
  validate(config);
  SimulationResult result{config, policy::TestBlank{}, {}, std::nullopt, {}};
  if (const auto* fixed = std::get_if<FixedProfiles>(&config.cohorts)) {
    for (const auto& p : fixed->profiles) {
      std::optional<DynamicsTrace> trace;
      result.equilibria.push_back(equilibrium_for(config, {p, std::nullopt}, &trace));
      if (trace && !result.dynamics) result.dynamics = std::move(trace);
    }
  } else {
    result.equilibria.push_back(
        equilibrium_for(config, reference_profile(config.params), &result.dynamics));
  }
  result.records = generate_population(config);
  apply_decisions(result.records, config, result.equilibria);

  // Thresholds of unknown-access policies are per cohort; keep one policy
  // object per cohort so each non-reporter is pooled with their own cohort.
  std::vector<PolicySpec> policies;
  for (std::size_t c = 0; c < result.equilibria.size(); ++c)
    policies.push_back(make_policy(config, {result.equilibria[c]}, result.dynamics));
  result.policy = policies.front();

  const bool access_observed = observes_access(config.policy);
  detail::parallel_for(result.records.size(), config.threads, [&](std::size_t i) {
    StudentRecord& r = result.records[i];
    const PolicySpec& spec = policies.size() == 1 ? policies.front() : policies[r.cohort];
    RandomStream rng(config.seed, r.cohort, r.index, StreamPurpose::Policy);
    r.estimate = estimate(spec, config.params, info_for(r, access_observed), rng);
  });
  return result;
}

// Feasibility of the action profile under the requirement policy.
inline bool feasible(const StudentRecord& r, RequirementPolicy req) {
  if (!(r.Z >= r.Y && r.Y >= r.X)) return false;
  if (req == RequirementPolicy::ReportIfTake && r.Y != r.X) return false;
  if (req == RequirementPolicy::ReportIfAccess && !(r.Z == r.Y && r.Y == r.X)) return false;
  return std::isfinite(r.estimate);
}

}  // namespace optest
