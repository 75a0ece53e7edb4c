#pragma once

// JSON run configuration: parsing with field-path errors, defaults, and a
// canonical form for hashing.
//
//   {
//     "model": {"mu": 0, "sigma2": 1, "feature_vars": [1, 1]},
//     "access_fraction": 0.5,
//     "policy": "bo_unknown_z",
//     "requirement": "report_optional",
//     "cohorts": {"fixed": [[0.0], [1.0]]}      or {"sampled": 4},
//     "simulation": {"n": 100000, "seed": 7, "tol": 1e-9},
//     "audit": {"alpha": 0.01, "notions": ["observable"], "expected": {"observable": "fair"},
//               "group_by": "Z", "method": "auto"},
//     "dynamics": {"init": "-inf", "max_iter": 200, "pool_size": 10000}
//   }
//
// Only model, access_fraction and policy are required.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "optest/fairness.hpp"
#include "optest/simulate.hpp"

namespace optest {

class ConfigError : public std::runtime_error {
 public:
  enum class Kind { Missing, Range, Choice, Type, Syntax, Io };

  ConfigError(Kind kind, std::string field, const std::string& message)
      : std::runtime_error(message), kind_(kind), field_(std::move(field)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  Kind kind_;
  std::string field_;
};

inline std::string_view to_string(ConfigError::Kind k) {
  switch (k) {
    case ConfigError::Kind::Missing: return "missing_field";
    case ConfigError::Kind::Range: return "out_of_range";
    case ConfigError::Kind::Choice: return "unknown_choice";
    case ConfigError::Kind::Type: return "wrong_type";
    case ConfigError::Kind::Syntax: return "syntax";
    case ConfigError::Kind::Io: return "io";
  }
  return "?";
}

struct AuditConfig {
  double alpha = 0.01;
  std::vector<FairnessNotion> notions{FairnessNotion::Observable, FairnessNotion::Demographic};
  std::map<FairnessNotion, Verdict> expected;
  GroupBy group_by = GroupBy::Access;
  std::optional<AuditMethod> method;
};

struct RunConfig {
  SimulationConfig sim;
  AuditConfig audit;
  double dynamics_init = -kInf;
};

namespace config_detail {

using nlohmann::json;

inline std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}
inline std::string index(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline const json& require(const json& obj, const std::string& base, const char* key) {
  if (!obj.contains(key))
    throw ConfigError(ConfigError::Kind::Missing, join(base, key),
                      "required field '" + join(base, key) + "' is missing");
  return obj.at(key);
}

inline void expect_object(const json& j, const std::string& field) {
  if (!j.is_object())
    throw ConfigError(ConfigError::Kind::Type, field.empty() ? "<root>" : field,
                      "'" + (field.empty() ? std::string("<root>") : field) + "' must be an object");
}

inline double number(const json& j, const std::string& field) {
  if (!j.is_number())
    throw ConfigError(ConfigError::Kind::Type, field, "'" + field + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(ConfigError::Kind::Range, field, "'" + field + "' must be finite");
  return v;
}

inline std::uint64_t unsigned_integer(const json& j, const std::string& field) {
  if (!j.is_number_unsigned()) {
    if (j.is_number_integer())
      throw ConfigError(ConfigError::Kind::Range, field, "'" + field + "' must be non-negative");
    throw ConfigError(ConfigError::Kind::Type, field, "'" + field + "' must be an integer");
  }
  return j.get<std::uint64_t>();
}

// Accepts finite numbers and the strings "-inf" / "+inf" / "inf".
inline double extended_number(const json& j, const std::string& field) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "-inf") return -kInf;
    if (s == "inf" || s == "+inf") return kInf;
    throw ConfigError(ConfigError::Kind::Choice, field,
                      "'" + field + "' must be a number, \"-inf\" or \"+inf\"");
  }
  return number(j, field);
}

template <class Enum>
Enum choice(const json& j, const std::string& field,
            const std::vector<std::pair<std::string, Enum>>& options) {
  if (!j.is_string())
    throw ConfigError(ConfigError::Kind::Type, field, "'" + field + "' must be a string");
  const auto s = j.get<std::string>();
  std::string all;
  for (const auto& [name, value] : options) {
    if (name == s) return value;
    all += (all.empty() ? "" : ", ") + name;
  }
  throw ConfigError(ConfigError::Kind::Choice, field,
                    "'" + field + "' is \"" + s + "\"; expected one of: " + all);
}

inline const std::vector<std::pair<std::string, PolicyName>>& policy_names() {
  static const std::vector<std::pair<std::string, PolicyName>> v{
      {"bo_known_z", PolicyName::BoKnownZ},   {"bo_unknown_z", PolicyName::BoUnknownZ},
      {"resampling", PolicyName::Resampling}, {"test_blank", PolicyName::TestBlank},
      {"equalizing", PolicyName::Equalizing}};
  return v;
}
inline const std::vector<std::pair<std::string, RequirementPolicy>>& requirement_names() {
  static const std::vector<std::pair<std::string, RequirementPolicy>> v{
      {"report_optional", RequirementPolicy::ReportOptional},
      {"report_if_take", RequirementPolicy::ReportIfTake},
      {"report_if_access", RequirementPolicy::ReportIfAccess}};
  return v;
}
inline const std::vector<std::pair<std::string, FairnessNotion>>& notion_names() {
  static const std::vector<std::pair<std::string, FairnessNotion>> v{
      {"latent", FairnessNotion::LatentSkill},
      {"observable", FairnessNotion::Observable},
      {"demographic", FairnessNotion::Demographic},
      {"test_blank", FairnessNotion::TestBlank}};
  return v;
}
inline const std::vector<std::pair<std::string, Verdict>>& verdict_names() {
  static const std::vector<std::pair<std::string, Verdict>> v{
      {"fair", Verdict::Fair}, {"unfair", Verdict::Unfair}, {"inconclusive", Verdict::Inconclusive}};
  return v;
}

inline void reject_unknown_keys(const json& obj, const std::string& base,
                                std::initializer_list<const char*> known) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok)
      throw ConfigError(ConfigError::Kind::Choice, join(base, key),
                        "unknown field '" + join(base, key) + "'");
  }
}

inline ModelParams parse_model(const json& j) {
  expect_object(j, "model");
  reject_unknown_keys(j, "model", {"mu", "sigma2", "feature_vars"});
  const double mu = number(require(j, "model", "mu"), "model.mu");
  const double sigma2 = number(require(j, "model", "sigma2"), "model.sigma2");
  if (!(sigma2 > 0.0))
    throw ConfigError(ConfigError::Kind::Range, "model.sigma2", "'model.sigma2' must be positive");
  const json& fv = require(j, "model", "feature_vars");
  if (!fv.is_array())
    throw ConfigError(ConfigError::Kind::Type, "model.feature_vars", "'model.feature_vars' must be an array");
  if (fv.size() < 2)
    throw ConfigError(ConfigError::Kind::Range, "model.feature_vars",
                      "'model.feature_vars' needs at least two entries (the last is the test)");
  std::vector<double> vars;
  for (std::size_t i = 0; i < fv.size(); ++i) {
    const auto field = index("model.feature_vars", i);
    const double v = number(fv[i], field);
    if (!(v > 0.0)) throw ConfigError(ConfigError::Kind::Range, field, "'" + field + "' must be positive");
    vars.push_back(v);
  }
  return ModelParams(mu, sigma2, std::move(vars));
}

inline CohortDesign parse_cohorts(const json& j, const ModelParams& params) {
  expect_object(j, "cohorts");
  reject_unknown_keys(j, "cohorts", {"fixed", "sampled"});
  if (j.contains("fixed") == j.contains("sampled"))
    throw ConfigError(ConfigError::Kind::Missing, "cohorts",
                      "'cohorts' needs exactly one of 'fixed' or 'sampled'");
  if (j.contains("sampled")) {
    const auto n = unsigned_integer(j.at("sampled"), "cohorts.sampled");
    if (n < 1) throw ConfigError(ConfigError::Kind::Range, "cohorts.sampled", "'cohorts.sampled' must be at least 1");
    return SampledProfiles{static_cast<std::size_t>(n)};
  }
  const json& f = j.at("fixed");
  if (!f.is_array() || f.empty())
    throw ConfigError(ConfigError::Kind::Type, "cohorts.fixed",
                      "'cohorts.fixed' must be a non-empty array of profiles");
  FixedProfiles out;
  for (std::size_t c = 0; c < f.size(); ++c) {
    const auto field = index("cohorts.fixed", c);
    if (!f[c].is_array())
      throw ConfigError(ConfigError::Kind::Type, field, "'" + field + "' must be an array");
    if (f[c].size() != params.num_features() - 1)
      throw ConfigError(ConfigError::Kind::Range, field,
                        "'" + field + "' must list " + std::to_string(params.num_features() - 1) +
                            " non-test features");
    std::vector<double> p;
    for (std::size_t k = 0; k < f[c].size(); ++k) p.push_back(number(f[c][k], index(field, k)));
    out.profiles.push_back(std::move(p));
  }
  return out;
}

inline AuditConfig parse_audit(const json& j) {
  expect_object(j, "audit");
  reject_unknown_keys(j, "audit", {"alpha", "notions", "expected", "group_by", "method"});
  AuditConfig a;
  if (j.contains("alpha")) {
    a.alpha = number(j.at("alpha"), "audit.alpha");
    if (!(a.alpha > 0.0 && a.alpha < 1.0))
      throw ConfigError(ConfigError::Kind::Range, "audit.alpha", "'audit.alpha' must lie in (0, 1)");
  }
  if (j.contains("notions")) {
    const json& n = j.at("notions");
    if (!n.is_array())
      throw ConfigError(ConfigError::Kind::Type, "audit.notions", "'audit.notions' must be an array");
    a.notions.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      const auto notion = choice(n[i], index("audit.notions", i), notion_names());
      if (std::find(a.notions.begin(), a.notions.end(), notion) == a.notions.end())
        a.notions.push_back(notion);
    }
  }
  if (j.contains("expected")) {
    const json& e = j.at("expected");
    expect_object(e, "audit.expected");
    for (const auto& [key, value] : e.items()) {
      const auto field = join("audit.expected", key);
      const auto notion = choice(json(key), field, notion_names());
      a.expected[notion] = choice(value, field, verdict_names());
    }
  }
  if (j.contains("group_by"))
    a.group_by = choice(j.at("group_by"), "audit.group_by",
                        std::vector<std::pair<std::string, GroupBy>>{{"Z", GroupBy::Access},
                                                                     {"X", GroupBy::Reporting}});
  if (j.contains("method")) {
    const int m = choice(j.at("method"), "audit.method",
                         std::vector<std::pair<std::string, int>>{{"auto", 0}, {"analytic", 1}, {"empirical", 2}});
    if (m == 1) a.method = AuditMethod::Analytic;
    if (m == 2) a.method = AuditMethod::Empirical;
  }
  return a;
}

}  // namespace config_detail

inline RunConfig parse_config_json(const nlohmann::json& root) {
  using namespace config_detail;
  expect_object(root, "");
  reject_unknown_keys(root, "", {"model", "access_fraction", "policy", "requirement", "cohorts",
                                 "simulation", "audit", "dynamics"});
  ModelParams params = parse_model(require(root, "", "model"));
  const double access = number(require(root, "", "access_fraction"), "access_fraction");
  if (!(access > 0.0 && access < 1.0))
    throw ConfigError(ConfigError::Kind::Range, "access_fraction", "'access_fraction' must lie in (0, 1)");

  RunConfig rc{SimulationConfig{params}, {}, -kInf};
  SimulationConfig& s = rc.sim;
  s.access_fraction = access;
  s.policy = choice(require(root, "", "policy"), "policy", policy_names());
  if (root.contains("requirement"))
    s.requirement = choice(root.at("requirement"), "requirement", requirement_names());
  s.cohorts = root.contains("cohorts") ? parse_cohorts(root.at("cohorts"), params)
                                       : CohortDesign{FixedProfiles{{reference_profile(params).others}}};

  if (root.contains("simulation")) {
    const json& sim = root.at("simulation");
    expect_object(sim, "simulation");
    reject_unknown_keys(sim, "simulation", {"n", "seed", "tol"});
    if (sim.contains("n")) {
      s.n_per_cohort = unsigned_integer(sim.at("n"), "simulation.n");
      if (s.n_per_cohort < 1)
        throw ConfigError(ConfigError::Kind::Range, "simulation.n", "'simulation.n' must be at least 1");
    }
    if (sim.contains("seed")) s.seed = unsigned_integer(sim.at("seed"), "simulation.seed");
    if (sim.contains("tol")) {
      s.tol = number(sim.at("tol"), "simulation.tol");
      if (!(s.tol > 0.0))
        throw ConfigError(ConfigError::Kind::Range, "simulation.tol", "'simulation.tol' must be positive");
    }
  }
  if (root.contains("audit")) rc.audit = parse_audit(root.at("audit"));
  if (root.contains("dynamics")) {
    const json& d = root.at("dynamics");
    expect_object(d, "dynamics");
    reject_unknown_keys(d, "dynamics", {"init", "max_iter", "pool_size"});
    if (d.contains("init")) rc.dynamics_init = extended_number(d.at("init"), "dynamics.init");
    if (d.contains("max_iter")) s.dynamics.max_iter = unsigned_integer(d.at("max_iter"), "dynamics.max_iter");
    if (d.contains("pool_size")) {
      s.dynamics.pool_size = unsigned_integer(d.at("pool_size"), "dynamics.pool_size");
      if (s.dynamics.pool_size < 1)
        throw ConfigError(ConfigError::Kind::Range, "dynamics.pool_size", "'dynamics.pool_size' must be at least 1");
    }
  }
  s.dynamics.tol = s.tol;
  s.dynamics.seed = s.seed;

  if (s.requirement == RequirementPolicy::ReportIfAccess && !observes_access(s.policy) &&
      s.policy != PolicyName::TestBlank)
    throw ConfigError(ConfigError::Kind::Choice, "requirement",
                      "'requirement' report_if_access needs a policy that observes access");
  return rc;
}

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(ConfigError::Kind::Syntax, "<root>", e.what());
  }
  return parse_config_json(root);
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(ConfigError::Kind::Io, "<file>", "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Fully defaulted configuration with sorted keys. Two files that parse to the
// same run produce the same document.
inline nlohmann::json canonical_json(const RunConfig& rc) {
  using nlohmann::json;
  const SimulationConfig& s = rc.sim;
  const auto ext = [](double x) -> json {
    if (std::isinf(x)) return x > 0 ? "+inf" : "-inf";
    return x;
  };
  json j;
  j["model"] = {{"mu", s.params.mu()},
                {"sigma2", s.params.sigma2()},
                {"feature_vars", std::vector<double>(s.params.feature_vars().begin(),
                                                     s.params.feature_vars().end())}};
  j["access_fraction"] = s.access_fraction;
  j["policy"] = to_string(s.policy);
  j["requirement"] = to_string(s.requirement);
  if (const auto* f = std::get_if<FixedProfiles>(&s.cohorts)) j["cohorts"] = {{"fixed", f->profiles}};
  else j["cohorts"] = {{"sampled", std::get<SampledProfiles>(s.cohorts).n_cohorts}};
  j["simulation"] = {{"n", s.n_per_cohort}, {"seed", s.seed}, {"tol", s.tol}};
  json notions = json::array();
  for (auto n : rc.audit.notions) notions.push_back(to_string(n));
  json expected = json::object();
  for (const auto& [n, v] : rc.audit.expected) expected[std::string(to_string(n))] = to_string(v);
  j["audit"] = {{"alpha", rc.audit.alpha},
                {"notions", notions},
                {"expected", expected},
                {"group_by", to_string(rc.audit.group_by)},
                {"method", rc.audit.method ? std::string(to_string(*rc.audit.method)) : "auto"}};
  j["dynamics"] = {{"init", ext(rc.dynamics_init)},
                   {"max_iter", s.dynamics.max_iter},
                   {"pool_size", s.dynamics.pool_size}};
  return j;
}

}  // namespace optest
