#pragma once

// Subcommands behind the optest tool. Each writes tidy CSV files and a
// manifest.json into the output directory and returns the process exit code.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "optest/config.hpp"
#include "optest/dynamics.hpp"
#include "optest/equilibrium.hpp"
#include "optest/fairness.hpp"
#include "optest/simulate.hpp"

namespace optest {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitAuditExpectation = 3,
  kExitSolver = 4,
  kExitIo = 5,
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV

// Shortest form is not guaranteed by printf; 17 significant digits always
// round-trips a double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::string format_profile(const std::vector<double>& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? ";" : "") + format_double(p[i]);
  return s;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : columns_(header.size()) { add(header); }

  class Row {
   public:
    explicit Row(CsvTable& t) : t_(t) {}
    Row& operator<<(double x) { return cell(format_double(x)); }
    Row& operator<<(bool b) { return cell(b ? "1" : "0"); }
    Row& operator<<(std::size_t n) { return cell(std::to_string(n)); }
    Row& operator<<(std::uint32_t n) { return cell(std::to_string(n)); }
    Row& operator<<(std::string_view s) { return cell(std::string(s)); }
    Row& operator<<(const std::string& s) { return cell(s); }
    Row& operator<<(const char* s) { return cell(s); }
    ~Row() { t_.add(cells_); }

   private:
    Row& cell(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }
    CsvTable& t_;
    std::vector<std::string> cells_;
  };

  Row row() { return Row(*this); }
  const std::string& str() const { return text_; }

 private:
  void add(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw std::logic_error("CSV row width does not match header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
      if (!quote) {
        text_ += cells[i];
        continue;
      }
      text_ += '"';
      for (char ch : cells[i]) text_ += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      text_ += '"';
    }
    text_ += '\n';
  }

  std::size_t columns_;
  std::string text_;
};

// ---------------------------------------------------------------------------
// Run context and manifest

struct CliContext {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::ostream* echo = &std::cout;  // may be null
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  std::ostringstream ss;
  for (unsigned i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

inline std::string config_hash(const RunConfig& rc) { return sha256_hex(canonical_json(rc).dump()); }

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Session {
 public:
  Session(std::string command, const RunConfig& file_config, const CliContext& ctx)
      : ctx_(ctx), config_(file_config) {
    manifest_["command"] = std::move(command);
    manifest_["tool_version"] = kToolVersion;
    manifest_["config_hash"] = config_hash(file_config);
    manifest_["config"] = canonical_json(file_config);
    manifest_["started_at"] = utc_timestamp();
    if (ctx.seed) {
      config_.sim.seed = *ctx.seed;
      config_.sim.dynamics.seed = *ctx.seed;
    }
    config_.sim.threads = ctx.threads;
    manifest_["seed"] = config_.sim.seed;
    manifest_["threads"] = ctx.threads;
    manifest_["outputs"] = nlohmann::json::array();
    manifest_["solver"] = nlohmann::json::array();
    std::error_code ec;
    std::filesystem::create_directories(ctx.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + ctx.out_dir.string() + ": " + ec.message());
  }

  const RunConfig& config() const { return config_; }
  std::ostream* echo() const { return ctx_.echo; }

  void write(const std::string& name, const std::string& content) {
    const auto path = ctx_.out_dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
    manifest_["outputs"].push_back(name);
  }

  void record_solver(const std::string& cohort, const EquilibriumSolution& eq) {
    manifest_["solver"].push_back({{"cohort", cohort},
                                   {"kind", to_string(eq.kind)},
                                   {"roots", eq.roots.size()},
                                   {"grid_points", eq.diagnostics.grid_points},
                                   {"bracket_halfwidth_sd", eq.diagnostics.bracket_halfwidth_sd},
                                   {"sign_changes", eq.diagnostics.sign_changes},
                                   {"bisection_steps", eq.diagnostics.bisection_steps}});
  }

  void note(const std::string& key, nlohmann::json value) { manifest_[key] = std::move(value); }

  void finish() {
    manifest_["finished_at"] = utc_timestamp();
    const auto path = ctx_.out_dir / "manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << manifest_.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
  }

 private:
  CliContext ctx_;
  RunConfig config_;
  nlohmann::json manifest_;
};

// ---------------------------------------------------------------------------
// Shared pieces

namespace cli_detail {

struct CohortProfile {
  std::string tag;
  FeatureProfile profile;
};

inline std::vector<CohortProfile> solve_profiles(const SimulationConfig& s) {
  std::vector<CohortProfile> out;
  if (const auto* f = std::get_if<FixedProfiles>(&s.cohorts)) {
    for (std::size_t c = 0; c < f->profiles.size(); ++c)
      out.push_back({std::to_string(c), {f->profiles[c], std::nullopt}});
  } else {
    out.push_back({"reference", reference_profile(s.params)});
  }
  return out;
}

inline double access_reporting_fraction(const ModelParams& params, const EquilibriumSolution& eq) {
  const ProfileSummary s = summarize(params, eq.profile);
  switch (eq.kind) {
    case EquilibriumKind::FullReporting: return 1.0;
    case EquilibriumKind::NoReporting: return 0.0;
    case EquilibriumKind::ScoreThreshold:
      return survival(Gaussian(s.base_mean(), s.test_var + s.base_variance()), *eq.canonical);
    case EquilibriumKind::SkillThreshold:
      return survival(Gaussian(s.base_mean(), s.base_variance()), *eq.canonical);
  }
  return 0.0;
}

inline CsvTable threshold_table() {
  return CsvTable({"cohort", "profile", "policy", "requirement", "kind", "canonical_threshold",
                   "standardized_threshold", "n_roots", "roots", "max_abs_residual",
                   "access_fraction", "reporting_fraction", "sign_changes", "bisection_steps"});
}

inline void add_threshold_row(CsvTable& t, const SimulationConfig& s, const std::string& tag,
                              const EquilibriumSolution& eq) {
  double max_res = 0.0;
  for (double r : eq.residuals) max_res = std::max(max_res, std::abs(r));
  std::string roots;
  for (std::size_t i = 0; i < eq.roots.size(); ++i) roots += (i ? ";" : "") + format_double(eq.roots[i]);
  auto row = t.row();
  row << tag << format_profile(eq.profile.others) << to_string(s.policy) << to_string(s.requirement)
      << to_string(eq.kind);
  if (eq.canonical) {
    row << *eq.canonical << standardized_threshold(s.params, eq.profile, eq.kind, *eq.canonical);
  } else {
    row << "" << "";
  }
  row << eq.roots.size() << roots << max_res << eq.access_fraction
      << access_reporting_fraction(s.params, eq) << eq.diagnostics.sign_changes
      << eq.diagnostics.bisection_steps;
}

inline std::string records_csv(const SimulationResult& r) {
  CsvTable t({"cohort", "index", "policy", "q", "Z", "Y", "X", "features", "test_score", "estimate"});
  const auto tag = policy_tag(r.policy);
  for (const auto& rec : r.records) {
    auto row = t.row();
    row << rec.cohort << rec.index << tag << rec.q << rec.Z << rec.Y << rec.X
        << format_profile(rec.features.others);
    if (rec.features.test_score) row << *rec.features.test_score;
    else row << "";
    row << rec.estimate;
  }
  return t.str();
}

inline AuditOptions audit_options(const RunConfig& rc) {
  AuditOptions o;
  o.alpha = rc.audit.alpha;
  o.group_by = rc.audit.group_by;
  o.method = rc.audit.method;
  o.seed = rc.sim.seed;
  return o;
}

// Observable and latent audits condition on a fixed profile, demographic ones
// marginalize over sampled profiles. A notion that does not fit the configured
// design is audited on a companion run with the other design and the same n.
inline SimulationConfig companion(const SimulationConfig& s, bool want_sampled) {
  SimulationConfig c = s;
  if (want_sampled) c.cohorts = SampledProfiles{1};
  else c.cohorts = FixedProfiles{{reference_profile(s.params).others}};
  return c;
}

struct AuditRow {
  FairnessReport report;
  std::optional<Verdict> expected;
};

inline std::vector<AuditRow> run_audits(const RunConfig& rc, const SimulationResult& primary) {
  const AuditOptions opt = audit_options(rc);
  const bool sampled = sampled_design(rc.sim);
  std::optional<SimulationResult> other;
  auto alternate = [&]() -> const SimulationResult& {
    if (!other) other = run(companion(rc.sim, !sampled));
    return *other;
  };
  std::vector<AuditRow> rows;
  for (FairnessNotion n : rc.audit.notions) {
    FairnessReport rep{n, AuditMethod::Analytic, GroupBy::Access, 0.0, 0.0, Verdict::Inconclusive, 0, {}};
    switch (n) {
      case FairnessNotion::Observable:
        rep = audit_observable(sampled ? alternate() : primary, opt);
        break;
      case FairnessNotion::LatentSkill:
        rep = audit_latent(sampled ? alternate() : primary, opt);
        break;
      case FairnessNotion::Demographic:
        rep = audit_demographic(sampled ? primary : alternate(), opt);
        break;
      case FairnessNotion::TestBlank:
        rep = audit_test_blank(primary, opt);
        break;
    }
    const auto it = rc.audit.expected.find(n);
    rows.push_back({rep, it == rc.audit.expected.end() ? std::nullopt : std::optional<Verdict>(it->second)});
  }
  return rows;
}

inline std::string reports_csv(const std::vector<AuditRow>& rows) {
  CsvTable t({"notion", "group_by", "method", "statistic", "critical_value", "verdict", "expected",
              "strata", "conditioning"});
  for (const auto& r : rows) {
    t.row() << to_string(r.report.notion) << to_string(r.report.group_by) << to_string(r.report.method)
            << r.report.statistic << r.report.critical_value << to_string(r.report.verdict)
            << (r.expected ? to_string(*r.expected) : std::string_view("")) << r.report.strata
            << r.report.conditioning;
  }
  return t.str();
}

inline SimulationResult simulate_and_record(Session& session) {
  SimulationResult result = run(session.config().sim);
  const auto profiles = solve_profiles(session.config().sim);
  for (std::size_t c = 0; c < result.equilibria.size(); ++c)
    session.record_solver(profiles[c].tag, result.equilibria[c]);
  return result;
}

inline std::string thresholds_csv(const SimulationConfig& s, const std::vector<EquilibriumSolution>& eqs) {
  CsvTable t = threshold_table();
  const auto profiles = solve_profiles(s);
  for (std::size_t c = 0; c < eqs.size(); ++c) add_threshold_row(t, s, profiles[c].tag, eqs[c]);
  return t.str();
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_solve(const RunConfig& rc, const CliContext& ctx) {
  Session session("solve", rc, ctx);
  const SimulationConfig& s = session.config().sim;
  std::vector<EquilibriumSolution> eqs;
  for (const auto& cp : cli_detail::solve_profiles(s)) {
    eqs.push_back(equilibrium_for(s, cp.profile));
    session.record_solver(cp.tag, eqs.back());
  }
  const std::string csv = cli_detail::thresholds_csv(s, eqs);
  session.write("thresholds.csv", csv);
  if (ctx.echo) *ctx.echo << csv;
  session.finish();
  return kExitOk;
}

inline int cmd_simulate(const RunConfig& rc, const CliContext& ctx) {
  Session session("simulate", rc, ctx);
  const SimulationResult result = cli_detail::simulate_and_record(session);
  session.write("thresholds.csv", cli_detail::thresholds_csv(result.config, result.equilibria));
  session.write("records.csv", cli_detail::records_csv(result));
  if (ctx.echo)
    *ctx.echo << "simulated " << result.records.size() << " students under "
              << policy_tag(result.policy) << "\n";
  session.finish();
  return kExitOk;
}

inline int cmd_audit(const RunConfig& rc, const CliContext& ctx) {
  Session session("audit", rc, ctx);
  const SimulationResult result = cli_detail::simulate_and_record(session);
  const auto rows = cli_detail::run_audits(session.config(), result);
  const std::string csv = cli_detail::reports_csv(rows);
  session.write("reports.csv", csv);
  if (ctx.echo) *ctx.echo << csv;
  bool violated = false;
  for (const auto& r : rows)
    violated = violated || (r.expected == Verdict::Fair && r.report.verdict == Verdict::Unfair);
  session.note("expectations_met", !violated);
  session.finish();
  return violated ? kExitAuditExpectation : kExitOk;
}

inline int cmd_dynamics(const RunConfig& rc, const CliContext& ctx) {
  Session session("dynamics", rc, ctx);
  const SimulationConfig& s = session.config().sim;
  DynamicsPolicy policy{};
  switch (s.policy) {
    case PolicyName::BoUnknownZ: policy = DynamicsPolicy::BoUnknownAccess; break;
    case PolicyName::BoKnownZ: policy = DynamicsPolicy::BoKnownAccess; break;
    case PolicyName::Equalizing: policy = DynamicsPolicy::Equalizing; break;
    default:
      throw ConfigError(ConfigError::Kind::Choice, "policy",
                        "dynamics need policy bo_unknown_z, bo_known_z or equalizing");
  }
  CsvTable t({"cohort", "iteration", "reporting_fraction", "threshold", "withhold_estimate",
              "outcome", "status"});
  bool converged = true;
  for (const auto& cp : cli_detail::solve_profiles(s)) {
    const DynamicsTrace trace = best_response_dynamics(s.params, cp.profile, policy, s.access_fraction,
                                                       session.config().dynamics_init, s.dynamics);
    converged = converged && trace.status == DynamicsStatus::Converged;
    const std::string outcome = trace.converged_to ? std::string(to_string(*trace.converged_to)) : "";
    for (const auto& st : trace.steps)
      t.row() << cp.tag << st.iteration << st.reporting_fraction << st.threshold << st.withhold_estimate
              << outcome << to_string(trace.status);
    if (ctx.echo)
      *ctx.echo << "cohort " << cp.tag << ": " << to_string(trace.status) << " after "
                << trace.last().iteration << " rounds, reporting fraction "
                << format_double(trace.last().reporting_fraction)
                << (outcome.empty() ? "" : " (" + outcome + ")") << "\n";
  }
  session.write("trace.csv", t.str());
  session.note("converged", converged);
  session.finish();
  if (!converged) throw SolverError(SolverError::Code::NonConvergent, "dynamics did not converge within max_iter");
  return kExitOk;
}

// Everything at once: thresholds, per-group estimate summaries and audits.
inline int cmd_report(const RunConfig& rc, const CliContext& ctx) {
  Session session("report", rc, ctx);
  const SimulationResult result = cli_detail::simulate_and_record(session);
  session.write("thresholds.csv", cli_detail::thresholds_csv(result.config, result.equilibria));

  struct Acc {
    std::size_t n = 0, reporters = 0;
    double sum = 0, sum2 = 0, sum_q = 0;
  };
  const std::size_t cohorts = cohort_count(result.config);
  std::vector<Acc> acc(cohorts * 2);  // [cohort][Z]
  for (const auto& r : result.records) {
    Acc& a = acc[r.cohort * 2 + (r.Z ? 1 : 0)];
    ++a.n;
    a.reporters += r.X ? 1 : 0;
    a.sum += r.estimate;
    a.sum2 += r.estimate * r.estimate;
    a.sum_q += r.q;
  }
  CsvTable summary({"cohort", "Z", "n", "reporting_fraction", "mean_estimate", "var_estimate", "mean_q"});
  for (std::size_t c = 0; c < cohorts; ++c)
    for (int z = 1; z >= 0; --z) {
      const Acc& a = acc[c * 2 + static_cast<std::size_t>(z)];
      const double n = static_cast<double>(a.n);
      const double mean = a.n ? a.sum / n : 0.0;
      const double var = a.n > 1 ? (a.sum2 - n * mean * mean) / (n - 1.0) : 0.0;
      summary.row() << c << (z == 1) << a.n << (a.n ? static_cast<double>(a.reporters) / n : 0.0)
                    << mean << var << (a.n ? a.sum_q / n : 0.0);
    }
  session.write("summary.csv", summary.str());

  const auto rows = cli_detail::run_audits(session.config(), result);
  const std::string reports = cli_detail::reports_csv(rows);
  session.write("reports.csv", reports);
  if (ctx.echo) *ctx.echo << summary.str() << reports;
  session.finish();
  return kExitOk;
}

inline int dispatch(const std::string& command, const RunConfig& rc, const CliContext& ctx) {
  if (command == "solve") return cmd_solve(rc, ctx);
  if (command == "simulate") return cmd_simulate(rc, ctx);
  if (command == "audit") return cmd_audit(rc, ctx);
  if (command == "dynamics") return cmd_dynamics(rc, ctx);
  if (command == "report") return cmd_report(rc, ctx);
  throw std::invalid_argument("unknown command " + command);
}

}  // namespace optest
