// optest: solve, simulate, audit and report on optional-test admissions models.
//
//   optest solve|simulate|audit|dynamics|report --config <path> [--out <dir>]
//          [--seed <u64>] [--threads <n>]
//
// Errors go to stderr as a single line of key=value pairs.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "optest/cli.hpp"

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

int fail(int code, const std::string& kind, const std::string& message, const std::string& field = "") {
  std::cerr << "optest: error=" << kind;
  if (!field.empty()) std::cerr << " field=" << field;
  std::cerr << " message=" << quoted(message) << "\n";
  return code;
}

unsigned threads_from_env() {
  const char* env = std::getenv("OPTEST_THREADS");
  if (!env || !*env) return 1;
  try {
    const long v = std::stol(env);
    if (v >= 1) return static_cast<unsigned>(v);
  } catch (...) {
  }
  throw optest::ConfigError(optest::ConfigError::Kind::Range, "OPTEST_THREADS",
                            "OPTEST_THREADS must be a positive integer");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optional-test admissions: equilibria, simulation and fairness audits"};
  app.require_subcommand(1, 1);

  std::string config_path, out_dir = ".";
  std::uint64_t seed = 0;
  unsigned threads = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  for (const char* name : {"solve", "simulate", "audit", "dynamics", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory");
    auto* s = sub->add_option("--seed", seed, "override simulation.seed");
    auto* t = sub->add_option("--threads", threads, "worker threads (default $OPTEST_THREADS or 1)")
                  ->check(CLI::PositiveNumber);
    sub->callback([&, s, t] {
      seed_opt = s;
      threads_opt = t;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(optest::kExitConfig, "usage", e.what());
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    optest::CliContext ctx;
    ctx.out_dir = out_dir;
    if (seed_opt && seed_opt->count()) ctx.seed = seed;
    ctx.threads = threads_opt && threads_opt->count() ? threads : threads_from_env();
    const optest::RunConfig rc = optest::parse_config(config_path);
    return optest::dispatch(command, rc, ctx);
  } catch (const optest::ConfigError& e) {
    return fail(optest::kExitConfig, std::string(optest::to_string(e.kind())), e.what(), e.field());
  } catch (const optest::SolverError& e) {
    return fail(optest::kExitSolver,
                e.code() == optest::SolverError::Code::NoRoot ? "no_root" : "non_convergent", e.what());
  } catch (const optest::IoError& e) {
    return fail(optest::kExitIo, "io", e.what());
  } catch (const optest::AuditError& e) {
    return fail(optest::kExitFailure, "audit", e.what());
  } catch (const std::exception& e) {
    return fail(optest::kExitFailure, "runtime", e.what());
  }
}
