#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "xtkd/audit.hpp"
#include "xtkd/harness.hpp"
#include "xtkd/version.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRunFailure = 2;
constexpr int kClaimFailure = 3;

std::filesystem::path default_out() {
  const char* env = std::getenv("XTKD_OUT");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("xtkd_out");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw xtkd::ConfigError("--seeds: bad seed '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw xtkd::ConfigError("--seeds: must list at least one seed");
  return out;
}

int report(const xtkd::ExperimentOutcome& outcome, const std::filesystem::path& dir) {
  std::cout << "summary: " << (dir / "summary.csv").string() << '\n';
  for (const auto& row : outcome.summary.rows) {
    std::cout << "  " << std::left << std::setw(44) << row.label;
    for (std::size_t i = 0; i < row.metric_names.size() && i < 2; ++i) {
      std::cout << ' ' << row.metric_names[i] << '=' << std::setprecision(5) << row.mean[i] << "±"
                << row.stddev[i];
    }
    if (row.rank_mean > 0.0) std::cout << " rank=" << row.rank_mean;
    std::cout << '\n';
  }
  bool ok = true;
  for (const auto& c : outcome.claims) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.pass;
  }
  return ok ? kOk : kClaimFailure;
}

int run_config(xtkd::ExperimentConfig cfg, const std::optional<std::string>& seeds, std::size_t jobs,
               const std::filesystem::path& out_root, bool verbose) {
  if (seeds) {
    cfg.seeds = parse_seeds(*seeds);
    xtkd::validate(cfg);
  }
  const std::filesystem::path dir = out_root / cfg.name;
  xtkd::RunOptions opts{dir, jobs, !verbose};
  return report(xtkd::run_experiment(cfg, opts), dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-task feature distillation laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset_name;
  std::optional<std::string> seeds;
  std::size_t jobs = 1;
  std::string out_dir = default_out().string();
  bool verbose = false;

  auto* run = app.add_subcommand("run", "Run an experiment described by a config file");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--seeds", seeds, "Override seeds, comma separated");
  run->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Output root (default $XTKD_OUT or xtkd_out)");
  run->add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* pre = app.add_subcommand("preset", "Run a named preset and check its claims");
  pre->add_option("name", preset_name, "Preset name")->required();
  pre->add_option("--seeds", seeds, "Override seeds, comma separated");
  pre->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
  pre->add_option("--out", out_dir, "Output root (default $XTKD_OUT or xtkd_out)");
  pre->add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* list = app.add_subcommand("presets", "List preset names");
  auto* show = app.add_subcommand("show", "Print a preset as a config file");
  show->add_option("name", preset_name, "Preset name")->required();

  std::size_t n = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  auto* bound = app.add_subcommand("bound-audit", "Check the decoupled bound on random instances");
  bound->add_option("--n", n, "Instances");
  bound->add_option("--tol", tol, "Relative threshold for retained singular values");
  bound->add_option("--seed", seed, "Random seed");

  std::size_t grad_seeds = 20;
  auto* grad = app.add_subcommand("grad-audit", "Finite-difference check of every op and loss");
  grad->add_option("--seeds", grad_seeds, "Random instances per op");

  auto* version = app.add_subcommand("version", "Print the version");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_config(xtkd::parse_config_file(config_path), seeds, jobs, out_dir, verbose);
    if (*pre) return run_config(xtkd::preset(preset_name), seeds, jobs, out_dir, verbose);
    if (*list) {
      for (const auto& p : xtkd::preset_names()) std::cout << p << '\n';
      return kOk;
    }
    if (*show) {
      std::cout << xtkd::render_config(xtkd::preset(preset_name));
      return kOk;
    }
    if (*bound) {
      const xtkd::BoundAuditReport rep = xtkd::bound_audit(n, tol, seed);
      std::cout << rep.holds << "/" << rep.n << " instances hold\n"
                << "min slack " << rep.min_slack << "\nmax slack " << rep.max_slack << '\n'
                << "full-k slack " << rep.full_k_slack << "\nempty-k slack " << rep.empty_k_slack << '\n';
      std::cout << (rep.pass() ? "PASS" : "FAIL") << '\n';
      return rep.pass() ? kOk : kClaimFailure;
    }
    if (*grad) {
      bool ok = true;
      for (const auto& e : xtkd::grad_audit(grad_seeds)) {
        std::cout << (e.pass() ? "PASS " : "FAIL ") << std::left << std::setw(22) << e.name
                  << " max_rel_err " << std::scientific << std::setprecision(2) << e.max_rel_err
                  << " (< " << e.threshold << ")" << std::defaultfloat;
        if (e.skipped_kinks > 0) std::cout << " skipped_kinks " << e.skipped_kinks;
        std::cout << '\n';
        ok = ok && e.pass();
      }
      return ok ? kOk : kClaimFailure;
    }
    if (*version) {
      std::cout << "xtkd " << xtkd::kVersion << '\n';
      return kOk;
    }
  } catch (const xtkd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const xtkd::MissingInputError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << '\n';
    return kRunFailure;
  }
  return kOk;
}
