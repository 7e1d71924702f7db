// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria outside --known-failure, capped at 125.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "xtkd/audit.hpp"
#include "xtkd/distill.hpp"
#include "xtkd/harness.hpp"
#include "xtkd/linalg.hpp"
#include "xtkd/tasks.hpp"

using namespace xtkd;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string join_failures(const std::vector<ClaimResult>& claims) {
  std::string out;
  for (const auto& c : claims) {
    if (c.pass) continue;
    out += (out.empty() ? "" : "; ") + c.name + " (" + c.detail + ")";
  }
  return out;
}

Verdict svd_suite() {
  Rng rng(20240611);
  double recon = 0.0;
  double ortho = 0.0;
  double sigma = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.next_u64() % 16;
    const std::size_t n = 1 + rng.next_u64() % 16;
    const Matrix a = testing::random_matrix(rng, m, n);
    const SvdResult s = svd(a);
    recon = std::max(recon, frob_norm(sub(truncated_reconstruct(s, s.sigma.size()), a)) / frob_norm(a));
    ortho = std::max({ortho, max_abs_diff(matmul_tn(s.u, s.u), Matrix::identity(s.u.cols())),
                      max_abs_diff(matmul_tn(s.v, s.v), Matrix::identity(s.v.cols()))});
    const auto ref = oracle::singular_values_via_gram(testing::dense(a));
    for (std::size_t i = 0; i < ref.size(); ++i) sigma = std::max(sigma, std::abs(ref[i] - s.sigma[i]));
  }
  return {recon < 1e-8 && ortho < 1e-8 && sigma < 1e-7,
          "recon " + fmt(recon) + ", ortho " + fmt(ortho) + ", sigma vs oracle " + fmt(sigma)};
}

Verdict grad_suite() {
  const auto entries = grad_audit(20);
  double worst = 0.0;
  std::string failed;
  std::set<std::string> names;
  for (const auto& e : entries) {
    names.insert(e.name);
    worst = std::max(worst, e.max_rel_err / e.threshold);
    if (!e.pass() || e.seeds < 20) failed += (failed.empty() ? "" : ", ") + e.name;
  }
  std::string missing;
  for (const std::string n : {"fitnets/inverted", "fitnets/traditional", "at/inverted", "at/traditional",
                               "pkt/inverted", "pkt/traditional", "ensemble", "cross_entropy", "silog",
                               "spectral_tail"}) {
    if (!names.count(n)) missing += (missing.empty() ? "" : ", ") + n;
  }
  std::string detail = std::to_string(entries.size()) + " entries, worst err/threshold " + fmt(worst);
  if (!failed.empty()) detail += ", failed: " + failed;
  if (!missing.empty()) detail += ", missing: " + missing;
  return {failed.empty() && missing.empty(), detail};
}

Verdict bound_suite() {
  const BoundAuditReport r = bound_audit(200, 1e-6, 0);
  const bool ok = r.n == 200 && r.holds == 200 && r.min_slack >= -1e-9 && std::abs(r.full_k_slack) < 1e-10 &&
                  std::abs(r.empty_k_slack) < 1e-10;
  return {ok, std::to_string(r.holds) + "/" + std::to_string(r.n) + " hold, min slack " + fmt(r.min_slack) +
                  ", full-k " + fmt(r.full_k_slack) + ", empty-k " + fmt(r.empty_k_slack)};
}

Verdict rank_suite() {
  const RankAuditReport r = rank_audit(100, 1e-8, 0);
  return {r.n == 100 && r.violations == 0,
          std::to_string(r.violations) + " violations in " + std::to_string(r.n) + " products"};
}

Verdict oracle_suite() {
  Rng rng(31337);
  double depth = 0.0;
  double pkt = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t r = 1 + rng.next_u64() % 8;
    const std::size_t c = 1 + rng.next_u64() % 8;
    const Matrix gt = rng.uniform_matrix(r, c, 0.5, 5.0);
    const Matrix pred = rng.uniform_matrix(r, c, 0.5, 5.0);
    const MetricsReport m = depth_metrics(pred, gt);
    const oracle::Metrics o = oracle::depth_metrics(testing::dense(pred), testing::dense(gt));
    depth = std::max({depth, std::abs(m.abs_rel - o.abs_rel), std::abs(m.sq_rel - o.sq_rel),
                      std::abs(m.rms - o.rms), std::abs(m.rms_log - o.rms_log), std::abs(m.delta1 - o.d1),
                      std::abs(m.delta2 - o.d2), std::abs(m.delta3 - o.d3)});

    const std::size_t batch = 2 + rng.next_u64() % 7;
    const std::size_t dim = 1 + rng.next_u64() % 6;
    const Matrix a = testing::random_matrix(rng, batch, dim);
    const Matrix b = testing::random_matrix(rng, batch, dim);
    pkt = std::max(pkt, std::abs(pkt_loss(a, b) - oracle::pkt(testing::dense(a), testing::dense(b))));
  }
  const double silog = silog_loss(Matrix::scalar(std::exp(0.5)), Matrix::scalar(1.0));
  double ce = 0.0;
  for (std::size_t classes : {2, 3, 10, 100}) {
    const std::vector<int> labels{0, static_cast<int>(classes) - 1};
    ce = std::max(ce, std::abs(ce_loss(Matrix(2, classes, 0.3), labels) - std::log(static_cast<double>(classes))));
  }
  const bool ok = depth < 1e-12 && pkt < 1e-10 && std::abs(silog - 5.361903) < 1e-6 && ce < 1e-12;
  return {ok, "depth " + fmt(depth) + ", pkt " + fmt(pkt) + ", silog " + std::to_string(silog) + ", ce " + fmt(ce)};
}

class PresetRunner {
 public:
  explicit PresetRunner(fs::path root) : root_(std::move(root)) {}

  ExperimentOutcome run(const std::string& name, const std::string& tag = "") const {
    const fs::path dir = root_ / (tag.empty() ? name : name + "-" + tag);
    fs::remove_all(dir);
    return run_experiment(preset(name), {dir, 1, true});
  }

 private:
  fs::path root_;
};

Verdict claims_verdict(const ExperimentOutcome& o) {
  std::size_t held = 0;
  for (const auto& c : o.claims) held += c.pass ? 1 : 0;
  std::string detail = std::to_string(held) + "/" + std::to_string(o.claims.size()) + " claims hold";
  const std::string failures = join_failures(o.claims);
  if (!failures.empty()) detail += "; failing: " + failures;
  return {!o.claims.empty() && held == o.claims.size(), detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism(PresetRunner& runner, const std::string& name) {
  const ExperimentOutcome a = runner.run(name, "first");
  const ExperimentOutcome b = runner.run(name, "second");
  if (a.files.size() != b.files.size()) {
    return {false, "file counts differ: " + std::to_string(a.files.size()) + " vs " + std::to_string(b.files.size())};
  }
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    const std::string x = slurp(a.files[i]);
    if (a.files[i].filename() != b.files[i].filename() || x != slurp(b.files[i])) {
      return {false, a.files[i].filename().string() + " differs"};
    }
    bytes += x.size();
  }
  return {!a.files.empty(), name + ": " + std::to_string(a.files.size()) + " CSVs, " + std::to_string(bytes) +
                                " bytes identical"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  std::string repeat = "fig-spectra";
  std::vector<int> known;
  app.add_option("--out", out, "Scratch directory for preset outputs");
  app.add_option("--only", only, "Criteria to run, default all")->check(CLI::Range(1, 10));
  app.add_option("--repeat-preset", repeat, "Preset run twice for the determinism check");
  app.add_option("--known-failure", known, "Criteria whose FAIL does not set the exit status")
      ->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(out);
  std::ofstream report(fs::path(out) / "acceptance.txt");
  const auto emit = [&report](const std::string& line) {
    std::cout << line << std::endl;
    report << line << '\n' << std::flush;
  };
  PresetRunner runner(out);
  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0: no runtime limit
    std::function<Verdict()> check;
  };
  const auto preset_check = [&runner](const std::string& name) {
    return [&runner, name] { return claims_verdict(runner.run(name)); };
  };
  const std::vector<Criterion> criteria{
      {1, "svd suite", 10, svd_suite},
      {2, "gradient suite", 60, grad_suite},
      {3, "bound audit", 10, bound_suite},
      {4, "rank inequality audit", 5, rank_suite},
      {5, "metric and loss oracles", 0, oracle_suite},
      {6, "table1-grid directions", 600, preset_check("table1-grid")},
      {7, "fig-spectra ranks", 600, preset_check("fig-spectra")},
      {8, "teacher-free-sweep", 600, preset_check("teacher-free-sweep")},
      {9, "linear-map", 300, preset_check("linear-map")},
      {10, "determinism", 0, [&] { return determinism(runner, repeat); }},
  };

  int failed = 0;
  int passed = 0;
  int excused = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_s == 0 || secs < c.limit_s;
    const bool pass = v.pass && in_time;
    const bool is_known = std::find(known.begin(), known.end(), c.id) != known.end();
    if (pass) {
      ++passed;
    } else if (is_known) {
      ++excused;
    } else {
      ++failed;
    }
    std::string timing = fmt(secs) + " s";
    if (c.limit_s > 0) timing += " of " + fmt(c.limit_s) + " s" + (in_time ? "" : ", over limit");
    emit(std::string(pass ? "PASS" : "FAIL") + " [" + std::to_string(c.id) + "] " + c.name + ": " + v.detail + " (" +
         timing + ")" + (!pass && is_known ? " [known failure]" : ""));
  }
  emit(std::to_string(passed) + " passed, " + std::to_string(failed + excused) + " failed" +
       (excused > 0 ? " (" + std::to_string(excused) + " known)" : ""));
  return std::min(failed, 125);
}
