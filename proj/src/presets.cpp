#include <algorithm>
#include <cmath>
#include <sstream>

#include "xtkd/harness.hpp"

namespace xtkd {

namespace {

// Shared desk-scale setup: ~3k generated rows, a small student trained on 60
// of them, 64-wide teachers pretrained on a separate pool of 1000.
ExperimentConfig base(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.seeds = {0, 1, 2, 3, 4};
  c.epochs = 10000;
  c.lr = 0.005;
  c.record_every = 500;
  c.rank_tol = 1e-2;
  c.data.seed = 7;
  c.data.pool = 1000;
  c.data.train = 60;
  c.data.val = 1940;
  c.task = TaskKind::Depth;
  c.student = {{32, 8, 32}, 2};
  c.teacher.net = {{64, 64}, 2};
  c.teacher.epochs = 2000;
  c.teacher.lr = 0.01;
  return c;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

double val_mean(const SummaryRow& r) {
  const auto it = std::find(r.metric_names.begin(), r.metric_names.end(), "val_loss");
  return r.mean[static_cast<std::size_t>(it - r.metric_names.begin())];
}

double val_std(const SummaryRow& r) {
  const auto it = std::find(r.metric_names.begin(), r.metric_names.end(), "val_loss");
  return r.stddev[static_cast<std::size_t>(it - r.metric_names.begin())];
}

ClaimResult missing(const std::string& name, const std::string& label) {
  return {name, false, "summary has no row " + label};
}

// lhs < rhs (strict) or lhs <= rhs on seed-mean validation loss.
ClaimResult ordered(const SummaryTable& s, const std::string& name, const std::string& lhs,
                    const std::string& rhs, bool strict) {
  if (!s.has(lhs)) return missing(name, lhs);
  if (!s.has(rhs)) return missing(name, rhs);
  const double a = val_mean(s.row(lhs));
  const double b = val_mean(s.row(rhs));
  const bool ok = strict ? a < b : a <= b;
  return {name, ok, lhs + " " + fmt(a) + (strict ? " < " : " <= ") + rhs + " " + fmt(b)};
}

std::vector<ClaimResult> table1_claims(const ExperimentOutcome& o) {
  const SummaryTable& s = o.summary;
  std::vector<ClaimResult> out;
  const std::string rnd = "random-frozen/";
  const std::string same = "pretrained-depth/";
  for (const char* m : {"fitnets", "ensemble"}) {
    out.push_back(ordered(s, std::string("random teacher favours inverted: ") + m,
                          rnd + m + "/inverted", rnd + m + "/traditional", true));
  }
  out.push_back(ordered(s, "same-task teacher favours traditional: fitnets", same + "fitnets/traditional",
                        same + "fitnets/inverted", false));
  if (!s.has("baseline")) {
    out.push_back(missing("distillation beats baseline", "baseline"));
    return out;
  }
  const double base = val_mean(s.row("baseline"));
  for (const std::string& teacher : {rnd, same}) {
    for (const char* m : {"fitnets", "at", "pkt", "ensemble"}) {
      const std::string inv = teacher + m + "/inverted";
      const std::string trad = teacher + m + "/traditional";
      const std::string name = "beats baseline: " + teacher + m;
      if (!s.has(inv) || !s.has(trad)) {
        out.push_back(missing(name, s.has(inv) ? trad : inv));
        continue;
      }
      const double vi = val_mean(s.row(inv));
      const double vt = val_mean(s.row(trad));
      const double best = std::min(vi, vt);
      out.push_back({name, best < base,
                     "best direction " + std::string(vi <= vt ? "inverted " : "traditional ") + fmt(best) +
                         " vs baseline " + fmt(base)});
    }
  }
  return out;
}

ClaimResult rank_order(const SummaryTable& s, const std::string& name, const std::string& lhs,
                       const std::string& rhs) {
  if (!s.has(lhs)) return missing(name, lhs);
  if (!s.has(rhs)) return missing(name, rhs);
  const double a = s.row(lhs).rank_mean;
  const double b = s.row(rhs).rank_mean;
  return {name, a <= b, lhs + " rank " + fmt(a) + " <= " + rhs + " rank " + fmt(b)};
}

std::vector<ClaimResult> spectra_claims(const ExperimentOutcome& o) {
  const SummaryTable& s = o.summary;
  return {rank_order(s, "random teacher yields lower projector rank than same-task",
                     "random-frozen/fitnets/inverted", "pretrained-depth/fitnets/inverted"),
          rank_order(s, "inverted projector rank <= traditional under random teacher",
                     "random-frozen/fitnets/inverted", "random-frozen/fitnets/traditional")};
}

std::vector<ClaimResult> sweep_claims(const ExperimentOutcome& o) {
  const SummaryTable& s = o.summary;
  const std::string name = "some r beats baseline by one pooled stddev";
  if (!s.has("baseline")) return {missing(name, "baseline")};
  const SummaryRow& base = s.row("baseline");
  std::string best_label;
  double best_margin = -INFINITY;
  std::string detail;
  for (const auto& row : s.rows) {
    if (row.label.rfind("teacher-free/", 0) != 0) continue;
    const double pooled = std::sqrt((val_std(row) * val_std(row) + val_std(base) * val_std(base)) / 2.0);
    const double gain = val_mean(base) - val_mean(row);
    const double margin = gain - pooled;
    if (gain > 0.0 && margin > best_margin) {
      best_margin = margin;
      best_label = row.label + " gain " + fmt(gain) + " pooled sd " + fmt(pooled);
    }
  }
  if (best_label.empty()) return {{name, false, "no r improves on baseline " + fmt(val_mean(base))}};
  return {{name, best_margin >= 0.0, "best " + best_label}};
}

std::vector<ClaimResult> linear_map_claims(const ExperimentOutcome& o) {
  std::size_t improved = 0;
  for (const auto& [first, last] : o.linear_map_rms_log) {
    if (last < first) ++improved;
  }
  const std::size_t n = o.linear_map_rms_log.size();
  const auto needed = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n)));
  return {{"training P lowers validation RMSL", n > 0 && improved >= needed,
           std::to_string(improved) + "/" + std::to_string(n) + " seeds improved, need " +
               std::to_string(needed)}};
}

std::vector<ClaimResult> bound_claims(const ExperimentOutcome& o) {
  std::size_t holds = 0;
  std::size_t total = 0;
  double min_slack = INFINITY;
  double tight = 0.0;
  bool ok = !o.bound_reports.empty();
  for (const auto& b : o.bound_reports) {
    holds += b.holds;
    total += b.n;
    min_slack = std::min(min_slack, b.min_slack);
    tight = std::max({tight, std::abs(b.full_k_slack), std::abs(b.empty_k_slack)});
    ok = ok && b.pass();
  }
  return {{"decoupled bound holds", ok,
           std::to_string(holds) + "/" + std::to_string(total) + " hold, min slack " + fmt(min_slack) +
               ", degenerate |slack| " + fmt(tight)}};
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"table1-grid", "fig-spectra", "teacher-free-sweep", "linear-map", "bound-audit"};
}

ExperimentConfig preset(const std::string& name) {
  if (name == "table1-grid") {
    ExperimentConfig c = base(name);
    c.teacher.kinds = {TeacherKind::RandomFrozen, TeacherKind::PretrainedDepth};
    c.distill.methods = {DistillKind::FitNets, DistillKind::AT, DistillKind::PKT, DistillKind::Ensemble};
    c.distill.directions = {Direction::Inverted, Direction::Traditional};
    c.distill.include_baseline = true;
    return c;
  }
  if (name == "fig-spectra") {
    ExperimentConfig c = base(name);
    c.record_every = 100;
    c.teacher.kinds = {TeacherKind::RandomFrozen, TeacherKind::PretrainedDepth};
    c.distill.methods = {DistillKind::FitNets};
    c.distill.directions = {Direction::Inverted, Direction::Traditional};
    c.distill.include_baseline = false;
    return c;
  }
  if (name == "teacher-free-sweep") {
    ExperimentConfig c = base(name);
    c.teacher.kinds = {TeacherKind::None};
    c.spectral.r = {1, 2, 3, 4, 5, 6, 7, 8};
    c.distill.include_baseline = true;
    return c;
  }
  if (name == "linear-map") {
    ExperimentConfig c = base(name);
    c.mode = ExperimentMode::LinearMap;
    c.epochs = 2000;
    c.lr = 0.01;
    c.record_every = 100;
    c.data.train = 200;
    c.linear_map = {TaskKind::Regression, TaskKind::Depth};
    return c;
  }
  if (name == "bound-audit") {
    ExperimentConfig c = base(name);
    c.mode = ExperimentMode::BoundAudit;
    c.seeds = {0};
    c.bound = {200, 1e-6};
    return c;
  }
  std::string hint;
  for (const auto& p : preset_names()) {
    const bool close = p.find(name) != std::string::npos || name.find(p.substr(0, 4)) != std::string::npos;
    if (close) hint += (hint.empty() ? "" : ", ") + p;
  }
  std::string all;
  for (const auto& p : preset_names()) all += (all.empty() ? "" : ", ") + p;
  throw ConfigError("unknown preset '" + name + "'" + (hint.empty() ? "" : "; did you mean " + hint + "?") +
                    " (available: " + all + ")");
}

std::vector<ClaimResult> evaluate_claims(const std::string& name, const ExperimentOutcome& outcome) {
  if (name == "table1-grid") return table1_claims(outcome);
  if (name == "fig-spectra") return spectra_claims(outcome);
  if (name == "teacher-free-sweep") return sweep_claims(outcome);
  if (name == "linear-map") return linear_map_claims(outcome);
  if (name == "bound-audit") return bound_claims(outcome);
  return {};
}

}  // namespace xtkd
