#include "xtkd/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "xtkd/error.hpp"
#include "xtkd/rng.hpp"

namespace xtkd {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Depth: return "depth";
    case TaskKind::Classification: return "class";
    case TaskKind::Regression: return "reg";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "depth") return TaskKind::Depth;
  if (text == "class") return TaskKind::Classification;
  if (text == "reg") return TaskKind::Regression;
  throw ConfigError("unknown task '" + text + "' (expected depth, class or reg)");
}

SynthDataset synth_gen(const SynthParams& p) {
  if (p.n == 0 || p.latent_dim == 0 || p.input_dim == 0 || p.classes == 0 || p.out_dim == 0) {
    throw ContractError("synth_gen: sizes must be positive");
  }
  if (p.input_dim < p.latent_dim) throw ContractError("synth_gen: input_dim < latent_dim");
  if (!(p.noise >= 0.0)) throw ContractError("synth_gen: noise must be non-negative");

  Rng rng(p.seed);
  const double lat_scale = 1.0 / std::sqrt(static_cast<double>(p.latent_dim));
  const Matrix w_lift = rng.normal_matrix(p.latent_dim, p.input_dim, lat_scale);
  const Matrix w_depth = rng.normal_matrix(p.latent_dim, p.out_dim, lat_scale);
  const Matrix w_class = rng.normal_matrix(p.latent_dim, p.classes, 1.0);
  const Matrix w_reg = rng.normal_matrix(p.latent_dim, p.out_dim, lat_scale);

  SynthDataset d;
  d.classes = p.classes;
  d.latents = rng.uniform_matrix(p.n, p.latent_dim, -1.0, 1.0);
  d.x = matmul(d.latents, w_lift);
  for (double& v : d.x.values()) v += p.noise * rng.normal();

  d.y_depth = matmul(d.latents, w_depth);
  for (double& v : d.y_depth.values()) v = 1.0 + std::exp(v);

  const Matrix scores = matmul(d.latents, w_class);
  d.y_class.resize(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    auto row = scores.row(i);
    d.y_class[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  d.y_reg = matmul(d.latents, w_reg);
  return d;
}

SynthDataset synth_gen(std::uint64_t seed, std::size_t n, std::size_t latent_dim,
                       std::size_t input_dim, std::size_t classes) {
  SynthParams p;
  p.seed = seed;
  p.n = n;
  p.latent_dim = latent_dim;
  p.input_dim = input_dim;
  p.classes = classes;
  return synth_gen(p);
}

namespace {

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols());
  for (std::size_t i = begin; i < end; ++i) {
    std::copy(m.row(i).begin(), m.row(i).end(), out.row(i - begin).begin());
  }
  return out;
}

}  // namespace

SynthDataset slice_rows(const SynthDataset& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size()) {
    throw BoundsError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                      ") outside dataset of " + std::to_string(data.size()));
  }
  SynthDataset out;
  out.classes = data.classes;
  out.x = rows_of(data.x, begin, end);
  out.latents = rows_of(data.latents, begin, end);
  out.y_depth = rows_of(data.y_depth, begin, end);
  out.y_reg = rows_of(data.y_reg, begin, end);
  out.y_class.assign(data.y_class.begin() + static_cast<std::ptrdiff_t>(begin),
                     data.y_class.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

void write_dataset_csv(std::ostream& out, const SynthDataset& data) {
  std::string sep;
  for (std::size_t j = 0; j < data.x.cols(); ++j, sep = ",") out << sep << "x_" << j;
  for (std::size_t j = 0; j < data.y_depth.cols(); ++j) out << ",ydepth_" << j;
  out << ",yclass";
  for (std::size_t j = 0; j < data.y_reg.cols(); ++j) out << ",yreg_" << j;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    sep.clear();
    for (double v : data.x.row(i)) {
      out << sep << format_double(v);
      sep = ",";
    }
    for (double v : data.y_depth.row(i)) out << ',' << format_double(v);
    out << ',' << data.y_class[i];
    for (double v : data.y_reg.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// SILog

namespace {

std::vector<bool> all_valid(const Matrix& m) { return std::vector<bool>(m.size(), true); }

struct SilogParts {
  double sum_g = 0.0;
  double sum_g2 = 0.0;
  double k = 0.0;
};

SilogParts silog_parts(const Matrix& pred, const Matrix& gt, const std::vector<bool>& valid) {
  require_same_shape(pred, gt, "silog");
  if (valid.size() != pred.size()) throw ShapeError("silog: mask length does not match input");
  SilogParts p;
  auto pv = pred.values();
  auto gv = gt.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!valid[i]) continue;
    if (!(pv[i] > 0.0) || !(gv[i] > 0.0)) throw DomainError("silog: entries must be positive");
    const double g = std::log(pv[i]) - std::log(gv[i]);
    p.sum_g += g;
    p.sum_g2 += g * g;
    p.k += 1.0;
  }
  if (p.k == 0.0) throw ContractError("silog: no valid entries");
  return p;
}

double silog_radicand(const SilogParts& p) {
  return p.sum_g2 / p.k + 0.15 / (p.k * p.k) * p.sum_g * p.sum_g;
}

}  // namespace

double silog_loss(const Matrix& pred, const Matrix& gt, const std::vector<bool>& valid) {
  return 10.0 * std::sqrt(silog_radicand(silog_parts(pred, gt, valid)));
}

double silog_loss(const Matrix& pred, const Matrix& gt) {
  return silog_loss(pred, gt, all_valid(pred));
}

Matrix silog_grad(const Matrix& pred, const Matrix& gt) {
  const SilogParts p = silog_parts(pred, gt, all_valid(pred));
  const double radicand = silog_radicand(p);
  Matrix out(pred.rows(), pred.cols());
  if (radicand <= 0.0) return out;
  // L = 10 sqrt(R): dL/dg_i = (5 / sqrt(R)) (2 g_i / K + 0.3 Σg / K²)
  const double outer = 5.0 / std::sqrt(radicand);
  auto pv = pred.values();
  auto gv = gt.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double g = std::log(pv[i]) - std::log(gv[i]);
    const double dg = outer * (2.0 * g / p.k + 0.3 * p.sum_g / (p.k * p.k));
    ov[i] = dg / pv[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-entropy

namespace {

void check_labels(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("ce: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= logits.cols()) {
      throw ContractError("ce: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(logits.cols()) + ")");
    }
  }
}

// Row-wise log-sum-exp.
double row_lse(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  return mx + std::log(z);
}

}  // namespace

double ce_loss(const Matrix& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    acc += row_lse(row) - row[static_cast<std::size_t>(labels[i])];
  }
  return acc / static_cast<double>(logits.rows());
}

Matrix ce_grad(const Matrix& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  Matrix out(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double lse = row_lse(row);
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) = std::exp(row[j] - lse) * inv_b;
    out(i, static_cast<std::size_t>(labels[i])) -= inv_b;
  }
  return out;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "mse");
  return squared_norm(sub(pred, target)) / static_cast<double>(pred.size());
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
    if (arg == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

// ---------------------------------------------------------------------------
// Depth metrics

MetricsReport depth_metrics(const Matrix& pred, const Matrix& gt, const std::vector<bool>& valid) {
  require_same_shape(pred, gt, "depth_metrics");
  if (valid.size() != pred.size()) throw ShapeError("depth_metrics: mask length mismatch");
  MetricsReport r;
  double t = 0.0;
  double sq_err = 0.0;
  double sq_log = 0.0;
  auto pv = pred.values();
  auto gv = gt.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!valid[i]) continue;
    const double d = pv[i];
    const double ds = gv[i];
    if (!(d > 0.0) || !(ds > 0.0)) throw DomainError("depth_metrics: entries must be positive");
    const double diff = d - ds;
    r.abs_rel += std::abs(diff) / ds;
    r.sq_rel += diff * diff / ds;
    sq_err += diff * diff;
    const double ld = std::log(d) - std::log(ds);
    sq_log += ld * ld;
    const double ratio = std::max(d / ds, ds / d);
    if (ratio < 1.25) r.delta1 += 1.0;
    if (ratio < 1.25 * 1.25) r.delta2 += 1.0;
    if (ratio < 1.25 * 1.25 * 1.25) r.delta3 += 1.0;
    t += 1.0;
  }
  if (t == 0.0) throw ContractError("depth_metrics: no valid entries");
  r.abs_rel /= t;
  r.sq_rel /= t;
  r.rms = std::sqrt(sq_err / t);
  r.rms_log = std::sqrt(sq_log / t);
  r.delta1 /= t;
  r.delta2 /= t;
  r.delta3 /= t;
  return r;
}

MetricsReport depth_metrics(const Matrix& pred, const Matrix& gt) {
  return depth_metrics(pred, gt, all_valid(pred));
}

// ---------------------------------------------------------------------------
// Graph ops

namespace {

class SilogOp final : public Op {
 public:
  std::string_view name() const override { return "silog"; }
  Matrix forward(std::span<const Matrix* const> in) const override {
    return Matrix::scalar(silog_loss(*in[0], *in[1]));
  }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&,
                               const Matrix& g) const override {
    return {scale(silog_grad(*in[0], *in[1]), g.item()), Matrix()};
  }
};

class CrossEntropyOp final : public Op {
 public:
  explicit CrossEntropyOp(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::string_view name() const override { return "cross_entropy"; }
  Matrix forward(std::span<const Matrix* const> in) const override {
    return Matrix::scalar(ce_loss(*in[0], labels_));
  }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&,
                               const Matrix& g) const override {
    return {scale(ce_grad(*in[0], labels_), g.item())};
  }

 private:
  std::vector<int> labels_;
};

}  // namespace

NodeId silog_node(Graph& graph, NodeId pred, const Matrix& gt) {
  return graph.custom(std::make_shared<const SilogOp>(), {pred, graph.constant(gt)});
}

NodeId cross_entropy_node(Graph& graph, NodeId logits, std::vector<int> labels) {
  return graph.custom(std::make_shared<const CrossEntropyOp>(std::move(labels)), {logits});
}

NodeId mse_node(Graph& graph, NodeId pred, const Matrix& target) {
  const double inv = 1.0 / static_cast<double>(target.size());
  return graph.scale(graph.squared_distance(pred, graph.constant(target)), inv);
}

NodeId record_task_loss(Graph& graph, TaskKind task, NodeId output, const SynthDataset& data) {
  switch (task) {
    case TaskKind::Depth: return silog_node(graph, graph.exp(output), data.y_depth);
    case TaskKind::Classification: return cross_entropy_node(graph, output, data.y_class);
    case TaskKind::Regression: return mse_node(graph, output, data.y_reg);
  }
  throw ContractError("unknown task kind");
}

namespace {

Matrix exp_of(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

}  // namespace

double task_loss(TaskKind task, const Matrix& output, const SynthDataset& data) {
  switch (task) {
    case TaskKind::Depth: return silog_loss(exp_of(output), data.y_depth);
    case TaskKind::Classification: return ce_loss(output, data.y_class);
    case TaskKind::Regression: return mse_loss(output, data.y_reg);
  }
  throw ContractError("unknown task kind");
}

std::size_t task_output_dim(TaskKind task, const SynthDataset& data) {
  switch (task) {
    case TaskKind::Depth: return data.y_depth.cols();
    case TaskKind::Classification: return data.classes;
    case TaskKind::Regression: return data.y_reg.cols();
  }
  throw ContractError("unknown task kind");
}

std::vector<std::string> task_metric_names(TaskKind task) {
  switch (task) {
    case TaskKind::Depth:
      return {"val_loss", "abs_rel", "sq_rel", "rms", "rms_log", "delta1", "delta2", "delta3"};
    case TaskKind::Classification: return {"val_loss", "accuracy"};
    case TaskKind::Regression: return {"val_loss"};
  }
  throw ContractError("unknown task kind");
}

std::vector<std::pair<std::string, double>> task_metrics(TaskKind task, const Matrix& output,
                                                         const SynthDataset& data) {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("val_loss", task_loss(task, output, data));
  if (task == TaskKind::Depth) {
    const MetricsReport m = depth_metrics(exp_of(output), data.y_depth);
    out.emplace_back("abs_rel", m.abs_rel);
    out.emplace_back("sq_rel", m.sq_rel);
    out.emplace_back("rms", m.rms);
    out.emplace_back("rms_log", m.rms_log);
    out.emplace_back("delta1", m.delta1);
    out.emplace_back("delta2", m.delta2);
    out.emplace_back("delta3", m.delta3);
  } else if (task == TaskKind::Classification) {
    out.emplace_back("accuracy", accuracy(output, data.y_class));
  }
  return out;
}

}  // namespace xtkd
