#include "xtkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <memory>
#include <ostream>

#include "xtkd/csv.hpp"
#include "xtkd/error.hpp"
#include "xtkd/rng.hpp"

namespace xtkd {

std::string to_string(DistillKind kind) {
  switch (kind) {
    case DistillKind::FitNets: return "fitnets";
    case DistillKind::AT: return "at";
    case DistillKind::PKT: return "pkt";
    case DistillKind::Ensemble: return "ensemble";
  }
  return "?";
}

DistillKind parse_distill_kind(const std::string& text) {
  if (text == "fitnets") return DistillKind::FitNets;
  if (text == "at") return DistillKind::AT;
  if (text == "pkt") return DistillKind::PKT;
  if (text == "ensemble") return DistillKind::Ensemble;
  throw ConfigError("unknown distill method '" + text + "' (fitnets, at, pkt, ensemble)");
}

namespace {

constexpr double kNormFloor = 1e-12;
constexpr double kProbFloor = 1e-12;

// Row-wise x / max(‖x‖, floor), keeping the norms for the backward pass.
struct RowNormalized {
  Matrix unit;
  std::vector<double> norms;
};

RowNormalized normalize_rows(const Matrix& x) {
  RowNormalized out{Matrix(x.rows(), x.cols()), std::vector<double>(x.rows())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (double v : x.row(i)) sq += v * v;
    const double n = std::max(std::sqrt(sq), kNormFloor);
    out.norms[i] = n;
    auto dst = out.unit.row(i);
    auto src = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j] / n;
  }
  return out;
}

// Pullback of normalize_rows: d/dx of (x / ‖x‖) applied to d_unit.
Matrix normalize_rows_vjp(const RowNormalized& fwd, const Matrix& d_unit) {
  Matrix out(d_unit.rows(), d_unit.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const auto u = fwd.unit.row(i);
    const auto du = d_unit.row(i);
    const double n = fwd.norms[i];
    auto dst = out.row(i);
    if (n <= kNormFloor) {
      for (std::size_t j = 0; j < out.cols(); ++j) dst[j] = du[j] / n;
      continue;
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < out.cols(); ++j) dot += u[j] * du[j];
    for (std::size_t j = 0; j < out.cols(); ++j) dst[j] = (du[j] - u[j] * dot) / n;
  }
  return out;
}

RowNormalized attention_maps(const Matrix& a) { return normalize_rows(hadamard(a, a)); }

Matrix attention_vjp(const Matrix& a, const RowNormalized& maps, const Matrix& d_maps) {
  const Matrix d_sq = normalize_rows_vjp(maps, d_maps);
  return scale(hadamard(d_sq, a), 2.0);
}

// Off-diagonal affinity distribution of one side: q_ij = s_ij / S_i with
// s_ij = max((x_i·x_j + 1) / 2, floor); the diagonal stays zero.
struct Affinity {
  RowNormalized rows;
  Matrix s;
  Matrix q;
  std::vector<double> row_sums;
};

Affinity affinity(const Matrix& a) {
  if (a.rows() < 2) throw ContractError("pkt: batch must have at least 2 rows");
  Affinity f{normalize_rows(a), Matrix(), Matrix(), {}};
  const std::size_t b = a.rows();
  f.s = Matrix(b, b);
  f.q = Matrix(b, b);
  f.row_sums.assign(b, 0.0);
  const Matrix c = matmul_nt(f.rows.unit, f.rows.unit);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      f.s(i, j) = std::max((c(i, j) + 1.0) / 2.0, kProbFloor);
      f.row_sums[i] += f.s(i, j);
    }
    for (std::size_t j = 0; j < b; ++j) f.q(i, j) = f.s(i, j) / f.row_sums[i];
  }
  return f;
}

// Pulls dL/dq back to the raw features, given the row-sum constraint of q.
Matrix affinity_vjp(const Affinity& f, const Matrix& d_q) {
  const std::size_t b = f.q.rows();
  Matrix d_c(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < b; ++j) inner += f.q(i, j) * d_q(i, j);
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      const double raw = (f.s(i, j) > kProbFloor) ? 1.0 : 0.0;
      d_c(i, j) = raw * (d_q(i, j) - inner) / f.row_sums[i] / 2.0;
    }
  }
  const Matrix d_unit = matmul(add(d_c, transpose(d_c)), f.rows.unit);
  return normalize_rows_vjp(f.rows, d_unit);
}

}  // namespace

double fitnets_loss(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "fitnets");
  return squared_norm(sub(a, b)) / static_cast<double>(a.size());
}

std::pair<Matrix, Matrix> fitnets_vjp(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "fitnets");
  Matrix d = scale(sub(a, b), 2.0 / static_cast<double>(a.size()));
  Matrix nd = scale(d, -1.0);
  return {std::move(d), std::move(nd)};
}

double at_loss(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "at");
  return fitnets_loss(attention_maps(a).unit, attention_maps(b).unit);
}

std::pair<Matrix, Matrix> at_vjp(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "at");
  const RowNormalized ma = attention_maps(a);
  const RowNormalized mb = attention_maps(b);
  auto [da, db] = fitnets_vjp(ma.unit, mb.unit);
  return {attention_vjp(a, ma, da), attention_vjp(b, mb, db)};
}

double pkt_loss(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "pkt");
  const Affinity fa = affinity(a);
  const Affinity fb = affinity(b);
  const std::size_t n = a.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = fb.q(i, j);
      total += p * (std::log(p) - std::log(fa.q(i, j)));
    }
  }
  return total / static_cast<double>(n);
}

std::pair<Matrix, Matrix> pkt_vjp(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "pkt");
  const Affinity fa = affinity(a);
  const Affinity fb = affinity(b);
  const std::size_t n = a.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix d_qa(n, n);
  Matrix d_qb(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = fb.q(i, j);
      const double q = fa.q(i, j);
      d_qa(i, j) = -inv_n * p / q;
      d_qb(i, j) = inv_n * (std::log(p) + 1.0 - std::log(q));
    }
  }
  return {affinity_vjp(fa, d_qa), affinity_vjp(fb, d_qb)};
}

double distill_loss(const DistillMethod& m, const Matrix& a, const Matrix& b) {
  switch (m.kind) {
    case DistillKind::FitNets:
    case DistillKind::Ensemble: return fitnets_loss(a, b);
    case DistillKind::AT: return at_loss(a, b);
    case DistillKind::PKT: return pkt_loss(a, b);
  }
  throw ContractError("distill_loss: unknown kind");
}

double distill_loss(const DistillMethod& m, std::span<const std::pair<Matrix, Matrix>> pairs) {
  if (pairs.empty()) throw ContractError("distill_loss: no aligned pairs");
  if (m.kind != DistillKind::Ensemble) {
    if (pairs.size() != 1) throw ContractError("distill_loss: only ensembles take several pairs");
    return distill_loss(m, pairs[0].first, pairs[0].second);
  }
  double total = 0.0;
  for (const auto& [a, b] : pairs) total += fitnets_loss(a, b);
  return total / static_cast<double>(pairs.size());
}

namespace {

class DistillOp final : public Op {
 public:
  explicit DistillOp(DistillKind kind) : kind_(kind) {}
  std::string_view name() const override {
    switch (kind_) {
      case DistillKind::AT: return "at";
      case DistillKind::PKT: return "pkt";
      default: return "fitnets";
    }
  }
  Matrix forward(std::span<const Matrix* const> in) const override {
    return Matrix::scalar(distill_loss(DistillMethod{kind_}, *in[0], *in[1]));
  }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&,
                               const Matrix& g) const override {
    std::pair<Matrix, Matrix> d;
    switch (kind_) {
      case DistillKind::AT: d = at_vjp(*in[0], *in[1]); break;
      case DistillKind::PKT: d = pkt_vjp(*in[0], *in[1]); break;
      default: d = fitnets_vjp(*in[0], *in[1]); break;
    }
    return {scale(d.first, g.item()), scale(d.second, g.item())};
  }

 private:
  DistillKind kind_;
};

}  // namespace

NodeId distill_node(Graph& graph, DistillKind kind, NodeId a, NodeId b) {
  return graph.custom(std::make_shared<const DistillOp>(kind), {a, b});
}

double total_loss(double task, double distill) {
  if (!std::isfinite(task) || !std::isfinite(distill)) {
    throw NumericError("total_loss: non-finite term (task=" + format_double(task) +
                       ", distill=" + format_double(distill) + ")");
  }
  return task + distill;
}

double RunRecord::final_metric(const std::string& name) const {
  if (rows.empty()) throw ContractError("final_metric: run has no rows");
  if (name == "task_loss") return rows.back().task_loss;
  if (name == "distill_loss") return rows.back().distill_loss;
  if (name == "total_loss") return rows.back().total_loss;
  const auto it = std::find(metric_names.begin(), metric_names.end(), name);
  if (it == metric_names.end()) throw ContractError("final_metric: no metric '" + name + "'");
  return rows.back().metrics[static_cast<std::size_t>(it - metric_names.begin())];
}

void write_run_csv(std::ostream& out, const RunRecord& record) {
  const std::size_t width = record.rows.empty() ? 0 : record.rows.front().sigma.size();
  out << "epoch,task_loss,distill_loss,total_loss";
  for (const auto& name : record.metric_names) out << ',' << name;
  for (std::size_t i = 0; i < width; ++i) out << ",sigma_" << i;
  out << '\n';
  for (const auto& row : record.rows) {
    out << row.epoch << ',' << format_double(row.task_loss) << ','
        << format_double(row.distill_loss) << ',' << format_double(row.total_loss);
    for (double v : row.metrics) out << ',' << format_double(v);
    for (double v : row.sigma) out << ',' << format_double(v);
    out << '\n';
  }
}

RunRecord read_run_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  const std::vector<std::string> fixed{"epoch", "task_loss", "distill_loss", "total_loss"};
  if (t.header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), t.header.begin())) {
    throw ParseError("run csv: unexpected header");
  }
  RunRecord rec;
  std::size_t sigma_start = t.header.size();
  for (std::size_t c = fixed.size(); c < t.header.size(); ++c) {
    if (t.header[c].rfind("sigma_", 0) == 0) {
      sigma_start = c;
      break;
    }
    rec.metric_names.push_back(t.header[c]);
  }
  for (const auto& cells : t.rows) {
    EpochRow row;
    row.epoch = static_cast<std::size_t>(csv::to_integer(cells[0]));
    row.task_loss = csv::to_double(cells[1]);
    row.distill_loss = csv::to_double(cells[2]);
    row.total_loss = csv::to_double(cells[3]);
    for (std::size_t c = fixed.size(); c < sigma_start; ++c) row.metrics.push_back(csv::to_double(cells[c]));
    for (std::size_t c = sigma_start; c < cells.size(); ++c) row.sigma.push_back(csv::to_double(cells[c]));
    rec.rows.push_back(std::move(row));
  }
  return rec;
}

namespace {

std::vector<double> metric_values(TaskKind task, const Matrix& output, const SynthDataset& data) {
  std::vector<double> out;
  for (const auto& [name, value] : task_metrics(task, output, data)) out.push_back(value);
  return out;
}

bool should_record(std::size_t epoch, std::size_t last, std::size_t every) {
  return epoch == last || (every > 0 && epoch % every == 0);
}

// Stream ids for derive_seed; kept apart so adding a projector never shifts
// another run component's draws.
constexpr std::uint64_t kProjectorStream = 1000;

}  // namespace

TrainResult train_run(MlpNet& student, const MlpNet* teacher, const SynthDataset& train,
                      const SynthDataset& val, const TrainOptions& opts) {
  if (student.frozen()) throw FrozenError("train_run: student is frozen");
  if (opts.method && teacher == nullptr) throw ContractError("train_run: method needs a teacher");
  if (teacher != nullptr && !teacher->frozen()) {
    throw FrozenError("train_run: teacher must be frozen before training");
  }
  if (opts.method && opts.method->ensemble_size == 0) {
    throw ContractError("train_run: ensemble_size must be at least 1");
  }
  if (train.size() == 0 || val.size() == 0) throw ContractError("train_run: empty dataset");
  if (student.output_dim() != task_output_dim(opts.task, train)) {
    throw ShapeError("train_run: student output width " + std::to_string(student.output_dim()) +
                     " does not fit task " + to_string(opts.task));
  }

  TrainResult result;
  result.record.config_hash = opts.config_hash;
  result.record.seed = opts.seed;
  result.record.metric_names = task_metric_names(opts.task);
  result.trace.tol = opts.rank_tol;

  Graph g;
  const ParamNodes params = add_parameter_leaves(g, student, "student");
  const NodeId x = g.constant(train.x);
  const NodeId zs = record_layers(g, student, x, 0, student.encoder_cut(), &params);
  const NodeId out = record_layers(g, student, zs, student.encoder_cut(), student.num_layers(), &params);
  NodeId total = record_task_loss(g, opts.task, out, train);

  std::vector<NodeId> proj_nodes;
  std::optional<NodeId> distill;
  if (opts.method) {
    const Matrix zt_value = encode(*teacher, train.x);
    const NodeId zt = g.constant(zt_value);
    const std::size_t members =
        opts.method->kind == DistillKind::Ensemble ? opts.method->ensemble_size : 1;
    std::vector<NodeId> terms;
    for (std::size_t m = 0; m < members; ++m) {
      const InitSpec init{InitScheme::UniformFanIn, derive_seed(opts.seed, kProjectorStream + m)};
      result.projectors.push_back(
          Projector::make(opts.direction, student.feature_dim(), teacher->feature_dim(), init));
      const NodeId p = g.leaf("projector_" + std::to_string(m));
      proj_nodes.push_back(p);
      const bool inverted = opts.direction == Direction::Inverted;
      const NodeId a = inverted ? zs : g.matmul(zs, p);
      const NodeId b = inverted ? g.matmul(zt, p) : zt;
      const DistillKind kind =
          opts.method->kind == DistillKind::Ensemble ? DistillKind::FitNets : opts.method->kind;
      terms.push_back(distill_node(g, kind, a, b));
    }
    NodeId acc = terms.front();
    for (std::size_t m = 1; m < terms.size(); ++m) acc = g.add(acc, terms[m]);
    if (terms.size() > 1) acc = g.scale(acc, 1.0 / static_cast<double>(terms.size()));
    distill = g.scale(acc, opts.distill_weight);
  }

  auto skips = std::make_shared<SpectralSkips>();
  std::optional<NodeId> spectral;
  if (opts.spectral_r) {
    spectral = g.scale(spectral_node(g, zs, *opts.spectral_r, skips), opts.spectral_weight);
  }

  const NodeId task_node = total;
  std::optional<NodeId> aux;
  if (distill && spectral) {
    aux = g.add(*distill, *spectral);
  } else if (distill) {
    aux = distill;
  } else if (spectral) {
    aux = spectral;
  }
  if (aux) total = g.add(task_node, *aux);

  if (!result.projectors.empty()) track_spectrum(result.projectors.front(), 0, result.trace);

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    Bindings bind;
    bind_parameters(bind, params, student);
    for (std::size_t m = 0; m < proj_nodes.size(); ++m) {
      bind[proj_nodes[m]] = result.projectors[m].weights;
    }
    g.forward(bind);
    const double task_value = g.value(task_node).item();
    const double aux_value = aux ? g.value(*aux).item() : 0.0;
    const double total_value = total_loss(task_value, aux_value);

    const Gradients grads = g.backward();
    sgd_step(student, collect_gradients(grads, params), opts.lr);
    for (std::size_t m = 0; m < proj_nodes.size(); ++m) {
      Matrix& w = result.projectors[m].weights;
      w = sub(w, scale(grads.at(proj_nodes[m]), opts.lr));
    }

    if (!should_record(epoch, opts.epochs, opts.record_every)) continue;
    EpochRow row;
    row.epoch = epoch;
    row.task_loss = task_value;
    row.distill_loss = aux_value;
    row.total_loss = total_value;
    row.metrics = metric_values(opts.task, forward(student, val.x), val);
    if (!result.projectors.empty()) {
      track_spectrum(result.projectors.front(), epoch, result.trace);
      row.sigma = result.trace.spectra.back();
    }
    result.record.rows.push_back(std::move(row));
  }
  result.record.spectral_skips = skips->count;
  return result;
}

TrainResult linear_map_experiment(const MlpNet& encoder_net, const MlpNet& decoder_net,
                                  const SynthDataset& train, const SynthDataset& val,
                                  const LinearMapOptions& opts) {
  if (!encoder_net.frozen() || !decoder_net.frozen()) {
    throw FrozenError("linear_map_experiment: encoder and decoder must be frozen");
  }
  if (decoder_net.output_dim() != task_output_dim(opts.task, train)) {
    throw ShapeError("linear_map_experiment: decoder output does not fit task " +
                     to_string(opts.task));
  }
  const std::size_t d_in = encoder_net.feature_dim();
  const std::size_t d_out = decoder_net.feature_dim();

  TrainResult result;
  result.record.config_hash = opts.config_hash;
  result.record.seed = opts.seed;
  result.record.metric_names = task_metric_names(opts.task);
  if (opts.initial_projector) {
    result.projectors.push_back(
        Projector::with_weights(Direction::Inverted, d_out, d_in, *opts.initial_projector));
  } else {
    const InitSpec init{InitScheme::UniformFanIn, derive_seed(opts.seed, kProjectorStream)};
    result.projectors.push_back(Projector::make(Direction::Inverted, d_out, d_in, init));
  }
  Projector& proj = result.projectors.front();

  Graph g;
  const NodeId x = g.constant(encode(encoder_net, train.x));
  const NodeId p = g.leaf("projector");
  const NodeId z = g.matmul(x, p);
  const NodeId out =
      record_layers(g, decoder_net, z, decoder_net.encoder_cut(), decoder_net.num_layers(), nullptr);
  const NodeId loss = record_task_loss(g, opts.task, out, train);
  const Matrix val_features = encode(encoder_net, val.x);

  for (std::size_t epoch = 0; epoch <= opts.epochs; ++epoch) {
    g.forward(Bindings{{p, proj.weights}});
    const double task_value = g.value(loss).item();
    if (should_record(epoch, opts.epochs, opts.record_every) || epoch == 0) {
      EpochRow row;
      row.epoch = epoch;
      row.task_loss = task_value;
      row.total_loss = total_loss(task_value, 0.0);
      row.metrics = metric_values(opts.task, decode(decoder_net, matmul(val_features, proj.weights)), val);
      track_spectrum(proj, epoch, result.trace);
      row.sigma = result.trace.spectra.back();
      result.record.rows.push_back(std::move(row));
    }
    if (epoch == opts.epochs) break;
    const Gradients grads = g.backward();
    proj.weights = sub(proj.weights, scale(grads.at(p), opts.lr));
  }
  return result;
}

}  // namespace xtkd
