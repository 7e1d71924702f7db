#include "xtkd/audit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "xtkd/distill.hpp"
#include "xtkd/linalg.hpp"
#include "xtkd/models.hpp"
#include "xtkd/rng.hpp"
#include "xtkd/tasks.hpp"

namespace xtkd {

SvdAuditReport svd_audit(std::size_t n, std::uint64_t seed) {
  SvdAuditReport rep;
  rep.n = n;
  Rng rng(seed);
  for (std::size_t t = 0; t < n; ++t) {
    const auto rows = static_cast<std::size_t>(1 + rng.next_u64() % 16);
    const auto cols = static_cast<std::size_t>(1 + rng.next_u64() % 16);
    const Matrix a = rng.normal_matrix(rows, cols);
    const SvdResult s = svd(a);
    const Matrix back = truncated_reconstruct(s, s.sigma.size());
    rep.max_recon_err = std::max(rep.max_recon_err, frob_norm(sub(back, a)) / frob_norm(a));
    const std::size_t r = s.sigma.size();
    rep.max_ortho_err = std::max(rep.max_ortho_err,
                                 max_abs_diff(matmul_tn(s.u, s.u), Matrix::identity(r)));
    rep.max_ortho_err = std::max(rep.max_ortho_err,
                                 max_abs_diff(matmul_tn(s.v, s.v), Matrix::identity(r)));
    rep.sorted = rep.sorted && std::is_sorted(s.sigma.rbegin(), s.sigma.rend());
  }
  return rep;
}

namespace {

// Builds a graph around fresh leaves and returns the bindings to check it at.
using Case = std::function<Bindings(Graph&, Rng&)>;

// Reduces a non-scalar node to a scalar with fixed random weights so every
// entry of its gradient is generic.
NodeId weigh(Graph& g, NodeId node, std::size_t rows, std::size_t cols, Rng& rng) {
  return g.sum(g.hadamard(node, g.constant(rng.uniform_matrix(rows, cols, 0.5, 1.5))));
}

// `op` yields a 4x3 node unless `scalar_out`, in which case it is the root.
Case unary(std::function<NodeId(Graph&, NodeId)> op, double lo, double hi, bool scalar_out = false) {
  return [op, lo, hi, scalar_out](Graph& g, Rng& rng) {
    const NodeId a = g.leaf("a");
    const NodeId out = op(g, a);
    if (!scalar_out) weigh(g, out, 4, 3, rng);
    return Bindings{{a, rng.uniform_matrix(4, 3, lo, hi)}};
  };
}

Case binary(std::function<NodeId(Graph&, NodeId, NodeId)> op) {
  return [op](Graph& g, Rng& rng) {
    const NodeId a = g.leaf("a");
    const NodeId b = g.leaf("b");
    weigh(g, op(g, a, b), 4, 3, rng);
    return Bindings{{a, rng.normal_matrix(4, 3)}, {b, rng.normal_matrix(4, 3)}};
  };
}

// Distillation loss on aligned features with a projector leaf in between.
Case distill_case(DistillKind kind, Direction dir) {
  return [kind, dir](Graph& g, Rng& rng) {
    const NodeId zs = g.leaf("zs");
    const NodeId zt = g.leaf("zt");
    const NodeId p = g.leaf("p");
    const bool inv = dir == Direction::Inverted;
    const NodeId a = inv ? zs : g.matmul(zs, p);
    const NodeId b = inv ? g.matmul(zt, p) : zt;
    distill_node(g, kind, a, b);
    return Bindings{{zs, rng.normal_matrix(6, 3)},
                    {zt, rng.normal_matrix(6, 5)},
                    {p, inv ? rng.normal_matrix(5, 3) : rng.normal_matrix(3, 5)}};
  };
}

Case ensemble_case() {
  return [](Graph& g, Rng& rng) {
    const NodeId zs = g.leaf("zs");
    const NodeId zt = g.leaf("zt");
    Bindings bind{{zs, rng.normal_matrix(6, 3)}, {zt, rng.normal_matrix(6, 5)}};
    NodeId acc{};
    for (std::size_t m = 0; m < 3; ++m) {
      const NodeId p = g.leaf("p" + std::to_string(m));
      bind[p] = rng.normal_matrix(5, 3);
      const NodeId term = distill_node(g, DistillKind::FitNets, zs, g.matmul(zt, p));
      acc = m == 0 ? term : g.add(acc, term);
    }
    g.scale(acc, 1.0 / 3.0);
    return bind;
  };
}

Case task_case(TaskKind task) {
  return [task](Graph& g, Rng& rng) {
    SynthParams sp;
    sp.seed = rng.next_u64();
    sp.n = 6;
    const SynthDataset data = synth_gen(sp);
    const NodeId out = g.leaf("out");
    record_task_loss(g, task, out, data);
    return Bindings{{out, rng.normal_matrix(6, task_output_dim(task, data), 0.5)}};
  };
}

Case spectral_case() {
  return [](Graph& g, Rng& rng) {
    const NodeId z = g.leaf("z");
    spectral_node(g, z, 2);
    // A fixed spread of singular values keeps the r = 2 split well separated.
    const SvdResult basis = svd(rng.normal_matrix(6, 4));
    Matrix zv(6, 4);
    const double sig[4] = {4.0, 2.5, 1.2, 0.6};
    for (std::size_t i = 0; i < 4; ++i) {
      const double jitter = 1.0 + 0.1 * rng.uniform();
      for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
          zv(r, c) += sig[i] * jitter * basis.u(r, i) * basis.v(c, i);
        }
      }
    }
    return Bindings{{z, zv}};
  };
}

Case mlp_case() {
  return [](Graph& g, Rng& rng) {
    const MlpNet net = mlp_new({3, 5, 4, 2}, 1, {InitScheme::UniformFanIn, rng.next_u64()});
    const ParamNodes params = add_parameter_leaves(g, net, "w");
    const NodeId x = g.leaf("x");
    const NodeId out = record_layers(g, net, x, 0, net.num_layers(), &params);
    g.squared_distance(out, g.constant(rng.normal_matrix(4, 2)));
    Bindings bind;
    bind_parameters(bind, params, net);
    bind[x] = rng.normal_matrix(4, 3);
    return bind;
  };
}

Case composite_case() {
  return [](Graph& g, Rng& rng) {
    SynthParams sp;
    sp.seed = rng.next_u64();
    sp.n = 6;
    const SynthDataset data = synth_gen(sp);
    const NodeId zs = g.leaf("zs");
    const NodeId w = g.leaf("w");
    const NodeId zt = g.leaf("zt");
    const NodeId p = g.leaf("p");
    const NodeId task = record_task_loss(g, TaskKind::Regression, g.matmul(zs, w), data);
    const NodeId dist = distill_node(g, DistillKind::FitNets, zs, g.matmul(zt, p));
    g.add(task, dist);
    return Bindings{{zs, rng.normal_matrix(6, 3)},
                    {w, rng.normal_matrix(3, data.y_reg.cols())},
                    {zt, rng.normal_matrix(6, 5)},
                    {p, rng.normal_matrix(5, 3)}};
  };
}

}  // namespace

std::vector<GradAuditEntry> grad_audit(std::size_t seeds) {
  struct Named {
    std::string name;
    Case make;
    double threshold;
  };
  const std::vector<Named> cases{
      {"matmul", [](Graph& g, Rng& rng) {
         const NodeId a = g.leaf("a");
         const NodeId b = g.leaf("b");
         weigh(g, g.matmul(a, b), 4, 2, rng);
         return Bindings{{a, rng.normal_matrix(4, 3)}, {b, rng.normal_matrix(3, 2)}};
       }, 1e-4},
      {"transpose", [](Graph& g, Rng& rng) {
         const NodeId a = g.leaf("a");
         weigh(g, g.transpose(a), 3, 4, rng);
         return Bindings{{a, rng.normal_matrix(4, 3)}};
       }, 1e-4},
      {"add", binary([](Graph& g, NodeId a, NodeId b) { return g.add(a, b); }), 1e-4},
      {"sub", binary([](Graph& g, NodeId a, NodeId b) { return g.sub(a, b); }), 1e-4},
      {"hadamard", binary([](Graph& g, NodeId a, NodeId b) { return g.hadamard(a, b); }), 1e-4},
      {"squared_distance", [](Graph& g, Rng& rng) {
         const NodeId a = g.leaf("a");
         const NodeId b = g.leaf("b");
         g.squared_distance(a, b);
         return Bindings{{a, rng.normal_matrix(4, 3)}, {b, rng.normal_matrix(4, 3)}};
       }, 1e-4},
      {"scale", unary([](Graph& g, NodeId a) { return g.scale(a, -1.7); }, -2.0, 2.0), 1e-4},
      {"tanh", unary([](Graph& g, NodeId a) { return g.tanh(a); }, -2.0, 2.0), 1e-4},
      {"relu", unary([](Graph& g, NodeId a) { return g.relu(a); }, -2.0, 2.0), 1e-4},
      {"row_softmax", unary([](Graph& g, NodeId a) { return g.row_softmax(a); }, -2.0, 2.0), 1e-4},
      {"log", unary([](Graph& g, NodeId a) { return g.log(a); }, 0.5, 2.0), 1e-4},
      {"exp", unary([](Graph& g, NodeId a) { return g.exp(a); }, -1.0, 1.0), 1e-4},
      {"sum", unary([](Graph& g, NodeId a) { return g.sum(g.tanh(a)); }, -2.0, 2.0, true), 1e-4},
      {"mean", unary([](Graph& g, NodeId a) { return g.mean(g.tanh(a)); }, -2.0, 2.0, true), 1e-4},
      {"squared_norm",
       unary([](Graph& g, NodeId a) { return g.squared_norm(a); }, -2.0, 2.0, true), 1e-4},
      {"affine", [](Graph& g, Rng& rng) {
         const NodeId x = g.leaf("x");
         const NodeId w = g.leaf("w");
         const NodeId b = g.leaf("b");
         weigh(g, g.affine(x, w, b), 4, 2, rng);
         return Bindings{{x, rng.normal_matrix(4, 3)},
                         {w, rng.normal_matrix(2, 3)},
                         {b, rng.normal_matrix(1, 2)}};
       }, 1e-4},
      {"mlp", mlp_case(), 1e-4},
      {"fitnets/inverted", distill_case(DistillKind::FitNets, Direction::Inverted), 1e-4},
      {"fitnets/traditional", distill_case(DistillKind::FitNets, Direction::Traditional), 1e-4},
      {"at/inverted", distill_case(DistillKind::AT, Direction::Inverted), 1e-4},
      {"at/traditional", distill_case(DistillKind::AT, Direction::Traditional), 1e-4},
      {"pkt/inverted", distill_case(DistillKind::PKT, Direction::Inverted), 1e-4},
      {"pkt/traditional", distill_case(DistillKind::PKT, Direction::Traditional), 1e-4},
      {"ensemble", ensemble_case(), 1e-4},
      {"cross_entropy", task_case(TaskKind::Classification), 1e-4},
      {"silog", task_case(TaskKind::Depth), 1e-4},
      {"mse", task_case(TaskKind::Regression), 1e-4},
      {"task+distill", composite_case(), 1e-4},
      {"spectral_tail", spectral_case(), 1e-3},
  };

  std::vector<GradAuditEntry> out;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradAuditEntry entry;
    entry.name = cases[c].name;
    entry.threshold = cases[c].threshold;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(derive_seed(s, c));
      Graph g;
      const Bindings bind = cases[c].make(g, rng);
      const GradReport rep = grad_check(g, bind);
      entry.max_rel_err = std::max(entry.max_rel_err, rep.max_rel_err);
      entry.skipped_kinks += rep.skipped_kinks;
      ++entry.seeds;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

bool BoundAuditReport::pass() const noexcept {
  return holds == n && std::abs(full_k_slack) <= 1e-10 && std::abs(empty_k_slack) <= 1e-10;
}

namespace {

Matrix force_rank(const Matrix& m, std::size_t rank) {
  return truncated_reconstruct(svd(m), rank);
}

}  // namespace

BoundAuditReport bound_audit(std::size_t n, double tol, std::uint64_t seed) {
  BoundAuditReport rep;
  rep.n = n;
  rep.min_slack = std::numeric_limits<double>::infinity();
  rep.max_slack = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (std::size_t t = 0; t < n; ++t) {
    const Matrix zs = rng.normal_matrix(8, 6);
    const Matrix zt = rng.normal_matrix(8, 10);
    const Projector p =
        Projector::with_weights(Direction::Inverted, 6, 10, force_rank(rng.normal_matrix(10, 6), 3));
    BoundReport b = decoupled_bound(zs, zt, p, tol);
    rep.min_slack = std::min(rep.min_slack, b.slack);
    rep.max_slack = std::max(rep.max_slack, b.slack);
    if (b.holds()) ++rep.holds;
    rep.reports.push_back(b);
  }
  if (n == 0) rep.min_slack = rep.max_slack = 0.0;

  const Matrix zt = rng.normal_matrix(8, 10);
  const Projector full = Projector::with_weights(Direction::Inverted, 6, 10, rng.normal_matrix(10, 6));
  rep.full_k_slack = decoupled_bound(matmul(zt, full.weights), zt, full, tol).slack;
  const Projector zero = Projector::with_weights(Direction::Inverted, 6, 10, Matrix(10, 6));
  rep.empty_k_slack = decoupled_bound(rng.normal_matrix(8, 6), zt, zero, tol).slack;
  return rep;
}

RankAuditReport rank_audit(std::size_t n, double tol, std::uint64_t seed) {
  RankAuditReport rep;
  rep.n = n;
  Rng rng(seed);
  for (std::size_t t = 0; t < n; ++t) {
    const auto m = static_cast<std::size_t>(2 + rng.next_u64() % 9);
    const auto k = static_cast<std::size_t>(2 + rng.next_u64() % 9);
    const auto q = static_cast<std::size_t>(2 + rng.next_u64() % 9);
    const auto ra = static_cast<std::size_t>(1 + rng.next_u64() % std::min(m, k));
    const auto rb = static_cast<std::size_t>(1 + rng.next_u64() % std::min(k, q));
    const Matrix a = force_rank(rng.normal_matrix(m, k), ra);
    const Matrix b = force_rank(rng.normal_matrix(k, q), rb);
    const std::size_t rank_a = effective_rank(singular_values(a), tol);
    const std::size_t rank_b = effective_rank(singular_values(b), tol);
    const std::size_t rank_ab = effective_rank(singular_values(matmul(a, b)), tol);
    if (rank_ab > std::min(rank_a, rank_b)) ++rep.violations;
  }
  return rep;
}

}  // namespace xtkd
