#include "xtkd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "xtkd/error.hpp"

namespace xtkd {

namespace {

using Inputs = std::span<const Matrix* const>;

Matrix ones_like(const Matrix& a, double v = 1.0) { return Matrix(a.rows(), a.cols(), v); }

class MatMulOp final : public Op {
 public:
  std::string_view name() const override { return "matmul"; }
  Matrix forward(Inputs in) const override { return xtkd::matmul(*in[0], *in[1]); }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    return {matmul_nt(g, *in[1]), matmul_tn(*in[0], g)};
  }
};

class TransposeOp final : public Op {
 public:
  std::string_view name() const override { return "transpose"; }
  Matrix forward(Inputs in) const override { return xtkd::transpose(*in[0]); }
  std::vector<Matrix> backward(Inputs, const Matrix&, const Matrix& g) const override {
    return {xtkd::transpose(g)};
  }
};

class AddOp final : public Op {
 public:
  std::string_view name() const override { return "add"; }
  Matrix forward(Inputs in) const override { return xtkd::add(*in[0], *in[1]); }
  std::vector<Matrix> backward(Inputs, const Matrix&, const Matrix& g) const override {
    return {g, g};
  }
};

class SubOp final : public Op {
 public:
  std::string_view name() const override { return "sub"; }
  Matrix forward(Inputs in) const override { return xtkd::sub(*in[0], *in[1]); }
  std::vector<Matrix> backward(Inputs, const Matrix&, const Matrix& g) const override {
    return {g, xtkd::scale(g, -1.0)};
  }
};

class ScaleOp final : public Op {
 public:
  explicit ScaleOp(double s) : s_(s) {}
  std::string_view name() const override { return "scale"; }
  Matrix forward(Inputs in) const override { return xtkd::scale(*in[0], s_); }
  std::vector<Matrix> backward(Inputs, const Matrix&, const Matrix& g) const override {
    return {xtkd::scale(g, s_)};
  }

 private:
  double s_;
};

class HadamardOp final : public Op {
 public:
  std::string_view name() const override { return "hadamard"; }
  Matrix forward(Inputs in) const override { return xtkd::hadamard(*in[0], *in[1]); }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    return {xtkd::hadamard(g, *in[1]), xtkd::hadamard(g, *in[0])};
  }
};

class AffineOp final : public Op {
 public:
  std::string_view name() const override { return "affine"; }
  Matrix forward(Inputs in) const override {
    const Matrix& x = *in[0];
    const Matrix& w = *in[1];
    const Matrix& b = *in[2];
    if (b.rows() != 1 || b.cols() != w.rows()) {
      throw ShapeError("affine: bias " + b.shape_string() + " does not match weight " +
                       w.shape_string());
    }
    Matrix out = matmul_nt(x, w);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto row = out.row(i);
      for (std::size_t j = 0; j < out.cols(); ++j) row[j] += b(0, j);
    }
    return out;
  }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    Matrix gb(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    }
    return {xtkd::matmul(g, *in[1]), matmul_tn(g, *in[0]), std::move(gb)};
  }
};

class TanhOp final : public Op {
 public:
  std::string_view name() const override { return "tanh"; }
  Matrix forward(Inputs in) const override {
    Matrix out = *in[0];
    for (double& v : out.values()) v = std::tanh(v);
    return out;
  }
  std::vector<Matrix> backward(Inputs, const Matrix& out, const Matrix& g) const override {
    Matrix d = g;
    auto dv = d.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= 1.0 - ov[i] * ov[i];
    return {std::move(d)};
  }
};

class ReluOp final : public Op {
 public:
  std::string_view name() const override { return "relu"; }
  Matrix forward(Inputs in) const override {
    Matrix out = *in[0];
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
  }
  // Subgradient at 0 is 0.
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    Matrix d = g;
    auto dv = d.values();
    auto xv = in[0]->values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (!(xv[i] > 0.0)) dv[i] = 0.0;
    }
    return {std::move(d)};
  }
  bool has_kinks() const override { return true; }
  bool kink_between(Inputs a, Inputs b) const override {
    auto av = a[0]->values();
    auto bv = b[0]->values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      if ((av[i] > 0.0) != (bv[i] > 0.0)) return true;
    }
    return false;
  }
};

class RowSoftmaxOp final : public Op {
 public:
  std::string_view name() const override { return "row_softmax"; }
  Matrix forward(Inputs in) const override {
    Matrix out = *in[0];
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto row = out.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double& v : row) {
        v = std::exp(v - mx);
        z += v;
      }
      for (double& v : row) v /= z;
    }
    return out;
  }
  std::vector<Matrix> backward(Inputs, const Matrix& out, const Matrix& g) const override {
    Matrix d(out.rows(), out.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < out.cols(); ++j) dotp += g(i, j) * out(i, j);
      for (std::size_t j = 0; j < out.cols(); ++j) d(i, j) = out(i, j) * (g(i, j) - dotp);
    }
    return {std::move(d)};
  }
};

class LogOp final : public Op {
 public:
  std::string_view name() const override { return "log"; }
  Matrix forward(Inputs in) const override {
    Matrix out = *in[0];
    for (double& v : out.values()) {
      if (!(v > 0.0)) throw DomainError("log: non-positive entry");
      v = std::log(v);
    }
    return out;
  }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    Matrix d = g;
    auto dv = d.values();
    auto xv = in[0]->values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] /= xv[i];
    return {std::move(d)};
  }
};

class ExpOp final : public Op {
 public:
  std::string_view name() const override { return "exp"; }
  Matrix forward(Inputs in) const override {
    Matrix out = *in[0];
    for (double& v : out.values()) v = std::exp(v);
    return out;
  }
  std::vector<Matrix> backward(Inputs, const Matrix& out, const Matrix& g) const override {
    return {xtkd::hadamard(g, out)};
  }
};

class SumOp final : public Op {
 public:
  std::string_view name() const override { return "sum"; }
  Matrix forward(Inputs in) const override { return Matrix::scalar(xtkd::sum(*in[0])); }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    return {ones_like(*in[0], g.item())};
  }
};

class MeanOp final : public Op {
 public:
  std::string_view name() const override { return "mean"; }
  Matrix forward(Inputs in) const override {
    return Matrix::scalar(xtkd::sum(*in[0]) / static_cast<double>(in[0]->size()));
  }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    return {ones_like(*in[0], g.item() / static_cast<double>(in[0]->size()))};
  }
};

class SquaredNormOp final : public Op {
 public:
  std::string_view name() const override { return "squared_norm"; }
  Matrix forward(Inputs in) const override { return Matrix::scalar(xtkd::squared_norm(*in[0])); }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    return {xtkd::scale(*in[0], 2.0 * g.item())};
  }
};

class SquaredDistanceOp final : public Op {
 public:
  std::string_view name() const override { return "squared_distance"; }
  Matrix forward(Inputs in) const override {
    return Matrix::scalar(xtkd::squared_norm(xtkd::sub(*in[0], *in[1])));
  }
  std::vector<Matrix> backward(Inputs in, const Matrix&, const Matrix& g) const override {
    Matrix d = xtkd::scale(xtkd::sub(*in[0], *in[1]), 2.0 * g.item());
    Matrix neg = xtkd::scale(d, -1.0);
    return {std::move(d), std::move(neg)};
  }
};

template <class T, class... Args>
std::shared_ptr<const Op> make_op(Args&&... args) {
  return std::make_shared<const T>(std::forward<Args>(args)...);
}


}  // namespace

NodeId Graph::push(Node node) {
  for (NodeId p : node.parents) check(p);
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw BoundsError("graph: unknown node id " + std::to_string(id.index));
  }
}

NodeId Graph::leaf(std::string name) {
  Node n;
  n.is_leaf = true;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::constant(Matrix value) {
  Node n;
  n.is_constant = true;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) { return custom(make_op<MatMulOp>(), {a, b}); }
NodeId Graph::transpose(NodeId a) { return custom(make_op<TransposeOp>(), {a}); }
NodeId Graph::add(NodeId a, NodeId b) { return custom(make_op<AddOp>(), {a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return custom(make_op<SubOp>(), {a, b}); }
NodeId Graph::scale(NodeId a, double s) { return custom(make_op<ScaleOp>(s), {a}); }
NodeId Graph::hadamard(NodeId a, NodeId b) { return custom(make_op<HadamardOp>(), {a, b}); }
NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  return custom(make_op<AffineOp>(), {x, w, b});
}
NodeId Graph::tanh(NodeId a) { return custom(make_op<TanhOp>(), {a}); }
NodeId Graph::relu(NodeId a) { return custom(make_op<ReluOp>(), {a}); }
NodeId Graph::row_softmax(NodeId a) { return custom(make_op<RowSoftmaxOp>(), {a}); }
NodeId Graph::log(NodeId a) { return custom(make_op<LogOp>(), {a}); }
NodeId Graph::exp(NodeId a) { return custom(make_op<ExpOp>(), {a}); }
NodeId Graph::sum(NodeId a) { return custom(make_op<SumOp>(), {a}); }
NodeId Graph::mean(NodeId a) { return custom(make_op<MeanOp>(), {a}); }
NodeId Graph::squared_norm(NodeId a) { return custom(make_op<SquaredNormOp>(), {a}); }
NodeId Graph::squared_distance(NodeId a, NodeId b) {
  return custom(make_op<SquaredDistanceOp>(), {a, b});
}

NodeId Graph::custom(std::shared_ptr<const Op> op, std::vector<NodeId> parents) {
  if (!op) throw ContractError("graph: null op");
  Node n;
  n.op = std::move(op);
  n.parents = std::move(parents);
  return push(std::move(n));
}

NodeId Graph::root() const {
  if (nodes_.empty()) throw ContractError("graph: empty graph has no root");
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::vector<NodeId> Graph::leaves() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

bool Graph::is_leaf(NodeId id) const {
  check(id);
  return nodes_[id.index].is_leaf;
}

const std::string& Graph::leaf_name(NodeId id) const {
  check(id);
  return nodes_[id.index].name;
}

std::string_view Graph::op_name(NodeId id) const {
  check(id);
  const Node& n = nodes_[id.index];
  if (n.is_leaf) return "leaf";
  if (n.is_constant) return "constant";
  return n.op->name();
}

const std::vector<NodeId>& Graph::parents(NodeId id) const {
  check(id);
  return nodes_[id.index].parents;
}

bool Graph::has_kinked_ops() const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [](const Node& n) { return n.op && n.op->has_kinks(); });
}

bool Graph::kink_between(NodeId id, std::span<const Matrix* const> a,
                         std::span<const Matrix* const> b) const {
  check(id);
  const Node& n = nodes_[id.index];
  return n.op && n.op->has_kinks() && n.op->kink_between(a, b);
}

const Matrix& Graph::value(NodeId id) const {
  check(id);
  if (!evaluated_) throw ContractError("graph: value() before forward()");
  return nodes_[id.index].value;
}

Matrix Graph::forward(const Bindings& inputs) {
  if (nodes_.empty()) throw ContractError("graph: forward on empty graph");
  evaluated_ = false;
  std::vector<const Matrix*> args;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.is_constant) continue;
    if (n.is_leaf) {
      auto it = inputs.find(NodeId{static_cast<std::uint32_t>(i)});
      if (it == inputs.end()) {
        throw MissingInputError("graph: leaf " + std::to_string(i) +
                                (n.name.empty() ? std::string() : " ('" + n.name + "')") +
                                " is unbound");
      }
      n.value = it->second;
      continue;
    }
    args.clear();
    for (NodeId p : n.parents) args.push_back(&nodes_[p.index].value);
    n.value = n.op->forward(args);
  }
  evaluated_ = true;
  return nodes_.back().value;
}

Gradients Graph::backward() {
  if (!evaluated_) throw ContractError("graph: backward() before forward()");
  const Matrix& root_value = nodes_.back().value;
  if (!root_value.is_scalar()) {
    throw ContractError("graph: backward needs a 1x1 root, got " + root_value.shape_string());
  }
  std::vector<Matrix> grads(nodes_.size());
  grads.back() = Matrix::scalar(1.0);
  std::vector<const Matrix*> args;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || n.is_constant || grads[i].empty()) continue;
    args.clear();
    for (NodeId p : n.parents) args.push_back(&nodes_[p.index].value);
    std::vector<Matrix> pg = n.op->backward(args, n.value, grads[i]);
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      if (k >= pg.size() || pg[k].empty()) continue;
      const std::size_t p = n.parents[k].index;
      if (nodes_[p].is_constant) continue;
      if (grads[p].empty()) {
        grads[p] = std::move(pg[k]);
      } else {
        add_in_place(grads[p], pg[k]);
      }
    }
    grads[i] = Matrix();
  }
  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].is_leaf) continue;
    const Matrix& v = nodes_[i].value;
    out.emplace(NodeId{static_cast<std::uint32_t>(i)},
                grads[i].empty() ? Matrix(v.rows(), v.cols()) : std::move(grads[i]));
  }
  return out;
}

GradReport grad_check(Graph& graph, const Bindings& inputs, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  graph.forward(inputs);
  const Gradients analytic = graph.backward();
  const bool kinked = graph.has_kinked_ops();

  GradReport report;
  Bindings probe = inputs;
  std::vector<Matrix> plus;
  for (const auto& [id, grad] : analytic) {
    Matrix& x = probe.at(id);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double orig = x(r, c);
        x(r, c) = orig + eps;
        const double fp = graph.forward(probe).item();
        if (kinked) {
          plus.clear();
          for (std::uint32_t i = 0; i < graph.size(); ++i) plus.push_back(graph.value(NodeId{i}));
        }
        x(r, c) = orig - eps;
        const double fm = graph.forward(probe).item();
        x(r, c) = orig;

        bool kink = false;
        for (std::uint32_t i = 0; kinked && i < graph.size() && !kink; ++i) {
          const NodeId node{i};
          std::vector<const Matrix*> a;
          std::vector<const Matrix*> b;
          for (NodeId p : graph.parents(node)) {
            a.push_back(&plus[p.index]);
            b.push_back(&graph.value(p));
          }
          kink = graph.kink_between(node, a, b);
        }
        if (kink) {
          ++report.skipped_kinks;
          continue;
        }
        const double fd = (fp - fm) / (2.0 * eps);
        const double an = grad(r, c);
        const double err = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
        ++report.checked;
        if (err > report.max_rel_err) {
          report.max_rel_err = err;
          report.worst_node = id;
          report.worst_row = r;
          report.worst_col = c;
        }
      }
    }
  }
  graph.forward(inputs);
  return report;
}

}  // namespace xtkd
