#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xtkd/matrix.hpp"

namespace xtkd {

struct NodeId {
  std::uint32_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

using Bindings = std::map<NodeId, Matrix>;
using Gradients = std::map<NodeId, Matrix>;

/// A differentiable operation. Implementations are stateless with respect to
/// the graph: forward() sees the parent values, backward() additionally sees
/// the node's own cached output and the upstream gradient and returns one
/// gradient per parent (an empty matrix means "no contribution").
class Op {
 public:
  virtual ~Op() = default;
  [[nodiscard]] virtual std::string_view name() const = 0;
  [[nodiscard]] virtual Matrix forward(std::span<const Matrix* const> in) const = 0;
  [[nodiscard]] virtual std::vector<Matrix> backward(std::span<const Matrix* const> in,
                                                     const Matrix& out,
                                                     const Matrix& grad_out) const = 0;
  [[nodiscard]] virtual bool has_kinks() const { return false; }
  /// True if a finite-difference probe between two input states straddles a
  /// non-differentiable point of this op (used by grad_check to drop probes).
  [[nodiscard]] virtual bool kink_between(std::span<const Matrix* const> /*a*/,
                                          std::span<const Matrix* const> /*b*/) const {
    return false;
  }
};

/// Tape of matrix operations recorded in topological order.
///
/// Leaves are the bindable inputs/parameters; constants carry a fixed value.
/// The last node added is the root. forward() re-evaluates every node from the
/// current bindings, so one recorded graph serves every training step.
class Graph {
 public:
  NodeId leaf(std::string name = {});
  NodeId constant(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId hadamard(NodeId a, NodeId b);
  /// x · Wᵀ + b with W stored (out x in) and b a 1 x out row broadcast over rows.
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId row_softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  /// ‖a‖_F² as a 1x1 node.
  NodeId squared_norm(NodeId a);
  /// ‖a − b‖_F² as a 1x1 node.
  NodeId squared_distance(NodeId a, NodeId b);

  NodeId custom(std::shared_ptr<const Op> op, std::vector<NodeId> parents);

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] NodeId root() const;
  [[nodiscard]] std::vector<NodeId> leaves() const;
  [[nodiscard]] bool is_leaf(NodeId id) const;
  [[nodiscard]] const std::string& leaf_name(NodeId id) const;
  [[nodiscard]] std::string_view op_name(NodeId id) const;
  [[nodiscard]] const std::vector<NodeId>& parents(NodeId id) const;
  [[nodiscard]] bool has_kinked_ops() const;
  [[nodiscard]] bool kink_between(NodeId id, std::span<const Matrix* const> a,
                                  std::span<const Matrix* const> b) const;

  /// Evaluates every node; returns the root value. Throws MissingInputError if
  /// a leaf is unbound and ShapeError (from the ops) on inconsistent shapes.
  Matrix forward(const Bindings& inputs);
  /// Cached value of a node from the last forward().
  [[nodiscard]] const Matrix& value(NodeId id) const;

  /// Gradient of the (1x1) root with respect to every leaf. Requires a prior
  /// forward(); throws ContractError if the root is not scalar.
  Gradients backward();

 private:
  struct Node {
    std::shared_ptr<const Op> op;  // null for leaves and constants
    std::vector<NodeId> parents;
    Matrix value;
    std::string name;
    bool is_leaf = false;
    bool is_constant = false;
  };

  NodeId push(Node node);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  bool evaluated_ = false;
};

struct GradReport {
  double max_rel_err = 0.0;
  NodeId worst_node{};
  std::size_t worst_row = 0;
  std::size_t worst_col = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Compares backward() with central finite differences over every leaf entry.
/// Per-entry error is |a − f| / max(1e-8, |a| + |f|). Probes straddling a
/// kink of any op are excluded and counted in skipped_kinks.
GradReport grad_check(Graph& graph, const Bindings& inputs, double eps = 1e-5);

}  // namespace xtkd
