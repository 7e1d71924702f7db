#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xtkd/autodiff.hpp"
#include "xtkd/matrix.hpp"

namespace xtkd {

enum class Activation { Identity, Tanh, Relu };

enum class InitScheme {
  UniformFanIn,       // W, b ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in))
  OrthogonalColumns,  // W with orthonormal rows or columns, zero bias
  Zero,               // all parameters zero (test hook)
};

struct InitSpec {
  InitScheme scheme = InitScheme::UniformFanIn;
  std::uint64_t seed = 0;
};

/// Fully connected network. Layer l maps width l to width l+1 with weight
/// W_l (width_{l+1} x width_l) and bias b_l (1 x width_{l+1}). Hidden layers
/// use tanh and the output layer is linear unless overridden. The first
/// `encoder_cut` layers form the encoder; their output is the feature matrix.
class MlpNet {
 public:
  MlpNet(std::vector<std::size_t> widths, std::size_t encoder_cut);

  [[nodiscard]] const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  [[nodiscard]] std::size_t num_layers() const noexcept { return weights_.size(); }
  [[nodiscard]] std::size_t encoder_cut() const noexcept { return encoder_cut_; }
  [[nodiscard]] std::size_t input_dim() const noexcept { return widths_.front(); }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return widths_[encoder_cut_]; }
  [[nodiscard]] std::size_t output_dim() const noexcept { return widths_.back(); }

  [[nodiscard]] bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

  [[nodiscard]] const Matrix& weight(std::size_t layer) const { return weights_.at(layer); }
  [[nodiscard]] const Matrix& bias(std::size_t layer) const { return biases_.at(layer); }
  [[nodiscard]] Activation activation(std::size_t layer) const { return activations_.at(layer); }
  void set_activation(std::size_t layer, Activation act);

  /// Replaces layer parameters; shapes must match. FrozenError on frozen nets.
  void set_layer(std::size_t layer, Matrix weight, Matrix bias);

  /// Parameters in the order W_0, b_0, W_1, b_1, ...
  [[nodiscard]] std::vector<Matrix> parameters() const;
  void set_parameters(std::span<const Matrix> params);

  bool operator==(const MlpNet&) const = default;

 private:
  friend MlpNet mlp_new(std::vector<std::size_t>, std::size_t, InitSpec);

  std::vector<std::size_t> widths_;
  std::size_t encoder_cut_;
  std::vector<Matrix> weights_;
  std::vector<Matrix> biases_;
  std::vector<Activation> activations_;
  bool frozen_ = false;
};

/// Builds a deterministic network. ContractError if fewer than two widths, a
/// zero width, or encoder_cut outside [1, num_layers).
MlpNet mlp_new(std::vector<std::size_t> widths, std::size_t encoder_cut, InitSpec init);

/// Layers [first, last) applied to x.
Matrix apply_layers(const MlpNet& net, const Matrix& x, std::size_t first, std::size_t last);
Matrix encode(const MlpNet& net, const Matrix& x);
Matrix decode(const MlpNet& net, const Matrix& z);
Matrix forward(const MlpNet& net, const Matrix& x);

/// w <- w - lr * g for every parameter (gradients ordered as parameters()).
/// FrozenError on a frozen net, ShapeError on mismatched gradients.
void sgd_step(MlpNet& net, std::span<const Matrix> grads, double lr);

/// Graph leaves for a network's parameters, in parameters() order.
struct ParamNodes {
  std::vector<NodeId> nodes;
};

/// Records layers [first, last) on the graph starting from `input`. If
/// `params` is null the weights are inserted as constants (frozen use);
/// otherwise they are taken from params->nodes.
NodeId record_layers(Graph& graph, const MlpNet& net, NodeId input, std::size_t first,
                     std::size_t last, const ParamNodes* params);
/// Adds one leaf per parameter of `net`.
ParamNodes add_parameter_leaves(Graph& graph, const MlpNet& net, const std::string& prefix);
void bind_parameters(Bindings& bindings, const ParamNodes& nodes, const MlpNet& net);
std::vector<Matrix> collect_gradients(const Gradients& grads, const ParamNodes& nodes);

// Checkpoint: "MLP v1", widths line, encoder_cut line, then W_0, b_0, ... in
// the matrix text format.
void write_checkpoint(std::ostream& out, const MlpNet& net);
MlpNet read_checkpoint(std::istream& in);
std::string to_checkpoint(const MlpNet& net);
MlpNet from_checkpoint(const std::string& text);

}  // namespace xtkd
