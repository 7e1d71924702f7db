#include "xtkd/models.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "xtkd/error.hpp"
#include "xtkd/linalg.hpp"
#include "xtkd/rng.hpp"

namespace xtkd {

MlpNet::MlpNet(std::vector<std::size_t> widths, std::size_t encoder_cut)
    : widths_(std::move(widths)), encoder_cut_(encoder_cut) {
  if (widths_.size() < 2) throw ContractError("mlp: need at least two layer widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw ContractError("mlp: layer widths must be positive");
  }
  const std::size_t layers = widths_.size() - 1;
  if (encoder_cut_ < 1 || encoder_cut_ >= layers) {
    throw ContractError("mlp: encoder_cut " + std::to_string(encoder_cut_) +
                        " outside [1, " + std::to_string(layers) + ")");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    weights_.emplace_back(widths_[l + 1], widths_[l]);
    biases_.emplace_back(1, widths_[l + 1]);
    activations_.push_back(l + 1 == layers ? Activation::Identity : Activation::Tanh);
  }
}

void MlpNet::set_activation(std::size_t layer, Activation act) { activations_.at(layer) = act; }

void MlpNet::set_layer(std::size_t layer, Matrix weight, Matrix bias) {
  if (frozen_) throw FrozenError("mlp: cannot modify a frozen network");
  require_same_shape(weights_.at(layer), weight, "set_layer weight");
  require_same_shape(biases_.at(layer), bias, "set_layer bias");
  weights_[layer] = std::move(weight);
  biases_[layer] = std::move(bias);
}

std::vector<Matrix> MlpNet::parameters() const {
  std::vector<Matrix> out;
  out.reserve(2 * weights_.size());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

void MlpNet::set_parameters(std::span<const Matrix> params) {
  if (params.size() != 2 * weights_.size()) {
    throw ShapeError("mlp: expected " + std::to_string(2 * weights_.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) set_layer(l, params[2 * l], params[2 * l + 1]);
}

MlpNet mlp_new(std::vector<std::size_t> widths, std::size_t encoder_cut, InitSpec init) {
  MlpNet net(std::move(widths), encoder_cut);
  Rng rng(init.seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix& w = net.weights_[l];
    Matrix& b = net.biases_[l];
    switch (init.scheme) {
      case InitScheme::UniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        w = rng.uniform_matrix(w.rows(), w.cols(), -bound, bound);
        b = rng.uniform_matrix(1, b.cols(), -bound, bound);
        break;
      }
      case InitScheme::OrthogonalColumns: {
        const SvdResult s = svd(rng.normal_matrix(w.rows(), w.cols()));
        w = matmul_nt(s.u, s.v);
        break;
      }
      case InitScheme::Zero:
        break;
    }
  }
  return net;
}

Matrix apply_layers(const MlpNet& net, const Matrix& x, std::size_t first, std::size_t last) {
  if (first > last || last > net.num_layers()) {
    throw BoundsError("mlp: layer range [" + std::to_string(first) + ", " + std::to_string(last) +
                      ") invalid");
  }
  if (first < last && x.cols() != net.widths()[first]) {
    throw ShapeError("mlp: input " + x.shape_string() + " does not match layer width " +
                     std::to_string(net.widths()[first]));
  }
  Matrix h = x;
  for (std::size_t l = first; l < last; ++l) {
    const Matrix& w = net.weight(l);
    const Matrix& b = net.bias(l);
    Matrix z = matmul_nt(h, w);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto row = z.row(i);
      for (std::size_t j = 0; j < z.cols(); ++j) {
        double v = row[j] + b(0, j);
        switch (net.activation(l)) {
          case Activation::Tanh: v = std::tanh(v); break;
          case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
          case Activation::Identity: break;
        }
        row[j] = v;
      }
    }
    h = std::move(z);
  }
  return h;
}

Matrix encode(const MlpNet& net, const Matrix& x) {
  return apply_layers(net, x, 0, net.encoder_cut());
}

Matrix decode(const MlpNet& net, const Matrix& z) {
  return apply_layers(net, z, net.encoder_cut(), net.num_layers());
}

Matrix forward(const MlpNet& net, const Matrix& x) {
  return apply_layers(net, x, 0, net.num_layers());
}

void sgd_step(MlpNet& net, std::span<const Matrix> grads, double lr) {
  if (net.frozen()) throw FrozenError("sgd_step: network is frozen");
  std::vector<Matrix> params = net.parameters();
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: expected " + std::to_string(params.size()) + " gradients, got " +
                     std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "sgd_step");
    auto p = params[i].values();
    auto g = grads[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
  net.set_parameters(params);
}

ParamNodes add_parameter_leaves(Graph& graph, const MlpNet& net, const std::string& prefix) {
  ParamNodes out;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    out.nodes.push_back(graph.leaf(prefix + "W" + std::to_string(l)));
    out.nodes.push_back(graph.leaf(prefix + "b" + std::to_string(l)));
  }
  return out;
}

void bind_parameters(Bindings& bindings, const ParamNodes& nodes, const MlpNet& net) {
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    bindings[nodes.nodes[2 * l]] = net.weight(l);
    bindings[nodes.nodes[2 * l + 1]] = net.bias(l);
  }
}

std::vector<Matrix> collect_gradients(const Gradients& grads, const ParamNodes& nodes) {
  std::vector<Matrix> out;
  out.reserve(nodes.nodes.size());
  for (NodeId id : nodes.nodes) out.push_back(grads.at(id));
  return out;
}

NodeId record_layers(Graph& graph, const MlpNet& net, NodeId input, std::size_t first,
                     std::size_t last, const ParamNodes* params) {
  NodeId h = input;
  for (std::size_t l = first; l < last; ++l) {
    NodeId w = params ? params->nodes[2 * l] : graph.constant(net.weight(l));
    NodeId b = params ? params->nodes[2 * l + 1] : graph.constant(net.bias(l));
    h = graph.affine(h, w, b);
    switch (net.activation(l)) {
      case Activation::Tanh: h = graph.tanh(h); break;
      case Activation::Relu: h = graph.relu(h); break;
      case Activation::Identity: break;
    }
  }
  return h;
}

void write_checkpoint(std::ostream& out, const MlpNet& net) {
  out << "MLP v1\n";
  for (std::size_t i = 0; i < net.widths().size(); ++i) {
    if (i) out << ' ';
    out << net.widths()[i];
  }
  out << '\n' << net.encoder_cut() << '\n';
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    write_text(out, net.weight(l));
    write_text(out, net.bias(l));
  }
}

MlpNet read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "MLP v1") {
    throw ParseError("checkpoint: missing 'MLP v1' header");
  }
  if (!std::getline(in, line)) throw ParseError("checkpoint: missing widths line");
  std::vector<std::size_t> widths;
  {
    std::istringstream ws(line);
    std::size_t w = 0;
    while (ws >> w) widths.push_back(w);
  }
  std::size_t cut = 0;
  if (!(in >> cut)) throw ParseError("checkpoint: missing encoder_cut line");
  MlpNet net(std::move(widths), cut);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix w = read_text(in);
    Matrix b = read_text(in);
    net.set_layer(l, std::move(w), std::move(b));
  }
  return net;
}

std::string to_checkpoint(const MlpNet& net) {
  std::ostringstream os;
  write_checkpoint(os, net);
  return os.str();
}

MlpNet from_checkpoint(const std::string& text) {
  std::istringstream is(text);
  return read_checkpoint(is);
}

}  // namespace xtkd
