#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "xtkd/error.hpp"
#include "xtkd/models.hpp"

using namespace xtkd;

TEST_CASE("mlp_new is deterministic in its seed") {
  const MlpNet a = mlp_new({4, 8, 8, 2}, 2, {InitScheme::UniformFanIn, 7});
  const MlpNet b = mlp_new({4, 8, 8, 2}, 2, {InitScheme::UniformFanIn, 7});
  const MlpNet c = mlp_new({4, 8, 8, 2}, 2, {InitScheme::UniformFanIn, 8});
  CHECK(a == b);
  CHECK(a.parameters() != c.parameters());
}

TEST_CASE("uniform fan-in init respects its bound") {
  const MlpNet net = mlp_new({9, 16, 4}, 1, {InitScheme::UniformFanIn, 3});
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.widths()[l]));
    CHECK(max_abs(net.weight(l)) <= bound);
    CHECK(max_abs(net.bias(l)) <= bound);
  }
}

TEST_CASE("mlp_new rejects bad shapes and cuts") {
  CHECK_THROWS_AS(mlp_new({4}, 1, {}), ContractError);
  CHECK_THROWS_AS(mlp_new({4, 0, 2}, 1, {}), ContractError);
  CHECK_THROWS_AS(mlp_new({4, 8, 2}, 0, {}), ContractError);
  CHECK_THROWS_AS(mlp_new({4, 8, 2}, 2, {}), ContractError);
}

TEST_CASE("zero init gives zero output") {
  const MlpNet net = mlp_new({3, 5, 2}, 1, {InitScheme::Zero, 0});
  Rng rng(1);
  CHECK(forward(net, testing::random_matrix(rng, 6, 3)) == Matrix(6, 2));
}

TEST_CASE("identity layer without activation encodes to its input") {
  MlpNet net = mlp_new({3, 3, 2}, 1, {InitScheme::Zero, 0});
  net.set_layer(0, Matrix::identity(3), Matrix(1, 3));
  net.set_activation(0, Activation::Identity);
  Rng rng(2);
  const Matrix x = testing::random_matrix(rng, 4, 3);
  CHECK(encode(net, x) == x);
}

TEST_CASE("encode and decode shapes and composition") {
  const MlpNet net = mlp_new({4, 16, 16, 1}, 1, {InitScheme::UniformFanIn, 1});
  Rng rng(3);
  const Matrix x = testing::random_matrix(rng, 8, 4);
  const Matrix z = encode(net, x);
  CHECK(z.rows() == 8);
  CHECK(z.cols() == 16);
  CHECK(decode(net, z).cols() == 1);
  for (std::size_t cut = 1; cut < 3; ++cut) {
    MlpNet n = mlp_new({4, 16, 16, 1}, cut, {InitScheme::UniformFanIn, 1});
    CHECK(decode(n, encode(n, x)) == forward(n, x));
  }
  CHECK_THROWS_AS(encode(net, Matrix(8, 5)), ShapeError);
  CHECK_THROWS_AS(decode(net, Matrix(8, 4)), ShapeError);
}

TEST_CASE("zero features through a zero-bias decoder give zero output") {
  MlpNet net = mlp_new({4, 6, 3}, 1, {InitScheme::UniformFanIn, 5});
  net.set_layer(1, net.weight(1), Matrix(1, 3));
  CHECK(decode(net, Matrix(2, 6)) == Matrix(2, 3));
}

TEST_CASE("frozen nets give identical features on repeated calls") {
  MlpNet net = mlp_new({4, 8, 2}, 1, {InitScheme::UniformFanIn, 11});
  net.freeze();
  Rng rng(4);
  const Matrix x = testing::random_matrix(rng, 5, 4);
  CHECK(encode(net, x) == encode(net, x));
}

TEST_CASE("orthogonal square layer preserves the Frobenius norm before activation") {
  const MlpNet net = mlp_new({6, 6, 2}, 1, {InitScheme::OrthogonalColumns, 9});
  Rng rng(5);
  const Matrix x = testing::random_matrix(rng, 7, 6);
  CHECK(std::abs(frob_norm(matmul_nt(x, net.weight(0))) - frob_norm(x)) < 1e-8);
  CHECK(max_abs(net.bias(0)) == 0.0);
}

TEST_CASE("sgd_step arithmetic and freezing") {
  MlpNet net = mlp_new({1, 1, 1}, 1, {InitScheme::Zero, 0});
  net.set_layer(0, Matrix::scalar(1.0), Matrix::scalar(0.0));
  std::vector<Matrix> grads = {Matrix::scalar(2.0), Matrix::scalar(0.0), Matrix::scalar(0.0),
                               Matrix::scalar(0.0)};
  sgd_step(net, grads, 0.1);
  CHECK(net.weight(0).item() == doctest::Approx(0.8).epsilon(1e-15));

  const MlpNet before = net;
  sgd_step(net, grads, 0.0);
  CHECK(net == before);

  net.freeze();
  CHECK_THROWS_AS(sgd_step(net, grads, 0.1), FrozenError);
  CHECK(net.parameters() == before.parameters());
  CHECK_THROWS_AS(net.set_layer(0, Matrix::scalar(0.0), Matrix::scalar(0.0)), FrozenError);
}

TEST_CASE("sgd_step rejects mismatched gradients") {
  MlpNet net = mlp_new({2, 3, 1}, 1, {InitScheme::UniformFanIn, 1});
  std::vector<Matrix> grads = net.parameters();
  grads[0] = Matrix(2, 3);
  CHECK_THROWS_AS(sgd_step(net, grads, 0.1), ShapeError);
  grads.pop_back();
  CHECK_THROWS(sgd_step(net, grads, 0.1));
}

TEST_CASE("recorded layers match the direct forward pass and pass a gradient check") {
  const MlpNet net = mlp_new({3, 5, 4, 2}, 2, {InitScheme::UniformFanIn, 13});
  Rng rng(6);
  const Matrix x = testing::random_matrix(rng, 4, 3);
  Graph g;
  const ParamNodes pn = add_parameter_leaves(g, net, "s");
  const NodeId xn = g.constant(x);
  const NodeId out = record_layers(g, net, xn, 0, net.num_layers(), &pn);
  g.squared_norm(out);
  Bindings b;
  bind_parameters(b, pn, net);
  g.forward(b);
  CHECK(g.value(out) == forward(net, x));
  CHECK(grad_check(g, b).max_rel_err < 1e-4);
  CHECK(collect_gradients(g.backward(), pn).size() == net.parameters().size());
}

TEST_CASE("checkpoints round-trip exactly") {
  MlpNet net = mlp_new({3, 7, 2}, 1, {InitScheme::UniformFanIn, 21});
  const MlpNet back = from_checkpoint(to_checkpoint(net));
  CHECK(back.parameters() == net.parameters());
  CHECK(back.widths() == net.widths());
  CHECK(back.encoder_cut() == net.encoder_cut());
  CHECK(to_checkpoint(net).rfind("MLP v1\n", 0) == 0);
  CHECK_THROWS(from_checkpoint("MLP v2\n"));
}
