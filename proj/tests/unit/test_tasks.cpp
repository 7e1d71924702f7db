#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "xtkd/csv.hpp"
#include "xtkd/error.hpp"
#include "xtkd/tasks.hpp"

using namespace xtkd;

TEST_CASE("synth_gen is deterministic and well formed") {
  const SynthDataset a = synth_gen(3, 200, 4, 16, 4);
  const SynthDataset b = synth_gen(3, 200, 4, 16, 4);
  CHECK(a.x == b.x);
  CHECK(a.y_depth == b.y_depth);
  CHECK(a.y_class == b.y_class);
  CHECK(a.y_reg == b.y_reg);
  CHECK(a.x.cols() == 16);
  double lo = INFINITY;
  for (double v : a.y_depth.values()) lo = std::min(lo, v);
  CHECK(lo > 1.0);
  for (double v : a.latents.values()) CHECK(std::abs(v) <= 1.0);
  CHECK(synth_gen(4, 200, 4, 16, 4).x != a.x);
}

TEST_CASE("synth_gen class labels cover every class") {
  const SynthDataset d = synth_gen(0, 1000, 2, 4, 3);
  const std::set<int> seen(d.y_class.begin(), d.y_class.end());
  CHECK(seen == std::set<int>{0, 1, 2});
}

TEST_CASE("synth_gen rejects invalid sizes") {
  CHECK_THROWS_AS(synth_gen(0, 0, 2, 4, 3), ContractError);
  CHECK_THROWS_AS(synth_gen(0, 10, 5, 4, 3), ContractError);
  CHECK_THROWS_AS(synth_gen(0, 10, 2, 4, 0), ContractError);
}

TEST_CASE("slice_rows keeps every field aligned") {
  const SynthDataset d = synth_gen(1, 50, 3, 8, 4);
  const SynthDataset s = slice_rows(d, 10, 20);
  CHECK(s.size() == 10);
  CHECK(s.x(0, 0) == d.x(10, 0));
  CHECK(s.y_class[9] == d.y_class[19]);
  CHECK(s.y_reg(3, 1) == d.y_reg(13, 1));
  CHECK_THROWS(slice_rows(d, 20, 51));
}

TEST_CASE("dataset CSV header and row count") {
  SynthParams p;
  p.n = 5;
  p.latent_dim = 2;
  p.input_dim = 3;
  p.out_dim = 2;
  std::ostringstream out;
  write_dataset_csv(out, synth_gen(p));
  std::istringstream in(out.str());
  const csv::Table t = csv::read(in);
  CHECK(t.header == std::vector<std::string>{"x_0", "x_1", "x_2", "ydepth_0", "ydepth_1", "yclass", "yreg_0",
                                             "yreg_1"});
  CHECK(t.rows.size() == 5);
}

TEST_CASE("silog hand cases") {
  const Matrix gt = Matrix::from_rows({{2.0, 3.0}});
  CHECK(silog_loss(gt, gt) == 0.0);
  const double v = silog_loss(Matrix::scalar(1.5 * std::exp(0.5)), Matrix::scalar(1.5));
  CHECK(std::abs(v - 10.0 * std::sqrt(0.25 + 0.15 * 0.25)) < 1e-12);
  CHECK(std::abs(v - 5.361903) < 1e-6);
  CHECK_THROWS_AS(silog_loss(Matrix::scalar(0.0), Matrix::scalar(1.0)), DomainError);
}

TEST_CASE("silog matches its formula when both sides are rescaled") {
  // g is unchanged by a common factor, so the value is too.
  Rng rng(2);
  const Matrix gt = rng.uniform_matrix(3, 4, 0.5, 3.0);
  const Matrix pred = rng.uniform_matrix(3, 4, 0.5, 3.0);
  CHECK(std::abs(silog_loss(scale(pred, 10.0), scale(gt, 10.0)) - silog_loss(pred, gt)) < 1e-12);
  double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = std::log(pred.values()[i]) - std::log(gt.values()[i]);
    s1 += g * g;
    s2 += g;
  }
  const double k = static_cast<double>(pred.size());
  CHECK(std::abs(silog_loss(pred, gt) - 10.0 * std::sqrt(s1 / k + 0.15 / (k * k) * s2 * s2)) < 1e-12);
}

TEST_CASE("silog mask drops invalid entries") {
  const Matrix gt = Matrix::from_rows({{1.0, 1.0}});
  const Matrix pred = Matrix::from_rows({{std::exp(0.5), 99.0}});
  CHECK(std::abs(silog_loss(pred, gt, {true, false}) - 5.361903) < 1e-6);
}

TEST_CASE("cross-entropy hand cases") {
  CHECK(std::abs(ce_loss(Matrix(3, 4, 0.7), {0, 1, 3}) - std::log(4.0)) < 1e-12);
  CHECK(ce_loss(Matrix::from_rows({{50.0, 0.0, 0.0}}), {0}) < 1e-8);
  CHECK(std::abs(ce_loss(Matrix::from_rows({{1.0, 2.0}}), {0}) - 1.313262) < 1e-6);
  CHECK_THROWS_AS(ce_loss(Matrix(1, 2), {2}), ContractError);
  CHECK_THROWS_AS(ce_loss(Matrix(1, 2), {-1}), ContractError);
}

TEST_CASE("loss nodes pass the finite-difference check") {
  Rng rng(5);
  const Matrix logits = testing::random_matrix(rng, 5, 3);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  const Matrix gt = rng.uniform_matrix(5, 3, 1.0, 3.0);
  for (int which = 0; which < 3; ++which) {
    Graph g;
    const NodeId x = g.leaf();
    if (which == 0) cross_entropy_node(g, x, labels);
    if (which == 1) silog_node(g, g.exp(x), gt);
    if (which == 2) mse_node(g, x, gt);
    CHECK(grad_check(g, {{x, logits}}).max_rel_err < 1e-4);
  }
  Graph g;
  const NodeId x = g.leaf();
  cross_entropy_node(g, x, labels);
  CHECK(g.forward({{x, logits}}).item() == doctest::Approx(ce_loss(logits, labels)).epsilon(1e-14));
}

TEST_CASE("depth metric hand cases") {
  const MetricsReport same = depth_metrics(Matrix::from_rows({{2, 3}}), Matrix::from_rows({{2, 3}}));
  CHECK(same.abs_rel == 0.0);
  CHECK(same.sq_rel == 0.0);
  CHECK(same.rms == 0.0);
  CHECK(same.rms_log == 0.0);
  CHECK(same.delta1 == 1.0);
  CHECK(same.delta3 == 1.0);

  const MetricsReport r = depth_metrics(Matrix::from_rows({{2, 4}}), Matrix::from_rows({{1, 4}}));
  CHECK(r.abs_rel == doctest::Approx(0.5));
  CHECK(std::abs(r.rms - std::sqrt(0.5)) < 1e-15);
  CHECK(r.delta1 == 0.5);
  CHECK(r.delta2 == 0.5);
  CHECK(r.delta3 == 0.5);  // 2 > 1.25³ = 1.953125

  const Matrix gt = Matrix::from_rows({{1, 2, 5}});
  const MetricsReport s = depth_metrics(scale(gt, 1.2), gt);
  CHECK(s.delta1 == 1.0);
  CHECK(std::abs(s.abs_rel - 0.2) < 1e-15);

  CHECK_THROWS_AS(depth_metrics(Matrix::from_rows({{-1.0}}), Matrix::from_rows({{1.0}})), DomainError);
}

TEST_CASE("depth metrics agree with the scalar-loop oracle") {
  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    const std::size_t r = 1 + rng.next_u64() % 6;
    const std::size_t c = 1 + rng.next_u64() % 6;
    const Matrix gt = rng.uniform_matrix(r, c, 0.5, 5.0);
    const Matrix pred = rng.uniform_matrix(r, c, 0.5, 5.0);
    const MetricsReport m = depth_metrics(pred, gt);
    const oracle::Metrics o = oracle::depth_metrics(testing::dense(pred), testing::dense(gt));
    CHECK(std::abs(m.abs_rel - o.abs_rel) < 1e-12);
    CHECK(std::abs(m.sq_rel - o.sq_rel) < 1e-12);
    CHECK(std::abs(m.rms - o.rms) < 1e-12);
    CHECK(std::abs(m.rms_log - o.rms_log) < 1e-12);
    CHECK(std::abs(m.delta1 - o.d1) < 1e-12);
    CHECK(std::abs(m.delta2 - o.d2) < 1e-12);
    CHECK(std::abs(m.delta3 - o.d3) < 1e-12);
    CHECK(m.delta1 <= m.delta2);
    CHECK(m.delta2 <= m.delta3);
  }
}

TEST_CASE("task metrics put the validation loss first") {
  const SynthDataset d = synth_gen(2, 30, 3, 8, 4);
  CHECK(task_metric_names(TaskKind::Depth).front() == "val_loss");
  CHECK(task_metric_names(TaskKind::Classification) == std::vector<std::string>{"val_loss", "accuracy"});
  const Matrix out(30, task_output_dim(TaskKind::Classification, d));
  const auto m = task_metrics(TaskKind::Classification, out, d);
  CHECK(m.front().first == "val_loss");
  CHECK(std::abs(m.front().second - std::log(4.0)) < 1e-12);
  CHECK(task_output_dim(TaskKind::Depth, d) == d.y_depth.cols());
  CHECK(parse_task_kind(to_string(TaskKind::Regression)) == TaskKind::Regression);
  CHECK_THROWS(parse_task_kind("segmentation"));
}

TEST_CASE("depth task exponentiates the network output") {
  const SynthDataset d = synth_gen(2, 10, 3, 8, 4);
  Matrix log_gt = d.y_depth;
  for (double& v : log_gt.values()) v = std::log(v);
  CHECK(task_loss(TaskKind::Depth, log_gt, d) < 1e-12);
}
