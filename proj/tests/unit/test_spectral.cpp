#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "xtkd/audit.hpp"
#include "xtkd/error.hpp"
#include "xtkd/spectral.hpp"

using namespace xtkd;

namespace {

Matrix diag(std::initializer_list<double> d) {
  const std::vector<double> v(d);
  return Matrix::diagonal(v);
}

// Random m×n with singular values spaced well apart.
Matrix separated(Rng& rng, std::size_t m, std::size_t n) {
  const SvdResult a = svd(testing::random_matrix(rng, m, m));
  const SvdResult b = svd(testing::random_matrix(rng, n, n));
  Matrix s(m, n);
  for (std::size_t i = 0; i < std::min(m, n); ++i) s(i, i) = 4.0 - static_cast<double>(i);
  return matmul(matmul(a.u, s), transpose(b.u));
}

}  // namespace

TEST_CASE("spectral_reg_loss hand cases") {
  const Matrix outer = matmul(Matrix::from_rows({{1}, {2}, {3}}), Matrix::from_rows({{1, -1, 2}}));
  CHECK(spectral_reg_loss(outer, 2) < 1e-10);
  CHECK(std::abs(spectral_reg_loss(diag({3, 2, 1}), 2) - std::sqrt(5.0)) < 1e-12);
  CHECK(std::abs(spectral_reg_loss(diag({3, 2}), 1) - std::sqrt(13.0)) < 1e-12);
  CHECK_THROWS_AS(spectral_reg_loss(diag({3, 2}), 0), BoundsError);
  CHECK_THROWS_AS(spectral_reg_loss(diag({3, 2}), 3), BoundsError);
}

TEST_CASE("spectral_reg_loss at r = 1 is the Frobenius norm and falls with r") {
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    const Matrix z = testing::random_matrix(rng, 7, 5);
    CHECK(std::abs(spectral_reg_loss(z, 1) - frob_norm(z)) < 1e-10);
    for (std::size_t r = 2; r <= 5; ++r) CHECK(spectral_reg_loss(z, r) <= spectral_reg_loss(z, r - 1) + 1e-12);
  }
}

TEST_CASE("spectral_reg_grad hand cases") {
  const Matrix g = spectral_reg_grad(diag({3, 2, 1}), 2);
  CHECK(max_abs_diff(g, scale(diag({0, 2, 1}), 1.0 / std::sqrt(5.0))) < 1e-12);
  const Matrix low = matmul(Matrix::from_rows({{1}, {2}}), Matrix::from_rows({{3, 1}}));
  CHECK(max_abs(spectral_reg_grad(low, 2)) < 1e-10);
  CHECK_THROWS_AS(spectral_reg_grad(diag({2, 2, 1}), 2), DegeneracyError);
  CHECK(spectral_gap_ok({2, 2, 1}, 1));
  CHECK_FALSE(spectral_gap_ok({2, 2, 1}, 2));
}

TEST_CASE("spectral gradient matches finite differences away from degeneracy") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Matrix z = separated(rng, 6, 4);
    Graph g;
    const NodeId x = g.leaf();
    spectral_node(g, x, 2);
    CHECK(grad_check(g, {{x, z}}).max_rel_err < 1e-3);
  }
}

TEST_CASE("spectral node skips degenerate steps") {
  auto skips = std::make_shared<SpectralSkips>();
  Graph g;
  const NodeId x = g.leaf();
  spectral_node(g, x, 2, skips);
  g.forward({{x, diag({2, 2, 1})}});
  CHECK(g.backward().at(x) == Matrix(3, 3));
  CHECK(skips->count == 1);
}

TEST_CASE("decoupled bound is tight in its degenerate cases") {
  Rng rng(3);
  const Matrix zt = testing::random_matrix(rng, 8, 10);
  const Matrix p = testing::random_matrix(rng, 10, 6);
  const Projector proj = Projector::with_weights(Direction::Inverted, 6, 10, p);
  const BoundReport same = decoupled_bound(matmul(zt, p), zt, proj);
  CHECK(std::abs(same.lhs) < 1e-12);
  CHECK(std::abs(same.kt) < 1e-10);
  CHECK(std::abs(same.reg) < 1e-10);
  CHECK(std::abs(same.slack) < 1e-10);
  CHECK(same.k_set_size == 6);

  const Matrix zs = testing::random_matrix(rng, 8, 6);
  const Projector zero = Projector::with_weights(Direction::Inverted, 6, 10, Matrix(10, 6));
  const BoundReport empty = decoupled_bound(zs, zt, zero);
  CHECK(empty.k_set_size == 0);
  CHECK(empty.kt == 0.0);
  CHECK(std::abs(empty.reg - frob_norm(zs)) < 1e-12);
  CHECK(std::abs(empty.slack) < 1e-10);

  CHECK_THROWS_AS(decoupled_bound(testing::random_matrix(rng, 7, 6), zt, proj), ShapeError);
}

TEST_CASE("decoupled bound holds on random low-rank projectors") {
  const BoundAuditReport rep = bound_audit(200, 1e-6, 4);
  CHECK(rep.n == 200);
  CHECK(rep.holds == 200);
  CHECK(rep.min_slack >= -1e-9);
  CHECK(std::abs(rep.full_k_slack) < 1e-10);
  CHECK(std::abs(rep.empty_k_slack) < 1e-10);
  for (const auto& r : rep.reports) {
    CHECK(r.k_set_size == 3);
    CHECK(r.reg >= 0.0);
  }
}

TEST_CASE("same-task degeneracy: full k gives zero regulariser") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Matrix zs = testing::random_matrix(rng, 8, 6);
    const Matrix zt = testing::random_matrix(rng, 8, 10);
    const Projector p = Projector::with_weights(Direction::Inverted, 6, 10, testing::random_matrix(rng, 10, 6));
    const BoundReport r = decoupled_bound(zs, zt, p);
    CHECK(r.k_set_size == 6);
    CHECK(r.reg < 1e-12);
    CHECK(r.lhs <= r.kt + 1e-9);
  }
}

TEST_CASE("track_spectrum conventions") {
  SpectrumTrace trace;
  trace.tol = 1e-2;
  const Projector orth =
      Projector::make(Direction::Inverted, 4, 8, {InitScheme::OrthogonalColumns, 3});
  track_spectrum(orth, 0, trace);
  for (double s : trace.spectra.back()) CHECK(std::abs(s - 1.0) < 1e-12);
  CHECK(trace.ranks.back() == 4);

  track_spectrum(Projector::with_weights(Direction::Inverted, 4, 8, Matrix(8, 4)), 1, trace);
  CHECK(trace.ranks.back() == 0);
  CHECK(trace.spectra.back() == std::vector<double>(4, 0.0));

  Rng rng(6);
  const Matrix rank2 = truncated_reconstruct(svd(testing::random_matrix(rng, 8, 4)), 2);
  track_spectrum(Projector::with_weights(Direction::Inverted, 4, 8, rank2), 2, trace);
  const double ratio = trace.raw.back()[1] / trace.raw.back()[0];
  CHECK(effective_rank(trace.raw.back(), ratio) == 2);
  CHECK(trace.ranks.back() == (ratio >= 1e-2 ? 2u : 1u));
  CHECK(trace.epochs == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("spectrum CSV round-trips") {
  SpectrumTrace trace;
  Rng rng(7);
  for (std::size_t e = 0; e < 3; ++e) {
    track_spectrum(Projector::with_weights(Direction::Traditional, 3, 5, testing::random_matrix(rng, 3, 5)), e * 10,
                   trace);
  }
  std::ostringstream out;
  write_spectrum_csv(out, trace);
  CHECK(out.str().rfind("epoch,eff_rank,sigma_0,sigma_1,sigma_2,raw_sigma_0", 0) == 0);
  std::istringstream in(out.str());
  const SpectrumTrace back = read_spectrum_csv(in);
  CHECK(back.epochs == trace.epochs);
  CHECK(back.spectra == trace.spectra);
  CHECK(back.raw == trace.raw);
  CHECK(back.ranks == trace.ranks);
}

TEST_CASE("audit sweeps pass") {
  const SvdAuditReport s = svd_audit(50, 8);
  CHECK(s.max_recon_err < 1e-8);
  CHECK(s.max_ortho_err < 1e-8);
  CHECK(s.sorted);
  CHECK(rank_audit(100, 1e-8, 9).violations == 0);
  for (const auto& e : grad_audit(3)) {
    INFO(e.name);
    CHECK(e.pass());
  }
}
