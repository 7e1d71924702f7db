#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "helpers.hpp"
#include "xtkd/error.hpp"
#include "xtkd/linalg.hpp"

using namespace xtkd;

namespace {

double ortho_err(const Matrix& q) {
  return max_abs_diff(matmul_tn(q, q), Matrix::identity(q.cols()));
}

Matrix reconstruct(const SvdResult& s) { return truncated_reconstruct(s, s.sigma.size()); }

}  // namespace

TEST_CASE("matrix construction checks shape and finiteness") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1, std::numeric_limits<double>::quiet_NaN()}),
                  DomainError);
  CHECK_THROWS_AS(Matrix(1, 1, std::vector<double>{INFINITY}), DomainError);
  CHECK_THROWS_AS((void)Matrix(2, 2).item(), ContractError);
  CHECK(Matrix::scalar(4.5).item() == 4.5);
}

TEST_CASE("matmul hand cases") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), a) == a);
  CHECK(matmul(Matrix::from_rows({{1, 0}, {0, 0}}), Matrix::from_rows({{0, 0}, {0, 1}})) == Matrix(2, 2));
  CHECK(matmul(a, Matrix::from_rows({{5}, {6}})) == Matrix::from_rows({{17}, {39}}));
}

TEST_CASE("matmul shape error names both shapes") {
  try {
    (void)matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  Rng rng(3);
  const Matrix a = testing::random_matrix(rng, 5, 3);
  const Matrix b = testing::random_matrix(rng, 5, 4);
  const Matrix c = testing::random_matrix(rng, 6, 3);
  CHECK(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)) < 1e-15);
  CHECK(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))) < 1e-15);
}

TEST_CASE("frob_norm") {
  CHECK(frob_norm(Matrix(3, 3)) == 0.0);
  CHECK(frob_norm(Matrix::identity(3)) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  CHECK(frob_norm(Matrix::from_rows({{3, 4}})) == 5.0);
}

TEST_CASE("frob_norm triangle inequality on random pairs") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Matrix a = testing::random_matrix(rng, 4, 7);
    const Matrix b = testing::random_matrix(rng, 4, 7);
    CHECK(frob_norm(add(a, b)) <= frob_norm(a) + frob_norm(b) + 1e-12);
  }
}

TEST_CASE("svd hand cases") {
  CHECK(svd(Matrix::identity(2)).sigma == std::vector<double>{1.0, 1.0});

  const SvdResult d = svd(Matrix::from_rows({{3, 0}, {0, -2}}));
  CHECK(d.sigma[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(d.sigma[1] == doctest::Approx(2.0).epsilon(1e-14));

  // Eigenvalues of AᵀA are (3 ± √5)/2.
  const SvdResult s = svd(Matrix::from_rows({{1, 1}, {0, 1}}));
  CHECK(std::abs(s.sigma[0] - std::sqrt((3.0 + std::sqrt(5.0)) / 2.0)) < 1e-12);
  CHECK(std::abs(s.sigma[1] - std::sqrt((3.0 - std::sqrt(5.0)) / 2.0)) < 1e-12);
  CHECK(s.sigma[0] == doctest::Approx(1.618034).epsilon(1e-6));
  CHECK(s.sigma[1] == doctest::Approx(0.618034).epsilon(1e-6));
}

TEST_CASE("svd rejects non-finite input") {
  // Matrix guards its constructor, so poison an entry afterwards.
  Matrix a(2, 2, 1.0);
  a(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(svd(a), DomainError);
}

TEST_CASE("svd sign convention: first significant entry of each u column is positive") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const SvdResult s = svd(testing::random_matrix(rng, 6, 4));
    for (std::size_t j = 0; j < s.u.cols(); ++j) {
      for (std::size_t i = 0; i < s.u.rows(); ++i) {
        if (std::abs(s.u(i, j)) > 1e-12) {
          CHECK(s.u(i, j) > 0.0);
          break;
        }
      }
    }
  }
}

TEST_CASE("svd on 200 random shapes matches the Gram-eigenvalue oracle") {
  Rng rng(2024);
  double worst_recon = 0.0;
  double worst_ortho = 0.0;
  double worst_sigma = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.next_u64() % 16;
    const std::size_t n = 1 + rng.next_u64() % 16;
    const Matrix a = testing::random_matrix(rng, m, n);
    const SvdResult s = svd(a);
    REQUIRE(s.sigma.size() == std::min(m, n));
    for (std::size_t i = 1; i < s.sigma.size(); ++i) CHECK(s.sigma[i - 1] >= s.sigma[i]);
    worst_recon = std::max(worst_recon, frob_norm(sub(reconstruct(s), a)) / frob_norm(a));
    worst_ortho = std::max({worst_ortho, ortho_err(s.u), ortho_err(s.v)});
    const auto ref = oracle::singular_values_via_gram(testing::dense(a));
    for (std::size_t i = 0; i < ref.size(); ++i) worst_sigma = std::max(worst_sigma, std::abs(ref[i] - s.sigma[i]));
  }
  CHECK(worst_recon < 1e-8);
  CHECK(worst_ortho < 1e-8);
  CHECK(worst_sigma < 1e-7);
}

TEST_CASE("svd of rank-deficient input completes orthonormal factors") {
  const Matrix a = Matrix::from_rows({{1, 2, 3}, {2, 4, 6}, {0, 0, 0}, {1, 2, 3}});
  const SvdResult s = svd(a);
  CHECK(s.sigma[1] < 1e-12);
  CHECK(ortho_err(s.u) < 1e-10);
  CHECK(ortho_err(s.v) < 1e-10);
  CHECK(max_abs_diff(reconstruct(s), a) < 1e-12);
  CHECK(svd(Matrix(3, 2)).sigma == std::vector<double>{0.0, 0.0});
}

TEST_CASE("truncated_reconstruct") {
  Rng rng(9);
  const Matrix a = testing::random_matrix(rng, 5, 3);
  const SvdResult s = svd(a);
  CHECK(frob_norm(sub(truncated_reconstruct(s, 3), a)) / frob_norm(a) < 1e-8);
  CHECK(truncated_reconstruct(s, 0) == Matrix(5, 3));
  CHECK_THROWS_AS(truncated_reconstruct(s, 4), BoundsError);

  const Matrix d = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  CHECK(max_abs_diff(truncated_reconstruct(svd(d), 2), Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 0}})) <
        1e-14);
  CHECK(max_abs_diff(add(partial_reconstruct(s, 0, 1), partial_reconstruct(s, 1, 3)), a) < 1e-12);
}

TEST_CASE("effective_rank") {
  CHECK(effective_rank({1.0, 1e-9}, 1e-6) == 1);
  CHECK(effective_rank({5.0, 5.0, 5.0}, 1e-6) == 3);
  CHECK(effective_rank({10.0, 0.1, 1e-7}, 1e-3) == 2);
  CHECK(effective_rank({0.0, 0.0}) == 0);
  CHECK(effective_rank({}) == 0);
  CHECK_THROWS_AS(effective_rank({1.0, 2.0}), ContractError);
  CHECK_THROWS_AS(effective_rank({1.0}, 0.0), ContractError);
}

TEST_CASE("rank of a product never exceeds the factor ranks") {
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.next_u64() % 8;
    const std::size_t n = 2 + rng.next_u64() % 8;
    const std::size_t p = 2 + rng.next_u64() % 8;
    const std::size_t k = 1 + rng.next_u64() % std::min(m, n);
    const Matrix a = matmul(testing::random_matrix(rng, m, k), testing::random_matrix(rng, k, n));
    const Matrix b = testing::random_matrix(rng, n, p);
    const std::size_t ra = effective_rank(singular_values(a), 1e-8);
    const std::size_t rb = effective_rank(singular_values(b), 1e-8);
    const std::size_t rab = effective_rank(singular_values(matmul(a, b)), 1e-8);
    CHECK(rab <= std::min(ra, rb));
    CHECK(ra == oracle::rank_via_eigen(testing::dense(a), 1e-8));
  }
}

TEST_CASE("matrix text format round-trips exactly") {
  Rng rng(1);
  Matrix a = rng.normal_matrix(4, 3, 1e3);
  a(0, 0) = 1.0 / 3.0;
  a(1, 1) = -0.0;
  a(2, 2) = 5e-310;
  CHECK(from_text(to_text(a)) == a);
  std::istringstream bad("2 2\n1 2\n3\n");
  CHECK_THROWS(read_text(bad));
}
