#include "xtkd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xtkd/error.hpp"

namespace xtkd {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxSweeps = 80;
// Singular values below this fraction of sigma_max get a completed basis
// vector instead of a normalised (noise-dominated) column.
constexpr double kNullRel = 1e-13;
constexpr double kSignEps = 1e-12;

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void rotate(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

// Fills the columns of `u` flagged invalid with unit vectors orthogonal to
// every other column, drawn from the standard basis by Gram-Schmidt.
void complete_basis(Matrix& u, std::vector<bool>& valid) {
  const std::size_t m = u.rows();
  const std::size_t r = u.cols();
  std::vector<double> cand(m);
  std::vector<double> best(m);
  for (std::size_t j = 0; j < r; ++j) {
    if (valid[j]) continue;
    double best_norm = -1.0;
    for (std::size_t k = 0; k < m; ++k) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[k] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < r; ++c) {
          if (!valid[c]) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += u(i, c) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * u(i, c);
        }
      }
      const double nrm = std::sqrt(dot(cand.data(), cand.data(), m));
      if (nrm > best_norm) {
        best_norm = nrm;
        best = cand;
      }
      if (nrm > 0.5) break;
    }
    for (std::size_t i = 0; i < m; ++i) u(i, j) = best[i] / best_norm;
    valid[j] = true;
  }
}

// Jacobi SVD for rows >= cols. Work arrays are column-major so each rotation
// streams through two contiguous columns.
SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  std::vector<double> w(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) w[j * m + i] = a(i, j);
  }
  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const double tol = std::max(1.0, std::sqrt(static_cast<double>(m))) * kEps;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = &w[p * m];
        double* aq = &w[q * m];
        const double alpha = dot(ap, ap, m);
        const double beta = dot(aq, aq, m);
        const double gamma = dot(ap, aq, m);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(ap, aq, m, c, s);
        rotate(&v[p * n], &v[q * n], n, c, s);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(dot(&w[j * m], &w[j * m], m));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = n > 0 ? norms[order[0]] : 0.0;
  std::vector<bool> valid(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.sigma[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v[j * n + i];
    if (norms[j] > 0.0 && norms[j] > kNullRel * smax) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = w[j * m + i] / norms[j];
      valid[k] = true;
    }
  }
  complete_basis(out.u, valid);
  return out;
}

void fix_signs(SvdResult& s) {
  for (std::size_t k = 0; k < s.u.cols(); ++k) {
    for (std::size_t i = 0; i < s.u.rows(); ++i) {
      const double x = s.u(i, k);
      if (std::abs(x) <= kSignEps) continue;
      if (x < 0.0) {
        for (std::size_t r = 0; r < s.u.rows(); ++r) s.u(r, k) = -s.u(r, k);
        for (std::size_t r = 0; r < s.v.rows(); ++r) s.v(r, k) = -s.v(r, k);
      }
      break;
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& a) {
  if (!a.all_finite()) throw DomainError("svd: input has non-finite entries");
  if (a.empty()) throw ShapeError("svd: empty matrix");
  SvdResult out;
  if (a.rows() >= a.cols()) {
    out = svd_tall(a);
  } else {
    SvdResult t = svd_tall(transpose(a));
    out.u = std::move(t.v);
    out.sigma = std::move(t.sigma);
    out.v = std::move(t.u);
  }
  fix_signs(out);
  return out;
}

Matrix partial_reconstruct(const SvdResult& s, std::size_t first, std::size_t last) {
  if (first > last || last > s.sigma.size()) {
    throw BoundsError("reconstruct: range [" + std::to_string(first) + ", " +
                      std::to_string(last) + ") outside " + std::to_string(s.sigma.size()) +
                      " singular triples");
  }
  Matrix out(s.u.rows(), s.v.rows());
  for (std::size_t k = first; k < last; ++k) {
    const double sk = s.sigma[k];
    if (sk == 0.0) continue;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double coef = sk * s.u(i, k);
      auto row = out.row(i);
      for (std::size_t j = 0; j < out.cols(); ++j) row[j] += coef * s.v(j, k);
    }
  }
  return out;
}

Matrix truncated_reconstruct(const SvdResult& s, std::size_t k) {
  if (k > s.sigma.size()) {
    throw BoundsError("truncated_reconstruct: k=" + std::to_string(k) + " exceeds " +
                      std::to_string(s.sigma.size()) + " singular values");
  }
  return partial_reconstruct(s, 0, k);
}

std::size_t effective_rank(const std::vector<double>& sigma, double tol) {
  if (!(tol > 0.0)) throw ContractError("effective_rank: tol must be positive");
  for (std::size_t i = 0; i + 1 < sigma.size(); ++i) {
    if (sigma[i] < sigma[i + 1]) {
      throw ContractError("effective_rank: singular values not sorted in non-increasing order");
    }
  }
  if (sigma.empty() || sigma[0] == 0.0) return 0;
  const double cut = tol * sigma[0];
  return static_cast<std::size_t>(
      std::count_if(sigma.begin(), sigma.end(), [cut](double s) { return s >= cut; }));
}

std::vector<double> singular_values(const Matrix& a) { return svd(a).sigma; }

}  // namespace xtkd
