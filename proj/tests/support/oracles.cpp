#include "oracles.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>

namespace oracle {

namespace {

Eigen::MatrixXd to_eigen(const Dense& a) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.rows), static_cast<Eigen::Index>(a.cols));
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (std::size_t c = 0; c < a.cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a.at(r, c);
  }
  return m;
}

}  // namespace

std::vector<double> singular_values_via_gram(const Dense& a) {
  const Eigen::MatrixXd m = to_eigen(a);
  // The smaller Gram matrix carries the same nonzero spectrum.
  const Eigen::MatrixXd g = a.rows >= a.cols ? Eigen::MatrixXd(m.transpose() * m) : Eigen::MatrixXd(m * m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
  std::vector<double> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(std::sqrt(std::max(es.eigenvalues()(i), 0.0)));
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

std::size_t rank_via_eigen(const Dense& a, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(a));
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) >= tol * s(0)) ++k;
  }
  return k;
}

Metrics depth_metrics(const Dense& pred, const Dense& gt) {
  const std::size_t t = pred.v.size();
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::size_t c1 = 0, c2 = 0, c3 = 0;
  for (std::size_t i = 0; i < t; ++i) {
    const double d = pred.v[i];
    const double s = gt.v[i];
    const double diff = d - s;
    abs_rel += std::fabs(diff) / s;
    sq_rel += diff * diff / s;
    sq += diff * diff;
    const double ld = std::log(d) - std::log(s);
    sq_log += ld * ld;
    const double ratio = d > s ? d / s : s / d;
    if (ratio < 1.25) ++c1;
    if (ratio < 1.25 * 1.25) ++c2;
    if (ratio < 1.25 * 1.25 * 1.25) ++c3;
  }
  const double n = static_cast<double>(t);
  return {abs_rel / n, sq_rel / n, std::sqrt(sq / n), std::sqrt(sq_log / n), c1 / n, c2 / n, c3 / n};
}

namespace {

std::vector<std::vector<double>> affinities(const Dense& x) {
  const std::size_t b = x.rows;
  std::vector<double> norm(b);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < x.cols; ++k) s += x.at(i, k) * x.at(i, k);
    norm[i] = std::max(std::sqrt(s), 1e-12);
  }
  std::vector<std::vector<double>> q(b, std::vector<double>(b, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      double dot = 0;
      for (std::size_t k = 0; k < x.cols; ++k) dot += x.at(i, k) * x.at(j, k);
      const double cos = dot / (norm[i] * norm[j]);
      q[i][j] = std::max((cos + 1.0) / 2.0, 1e-12);
      row += q[i][j];
    }
    for (std::size_t j = 0; j < b; ++j) q[i][j] /= row;
  }
  return q;
}

}  // namespace

double pkt(const Dense& a, const Dense& b) {
  const auto qa = affinities(a);
  const auto qb = affinities(b);
  double kl = 0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.rows; ++j) {
      if (i == j) continue;
      kl += qb[i][j] * std::log(qb[i][j] / qa[i][j]);
    }
  }
  return kl / static_cast<double>(a.rows);
}

}  // namespace oracle
