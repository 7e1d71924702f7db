#pragma once

#include <cstddef>
#include <vector>

#include "xtkd/matrix.hpp"

namespace xtkd {

/// Thin SVD: a = u · diag(sigma) · vᵀ with r = min(rows, cols) triples.
struct SvdResult {
  Matrix u;                    // m x r, orthonormal columns
  std::vector<double> sigma;   // length r, non-increasing, non-negative
  Matrix v;                    // n x r, orthonormal columns
};

/// One-sided (Hestenes) Jacobi SVD.
///
/// Singular values come back sorted in non-increasing order. Each column of u
/// is sign-normalised so that its first entry of magnitude above 1e-12 is
/// positive (the matching v column is flipped with it). Columns belonging to
/// numerically zero singular values are completed to an orthonormal set, so
/// uᵀu = vᵀv = I always holds. Throws DomainError on non-finite input.
SvdResult svd(const Matrix& a);

/// Σ_{i<k} sigma_i u_i v_iᵀ. k = 0 gives the zero matrix; k > r throws BoundsError.
Matrix truncated_reconstruct(const SvdResult& s, std::size_t k);

/// Σ_{first <= i < last} sigma_i u_i v_iᵀ.
Matrix partial_reconstruct(const SvdResult& s, std::size_t first, std::size_t last);

/// Number of sigma_i >= tol · sigma_0. Zero when sigma is empty or sigma_0 == 0.
/// Throws ContractError if sigma is not sorted non-increasing or tol <= 0.
std::size_t effective_rank(const std::vector<double>& sigma, double tol = 1e-6);

/// Singular values only (same algorithm as svd()).
std::vector<double> singular_values(const Matrix& a);

}  // namespace xtkd
