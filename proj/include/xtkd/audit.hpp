#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xtkd/spectral.hpp"

namespace xtkd {

// Property sweeps over random instances. Each is deterministic in its seed.

struct SvdAuditReport {
  std::size_t n = 0;
  double max_recon_err = 0.0;  // ‖U Σ Vᵀ − A‖_F / ‖A‖_F
  double max_ortho_err = 0.0;  // max-abs of UᵀU − I and VᵀV − I
  bool sorted = true;
};

/// Random matrices with 1..16 rows and columns.
SvdAuditReport svd_audit(std::size_t n, std::uint64_t seed);

struct GradAuditEntry {
  std::string name;
  std::size_t seeds = 0;
  double max_rel_err = 0.0;
  double threshold = 1e-4;
  std::size_t skipped_kinks = 0;

  [[nodiscard]] bool pass() const noexcept { return max_rel_err < threshold; }
};

/// One entry per graph primitive and per composite loss, each checked on
/// `seeds` random instances.
std::vector<GradAuditEntry> grad_audit(std::size_t seeds = 20);

struct BoundAuditReport {
  std::size_t n = 0;
  std::size_t holds = 0;
  double min_slack = 0.0;
  double max_slack = 0.0;
  double full_k_slack = 0.0;   // Z_s == Z_t·P, every index retained
  double empty_k_slack = 0.0;  // P == 0
  std::vector<BoundReport> reports;

  [[nodiscard]] bool pass() const noexcept;
};

/// Z_s 8×6, Z_t 8×10 and P 10×6 with its singular values past the third
/// zeroed, plus the two tight degenerate cases.
BoundAuditReport bound_audit(std::size_t n, double tol, std::uint64_t seed);

struct RankAuditReport {
  std::size_t n = 0;
  std::size_t violations = 0;
};

/// effective_rank(A·B) <= min(effective_rank(A), effective_rank(B)) for
/// random low-rank factors.
RankAuditReport rank_audit(std::size_t n, double tol, std::uint64_t seed);

}  // namespace xtkd
