#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <vector>

#include "xtkd/autodiff.hpp"
#include "xtkd/linalg.hpp"
#include "xtkd/matrix.hpp"
#include "xtkd/projector.hpp"

namespace xtkd {

/// Frobenius norm of the spectral tail Σ_{i=r}^{rank} σ_i u_i v_iᵀ, with r
/// 1-based: r = 1 is the whole matrix, r = min(rows, cols) keeps only the
/// smallest singular value. BoundsError unless 1 <= r <= min(rows, cols).
double spectral_reg_loss(const Matrix& z, std::size_t r);

/// The tail reconstruction itself (same r convention).
Matrix spectral_tail(const SvdResult& s, std::size_t r);

/// True when σ_{r-1} − σ_r > 1e-8·σ_1, i.e. the kept/tail split is well
/// defined. Always true for r = 1.
bool spectral_gap_ok(const std::vector<double>& sigma, std::size_t r);

/// Gradient of spectral_reg_loss with the leading r−1 singular subspaces held
/// fixed: tail / max(‖tail‖_F, 1e-12). DegeneracyError if the gap test fails.
Matrix spectral_reg_grad(const Matrix& z, std::size_t r);

/// Counts backward passes where the gap test failed and the gradient was
/// dropped for that step.
struct SpectralSkips {
  std::size_t count = 0;
};

/// Graph node for spectral_reg_loss. Degenerate steps contribute a zero
/// gradient and bump `skips` (if given) instead of throwing.
NodeId spectral_node(Graph& graph, NodeId z, std::size_t r,
                     std::shared_ptr<SpectralSkips> skips = nullptr);

/// Two sides of the decoupled distillation bound
/// ‖Z_s − Z_t P‖ <= kt + reg.
struct BoundReport {
  double lhs = 0.0;    // ‖Z_s − Z̄_t‖_F
  double kt = 0.0;     // ‖Σ_{i∈k} (σ̄_i ū_i v̄_iᵀ − σ_i u_i v_iᵀ)‖_F
  double reg = 0.0;    // ‖Σ_{i∉k} σ_i u_i v_iᵀ‖_F
  double slack = 0.0;  // kt + reg − lhs
  std::size_t k_set_size = 0;

  [[nodiscard]] bool holds() const noexcept { return slack >= -1e-9; }
};

/// Evaluates both sides of the bound for an inverted projector. k is the set
/// of indices with σ̄_i >= tol·σ̄_1 (empty when Z̄_t = 0); the i-th projected
/// teacher triple is paired with the i-th student triple.
BoundReport decoupled_bound(const Matrix& z_student, const Matrix& z_teacher, const Projector& p,
                            double tol = 1e-6);

/// Per-epoch singular spectra of a projector.
struct SpectrumTrace {
  double tol = 1e-2;
  std::vector<std::size_t> epochs;
  std::vector<std::vector<double>> spectra;  // σ / σ_1, all zero when σ_1 = 0
  std::vector<std::vector<double>> raw;      // σ
  std::vector<std::size_t> ranks;            // effective_rank(σ, tol)
};

/// Appends the projector's spectrum for `epoch` to the trace.
void track_spectrum(const Projector& p, std::size_t epoch, SpectrumTrace& trace);

/// Normalised spectrum σ/σ_1 (all zeros for a zero matrix).
std::vector<double> normalized_spectrum(const std::vector<double>& sigma);

// CSV: epoch, eff_rank, sigma_0.. (normalised), raw_sigma_0..
void write_spectrum_csv(std::ostream& out, const SpectrumTrace& trace);
SpectrumTrace read_spectrum_csv(std::istream& in);

}  // namespace xtkd
