#include "xtkd/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "xtkd/csv.hpp"
#include "xtkd/error.hpp"

namespace xtkd {

namespace {

void check_r(const Matrix& z, std::size_t r) {
  const std::size_t limit = std::min(z.rows(), z.cols());
  if (r < 1 || r > limit) {
    throw BoundsError("spectral: r=" + std::to_string(r) + " outside [1, " +
                      std::to_string(limit) + "]");
  }
}

constexpr double kTailNormFloor = 1e-12;
constexpr double kGapRel = 1e-8;

}  // namespace

Matrix spectral_tail(const SvdResult& s, std::size_t r) {
  return partial_reconstruct(s, r - 1, s.sigma.size());
}

double spectral_reg_loss(const Matrix& z, std::size_t r) {
  check_r(z, r);
  return frob_norm(spectral_tail(svd(z), r));
}

bool spectral_gap_ok(const std::vector<double>& sigma, std::size_t r) {
  if (r <= 1) return true;
  if (r > sigma.size()) return false;
  return sigma[r - 2] - sigma[r - 1] > kGapRel * sigma[0];
}

Matrix spectral_reg_grad(const Matrix& z, std::size_t r) {
  check_r(z, r);
  const SvdResult s = svd(z);
  if (!spectral_gap_ok(s.sigma, r)) {
    throw DegeneracyError("spectral_reg_grad: singular gap at r=" + std::to_string(r) +
                          " is below 1e-8 * sigma_1");
  }
  Matrix tail = spectral_tail(s, r);
  const double nrm = std::max(frob_norm(tail), kTailNormFloor);
  return scale(tail, 1.0 / nrm);
}

namespace {

class SpectralTailOp final : public Op {
 public:
  SpectralTailOp(std::size_t r, std::shared_ptr<SpectralSkips> skips)
      : r_(r), skips_(std::move(skips)) {}
  std::string_view name() const override { return "spectral_tail"; }
  Matrix forward(std::span<const Matrix* const> in) const override {
    return Matrix::scalar(spectral_reg_loss(*in[0], r_));
  }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&,
                               const Matrix& g) const override {
    try {
      return {scale(spectral_reg_grad(*in[0], r_), g.item())};
    } catch (const DegeneracyError&) {
      if (skips_) ++skips_->count;
      return {Matrix(in[0]->rows(), in[0]->cols())};
    }
  }

 private:
  std::size_t r_;
  std::shared_ptr<SpectralSkips> skips_;
};

}  // namespace

NodeId spectral_node(Graph& graph, NodeId z, std::size_t r, std::shared_ptr<SpectralSkips> skips) {
  return graph.custom(std::make_shared<const SpectralTailOp>(r, std::move(skips)), {z});
}

BoundReport decoupled_bound(const Matrix& z_student, const Matrix& z_teacher, const Projector& p,
                            double tol) {
  if (p.direction != Direction::Inverted) {
    throw ContractError("decoupled_bound: projector must be inverted");
  }
  if (!(tol > 0.0)) throw ContractError("decoupled_bound: tol must be positive");
  const auto [zs, zbar] = project(p, z_student, z_teacher);

  const SvdResult s = svd(zs);
  const SvdResult t = svd(zbar);
  std::size_t k = 0;
  if (!t.sigma.empty() && t.sigma[0] > 0.0) {
    while (k < t.sigma.size() && t.sigma[k] >= tol * t.sigma[0]) ++k;
  }

  BoundReport out;
  out.k_set_size = k;
  out.lhs = frob_norm(sub(zs, zbar));
  out.kt = frob_norm(sub(truncated_reconstruct(t, k), truncated_reconstruct(s, k)));
  out.reg = frob_norm(partial_reconstruct(s, k, s.sigma.size()));
  out.slack = out.kt + out.reg - out.lhs;
  return out;
}

std::vector<double> normalized_spectrum(const std::vector<double>& sigma) {
  std::vector<double> out(sigma.size(), 0.0);
  if (sigma.empty() || sigma[0] <= 0.0) return out;
  for (std::size_t i = 0; i < sigma.size(); ++i) out[i] = sigma[i] / sigma[0];
  return out;
}

void track_spectrum(const Projector& p, std::size_t epoch, SpectrumTrace& trace) {
  std::vector<double> sigma = singular_values(p.weights);
  trace.epochs.push_back(epoch);
  trace.ranks.push_back(effective_rank(sigma, trace.tol));
  trace.spectra.push_back(normalized_spectrum(sigma));
  trace.raw.push_back(std::move(sigma));
}

void write_spectrum_csv(std::ostream& out, const SpectrumTrace& trace) {
  const std::size_t width = trace.spectra.empty() ? 0 : trace.spectra.front().size();
  out << "epoch,eff_rank";
  for (std::size_t i = 0; i < width; ++i) out << ",sigma_" << i;
  for (std::size_t i = 0; i < width; ++i) out << ",raw_sigma_" << i;
  out << '\n';
  for (std::size_t e = 0; e < trace.epochs.size(); ++e) {
    out << trace.epochs[e] << ',' << trace.ranks[e];
    for (double v : trace.spectra[e]) out << ',' << format_double(v);
    for (double v : trace.raw[e]) out << ',' << format_double(v);
    out << '\n';
  }
}

SpectrumTrace read_spectrum_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  if (t.header.size() < 2 || t.header[0] != "epoch" || t.header[1] != "eff_rank" ||
      (t.header.size() - 2) % 2 != 0) {
    throw ParseError("spectrum csv: unexpected header");
  }
  const std::size_t width = (t.header.size() - 2) / 2;
  SpectrumTrace trace;
  for (const auto& row : t.rows) {
    trace.epochs.push_back(static_cast<std::size_t>(csv::to_integer(row[0])));
    trace.ranks.push_back(static_cast<std::size_t>(csv::to_integer(row[1])));
    std::vector<double> norm;
    std::vector<double> raw;
    for (std::size_t i = 0; i < width; ++i) {
      norm.push_back(csv::to_double(row[2 + i]));
      raw.push_back(csv::to_double(row[2 + width + i]));
    }
    trace.spectra.push_back(std::move(norm));
    trace.raw.push_back(std::move(raw));
  }
  return trace;
}

}  // namespace xtkd
