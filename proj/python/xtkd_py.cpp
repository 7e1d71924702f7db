#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "xtkd/audit.hpp"
#include "xtkd/distill.hpp"
#include "xtkd/error.hpp"
#include "xtkd/harness.hpp"
#include "xtkd/linalg.hpp"
#include "xtkd/spectral.hpp"
#include "xtkd/tasks.hpp"
#include "xtkd/version.hpp"

namespace py = pybind11;
using namespace xtkd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() == 1) {
    std::vector<double> v(a.data(), a.data() + a.shape(0));
    return Matrix(1, v.size(), std::move(v));
  }
  if (a.ndim() != 2) throw ShapeError("expected a 1-d or 2-d array, got " + std::to_string(a.ndim()) + "-d");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  if (m.size() > 0) std::memcpy(out.mutable_data(), m.values().data(), m.size() * sizeof(double));
  return out;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["abs_rel"] = m.abs_rel;
  d["sq_rel"] = m.sq_rel;
  d["rms"] = m.rms;
  d["rms_log"] = m.rms_log;
  d["delta1"] = m.delta1;
  d["delta2"] = m.delta2;
  d["delta3"] = m.delta3;
  return d;
}

py::dict summary_row_dict(const SummaryRow& r) {
  py::dict d;
  d["label"] = r.label;
  d["hash"] = r.hash;
  d["n_seeds"] = r.n_seeds;
  py::dict mean;
  py::dict stddev;
  for (std::size_t i = 0; i < r.metric_names.size(); ++i) {
    mean[py::str(r.metric_names[i])] = r.mean[i];
    stddev[py::str(r.metric_names[i])] = r.stddev[i];
  }
  d["mean"] = mean;
  d["stddev"] = stddev;
  d["rank_mean"] = r.rank_mean;
  d["inv_minus_trad"] = r.inv_minus_trad;
  d["vs_baseline"] = r.vs_baseline;
  return d;
}

py::dict run_config(const ExperimentConfig& cfg, const std::filesystem::path& out, std::size_t jobs) {
  ExperimentOutcome o;
  {
    py::gil_scoped_release release;
    o = run_experiment(cfg, {out, jobs, true});
  }
  py::list rows;
  for (const auto& r : o.summary.rows) rows.append(summary_row_dict(r));
  py::list claims;
  for (const auto& c : o.claims) claims.append(py::make_tuple(c.name, c.pass, c.detail));
  py::dict d;
  d["summary"] = rows;
  d["claims"] = claims;
  d["files"] = o.files;
  return d;
}

}  // namespace

PYBIND11_MODULE(_xtkd, m) {
  m.doc() = "Cross-task feature distillation: linear algebra, losses and experiment runner.";
  m.attr("__version__") = kVersion;

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "svd",
      [](const Array& a) {
        const SvdResult s = svd(to_matrix(a));
        return py::make_tuple(to_array(s.u), s.sigma, to_array(s.v));
      },
      py::arg("a"), "Thin SVD (u, sigma, v) with sigma descending and a == u @ diag(sigma) @ v.T.");
  m.def("effective_rank", &effective_rank, py::arg("sigma"), py::arg("tol") = 1e-6,
        "Count of singular values at or above tol * sigma[0].");

  m.def(
      "depth_metrics", [](const Array& pred, const Array& gt) { return metrics_dict(depth_metrics(to_matrix(pred), to_matrix(gt))); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "silog_loss", [](const Array& pred, const Array& gt) { return silog_loss(to_matrix(pred), to_matrix(gt)); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "ce_loss", [](const Array& logits, const std::vector<int>& labels) { return ce_loss(to_matrix(logits), labels); },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "fitnets_loss", [](const Array& a, const Array& b) { return fitnets_loss(to_matrix(a), to_matrix(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "at_loss", [](const Array& a, const Array& b) { return at_loss(to_matrix(a), to_matrix(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "pkt_loss", [](const Array& a, const Array& b) { return pkt_loss(to_matrix(a), to_matrix(b)); }, py::arg("a"),
      py::arg("b"));

  m.def(
      "spectral_reg_loss", [](const Array& z, std::size_t r) { return spectral_reg_loss(to_matrix(z), r); },
      py::arg("z"), py::arg("r"), "Frobenius norm of the SVD tail from the r-th (1-based) singular triple on.");
  m.def(
      "decoupled_bound",
      [](const Array& zs, const Array& zt, const Array& p, double tol) {
        const Matrix w = to_matrix(p);
        const Projector proj = Projector::with_weights(Direction::Inverted, w.cols(), w.rows(), w);
        const BoundReport b = decoupled_bound(to_matrix(zs), to_matrix(zt), proj, tol);
        py::dict d;
        d["lhs"] = b.lhs;
        d["kt"] = b.kt;
        d["reg"] = b.reg;
        d["slack"] = b.slack;
        d["k_set_size"] = b.k_set_size;
        d["holds"] = b.holds();
        return d;
      },
      py::arg("z_student"), py::arg("z_teacher"), py::arg("p"), py::arg("tol") = 1e-6,
      "Both sides of the decoupled bound for an inverted projector p of shape (d_t, d_s).");

  m.def(
      "synth_gen",
      [](std::uint64_t seed, std::size_t n, std::size_t latent_dim, std::size_t input_dim, std::size_t classes) {
        const SynthDataset d = synth_gen(seed, n, latent_dim, input_dim, classes);
        py::dict out;
        out["x"] = to_array(d.x);
        out["y_depth"] = to_array(d.y_depth);
        out["y_class"] = d.y_class;
        out["y_reg"] = to_array(d.y_reg);
        return out;
      },
      py::arg("seed"), py::arg("n"), py::arg("latent_dim") = 4, py::arg("input_dim") = 16, py::arg("classes") = 4);

  m.def(
      "grad_audit",
      [](std::size_t seeds) {
        py::list out;
        for (const auto& e : grad_audit(seeds)) {
          out.append(py::make_tuple(e.name, e.max_rel_err, e.threshold, e.pass()));
        }
        return out;
      },
      py::arg("seeds") = 20, "(name, max_rel_err, threshold, pass) per op and loss.");

  m.def("preset_names", &preset_names);
  m.def(
      "preset_config", [](const std::string& name) { return render_config(preset(name)); }, py::arg("name"),
      "Config file text of a preset.");
  m.def(
      "run_config",
      [](const std::string& text, const std::filesystem::path& out, std::size_t jobs) {
        std::istringstream in(text);
        return run_config(parse_config(in, "<python>"), out, jobs);
      },
      py::arg("text"), py::arg("out"), py::arg("jobs") = 1,
      "Runs a config given as text; returns summary rows, claims and written files.");
  m.def(
      "run_preset",
      [](const std::string& name, const std::filesystem::path& out, std::size_t jobs) {
        return run_config(preset(name), out, jobs);
      },
      py::arg("name"), py::arg("out"), py::arg("jobs") = 1);
}
