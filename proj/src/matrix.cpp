#include "xtkd/matrix.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "xtkd/error.hpp"

namespace xtkd {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string());
  }
  if (!all_finite()) throw DomainError("matrix contains non-finite entries");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

double Matrix::item() const {
  if (!is_scalar()) throw ContractError("item() on non-scalar matrix " + shape_string());
  return data_[0];
}

bool Matrix::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

namespace {

// Rows i and i+1 of a·b with a(i, k) at a[i·row_step + k·k_step]. Every
// entry accumulates in increasing k, so results match the naive triple loop
// bit for bit.
template <bool Pair>
void accumulate_rows(double* __restrict out0, double* __restrict out1, std::size_t n,
                     const double* a0, const double* a1, std::size_t k_step, std::size_t depth,
                     const double* __restrict b, std::size_t ldb) {
  std::size_t k = 0;
  for (; k + 4 <= depth; k += 4) {
    const double* b0 = b + k * ldb;
    const double* b1 = b0 + ldb;
    const double* b2 = b1 + ldb;
    const double* b3 = b2 + ldb;
    const double x0 = a0[k * k_step], x1 = a0[(k + 1) * k_step];
    const double x2 = a0[(k + 2) * k_step], x3 = a0[(k + 3) * k_step];
    if constexpr (Pair) {
      const double y0 = a1[k * k_step], y1 = a1[(k + 1) * k_step];
      const double y2 = a1[(k + 2) * k_step], y3 = a1[(k + 3) * k_step];
      for (std::size_t j = 0; j < n; ++j) {
        double o = out0[j];
        double p = out1[j];
        o += x0 * b0[j];
        p += y0 * b0[j];
        o += x1 * b1[j];
        p += y1 * b1[j];
        o += x2 * b2[j];
        p += y2 * b2[j];
        o += x3 * b3[j];
        p += y3 * b3[j];
        out0[j] = o;
        out1[j] = p;
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        double o = out0[j];
        o += x0 * b0[j];
        o += x1 * b1[j];
        o += x2 * b2[j];
        o += x3 * b3[j];
        out0[j] = o;
      }
    }
  }
  for (; k < depth; ++k) {
    const double* bk = b + k * ldb;
    const double x = a0[k * k_step];
    for (std::size_t j = 0; j < n; ++j) out0[j] += x * bk[j];
    if constexpr (Pair) {
      const double y = a1[k * k_step];
      for (std::size_t j = 0; j < n; ++j) out1[j] += y * bk[j];
    }
  }
}

// out (m×n) = a·b where row i of a is read at a + i·row_step with k_step
// between consecutive entries.
void product(Matrix& out, const double* a, std::size_t row_step, std::size_t k_step,
             std::size_t depth, const Matrix& b) {
  const std::size_t n = b.cols();
  const double* bp = b.values().data();
  std::size_t i = 0;
  for (; i + 2 <= out.rows(); i += 2) {
    accumulate_rows<true>(out.row(i).data(), out.row(i + 1).data(), n, a + i * row_step,
                          a + (i + 1) * row_step, k_step, depth, bp, n);
  }
  if (i < out.rows()) {
    accumulate_rows<false>(out.row(i).data(), nullptr, n, a + i * row_step, nullptr, k_step, depth,
                           bp, n);
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  product(out, a.values().data(), a.cols(), 1, a.cols(), b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ, " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  product(out, a.values().data(), 1, a.cols(), a.rows(), b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ, " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  add_in_place(out, b);
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

void add_in_place(Matrix& acc, const Matrix& b) {
  require_same_shape(acc, b, "add_in_place");
  auto o = acc.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
}

Matrix operator+(const Matrix& a, const Matrix& b) { return add(a, b); }
Matrix operator-(const Matrix& a, const Matrix& b) { return sub(a, b); }
Matrix operator*(double s, const Matrix& a) { return scale(a, s); }

double frob_norm(const Matrix& a) { return std::sqrt(squared_norm(a)); }

double squared_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return acc;
}

double sum(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return acc;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_text(std::ostream& out, const Matrix& a) {
  out << a.rows() << ' ' << a.cols() << '\n';
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(a(i, j));
    }
    out << '\n';
  }
}

std::string to_text(const Matrix& a) {
  std::ostringstream os;
  write_text(os, a);
  return os.str();
}

namespace {

double parse_double(const std::string& token) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = first + token.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ParseError("matrix text: bad number '" + token + "'");
  }
  return v;
}

}  // namespace

Matrix read_text(std::istream& in) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (!(in >> rows >> cols)) throw ParseError("matrix text: missing 'rows cols' header");
  std::vector<double> data;
  data.reserve(rows * cols);
  std::string token;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    if (!(in >> token)) throw ParseError("matrix text: expected " + std::to_string(rows * cols) +
                                         " values, got " + std::to_string(i));
    data.push_back(parse_double(token));
  }
  return Matrix(rows, cols, std::move(data));
}

Matrix from_text(const std::string& text) {
  std::istringstream is(text);
  return read_text(is);
}

}  // namespace xtkd
