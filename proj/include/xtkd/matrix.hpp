#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace xtkd {

/// Dense row-major matrix of doubles.
///
/// A default-constructed matrix is 0x0 and only useful as a placeholder; every
/// other constructor produces at least one row and one column.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Takes ownership of row-major `data`. Throws ShapeError if the length is
  /// not rows*cols and DomainError if any entry is NaN or infinite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix scalar(double value) { return Matrix(1, 1, value); }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
  [[nodiscard]] bool is_scalar() const noexcept { return rows_ == 1 && cols_ == 1; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  [[nodiscard]] std::span<double> values() noexcept { return data_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
  [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  /// Value of a 1x1 matrix; ContractError otherwise.
  [[nodiscard]] double item() const;
  [[nodiscard]] bool all_finite() const noexcept;
  [[nodiscard]] std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& acc, const Matrix& b);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

double frob_norm(const Matrix& a);
double squared_norm(const Matrix& a);
double sum(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Throws ShapeError naming both shapes unless `a` and `b` have equal shape.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

// Text format: "rows cols" header, then one line per row of space-separated
// values printed with 17 significant digits, so a write/read cycle is exact.
std::string to_text(const Matrix& a);
void write_text(std::ostream& out, const Matrix& a);
Matrix read_text(std::istream& in);
Matrix from_text(const std::string& text);

/// 17-significant-digit rendering shared by every text and CSV writer.
std::string format_double(double v);

}  // namespace xtkd
