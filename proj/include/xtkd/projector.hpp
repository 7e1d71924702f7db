#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "xtkd/matrix.hpp"
#include "xtkd/models.hpp"

namespace xtkd {

enum class Direction {
  Traditional,  // student features -> teacher space, weights d_s x d_t
  Inverted,     // teacher features -> student space, weights d_t x d_s
};

std::string to_string(Direction d);
Direction parse_direction(const std::string& text);

/// Learnable linear map aligning student and teacher feature widths.
struct Projector {
  Direction direction = Direction::Inverted;
  std::size_t student_dim = 0;
  std::size_t teacher_dim = 0;
  Matrix weights;

  /// Shape the weights must have for this direction and dimension pair.
  [[nodiscard]] std::pair<std::size_t, std::size_t> expected_shape() const;
  /// ShapeError unless weights match expected_shape().
  void validate() const;

  /// Uniform-fan-in (fan_in = rows of the weight matrix) or orthogonal init.
  static Projector make(Direction direction, std::size_t student_dim, std::size_t teacher_dim,
                        InitSpec init);
  static Projector with_weights(Direction direction, std::size_t student_dim,
                                std::size_t teacher_dim, Matrix weights);
};

/// Aligned (student, teacher) pair: Inverted gives (Z_s, Z_t·P), Traditional
/// gives (Z_s·P, Z_t).
std::pair<Matrix, Matrix> project(const Projector& p, const Matrix& z_student,
                                  const Matrix& z_teacher);

}  // namespace xtkd
