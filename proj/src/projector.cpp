#include "xtkd/projector.hpp"

#include <cmath>

#include "xtkd/error.hpp"
#include "xtkd/linalg.hpp"
#include "xtkd/rng.hpp"

namespace xtkd {

std::string to_string(Direction d) {
  return d == Direction::Inverted ? "inverted" : "traditional";
}

Direction parse_direction(const std::string& text) {
  if (text == "inverted") return Direction::Inverted;
  if (text == "traditional") return Direction::Traditional;
  throw ConfigError("unknown projector direction '" + text +
                    "' (expected inverted or traditional)");
}

std::pair<std::size_t, std::size_t> Projector::expected_shape() const {
  if (direction == Direction::Inverted) return {teacher_dim, student_dim};
  return {student_dim, teacher_dim};
}

void Projector::validate() const {
  const auto [r, c] = expected_shape();
  if (weights.rows() != r || weights.cols() != c) {
    throw ShapeError("projector (" + to_string(direction) + ", d_s=" +
                     std::to_string(student_dim) + ", d_t=" + std::to_string(teacher_dim) +
                     ") expects " + std::to_string(r) + "x" + std::to_string(c) +
                     " weights, got " + weights.shape_string());
  }
}

Projector Projector::make(Direction direction, std::size_t student_dim, std::size_t teacher_dim,
                          InitSpec init) {
  Projector p{direction, student_dim, teacher_dim, {}};
  const auto [r, c] = p.expected_shape();
  Rng rng(init.seed);
  switch (init.scheme) {
    case InitScheme::UniformFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(r));
      p.weights = rng.uniform_matrix(r, c, -bound, bound);
      break;
    }
    case InitScheme::OrthogonalColumns: {
      const SvdResult s = svd(rng.normal_matrix(r, c));
      p.weights = matmul_nt(s.u, s.v);
      break;
    }
    case InitScheme::Zero:
      p.weights = Matrix(r, c);
      break;
  }
  return p;
}

Projector Projector::with_weights(Direction direction, std::size_t student_dim,
                                  std::size_t teacher_dim, Matrix weights) {
  Projector p{direction, student_dim, teacher_dim, std::move(weights)};
  p.validate();
  return p;
}

std::pair<Matrix, Matrix> project(const Projector& p, const Matrix& z_student,
                                  const Matrix& z_teacher) {
  p.validate();
  if (z_student.cols() != p.student_dim || z_teacher.cols() != p.teacher_dim ||
      z_student.rows() != z_teacher.rows()) {
    throw ShapeError("project: features " + z_student.shape_string() + " / " +
                     z_teacher.shape_string() + " do not match registered d_s=" +
                     std::to_string(p.student_dim) + ", d_t=" + std::to_string(p.teacher_dim));
  }
  if (p.direction == Direction::Inverted) return {z_student, matmul(z_teacher, p.weights)};
  return {matmul(z_student, p.weights), z_teacher};
}

}  // namespace xtkd
