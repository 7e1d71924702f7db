#pragma once

#include "oracles.hpp"
#include "xtkd/matrix.hpp"
#include "xtkd/rng.hpp"

namespace testing {

inline oracle::Dense dense(const xtkd::Matrix& m) {
  return {m.rows(), m.cols(), std::vector<double>(m.values().begin(), m.values().end())};
}

inline xtkd::Matrix random_matrix(xtkd::Rng& rng, std::size_t r, std::size_t c) {
  return rng.uniform_matrix(r, c, -1.0, 1.0);
}

}  // namespace testing
