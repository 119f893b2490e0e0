#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "mica/matrix.hpp"
#include "mica/tape.hpp"

namespace mica::test {

inline nd::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nd::Matrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline nd::Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  nd::Matrix m(rows, cols);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline nd::Param random_param(const std::string& name, std::size_t rows, std::size_t cols,
                              std::mt19937_64& rng) {
  return nd::Param(name, random_matrix(rows, cols, rng));
}

}  // namespace mica::test
