#pragma once

#include <random>
#include <vector>

#include "maac/numcore.hpp"

namespace maac::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline std::vector<int> random_actions(std::size_t n, std::size_t width, Rng& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(width) - 1);
  std::vector<int> a(n);
  for (int& x : a) x = d(rng);
  return a;
}

inline void randomize(ParamTensor& p, Rng& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : p.value.data()) v = u(rng);
}

// True when every entry is at least `margin` away from zero (leaky-ReLU kink).
inline bool clear_of_kinks(const Matrix& pre, double margin = 1e-3) {
  for (double v : pre.data())
    if (std::abs(v) < margin) return false;
  return true;
}

}  // namespace maac::testing
