#include "ngc/rng.hpp"

#include <cmath>

namespace ngc {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  // Modified Gram–Schmidt on the columns of a Gaussian matrix.
  Matrix g = gaussian_matrix(n, n, rng).transpose();  // rows = columns
  for (std::size_t k = 0; k < n; ++k) {
    auto v = g.row(k);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < k; ++j) {
        const double proj = dot(v, g.row(j));
        const auto b = g.row(j);
        for (std::size_t i = 0; i < n; ++i) v[i] -= proj * b[i];
      }
    }
    const double nv = norm2(v);
    for (double& x : v) x /= nv;
  }
  return g.transpose();
}

}  // namespace ngc
