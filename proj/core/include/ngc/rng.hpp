#pragma once

#include <cstdint>
#include <random>

#include "ngc/linalg.hpp"

namespace ngc {

using Rng = std::mt19937_64;

/// Independent stream for a (seed, tag) pair; used to split Monte-Carlo
/// trials and per-block work without sharing generator state.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);
Matrix uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi);
/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
Matrix random_orthogonal(std::size_t n, Rng& rng);

}  // namespace ngc
