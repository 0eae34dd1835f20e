#pragma once

#include <cstdint>
#include <random>

#include "dln/matrix.hpp"

namespace dln {

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

// splitmix64 step; derives independent sub-seeds from (seed, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Uniform in [0, 1), 53-bit resolution, engine-portable.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline MatrixReal random_uniform(Eigen::Index rows, Eigen::Index cols,
                                 std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  MatrixReal m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = lo + (hi - lo) * uniform01(rng);
  return m;
}

inline MatrixReal random_gaussian(Eigen::Index rows, Eigen::Index cols,
                                  std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  MatrixReal m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// Random orthogonal matrix from the QR of a Gaussian draw.
inline MatrixReal random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  MatrixReal g = random_gaussian(n, n, rng);
  Eigen::HouseholderQR<MatrixReal> qr(g);
  MatrixReal q = qr.householderQ();
  // fix signs so the distribution does not collapse
  MatrixReal r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

}  // namespace dln
