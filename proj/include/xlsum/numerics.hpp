#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace xlsum {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;

/// Eigenpairs of a Hermitian matrix, eigenvalues in descending order.
struct EigDecomposition {
  std::vector<double> eigenvalues;
  ComplexMatrix eigenvectors;
};

/**
 * Seeded random source.
 *
 * The raw stream is std::mt19937_64, whose output sequence is fixed by the
 * C++ standard. Uniform and Gaussian variates are derived from raw 64-bit
 * words here rather than through <random> distributions, whose algorithms are
 * implementation-defined. Child streams are seeded by a SplitMix64 mix of the
 * parent seed and a stream id, so parallel tasks can each own a stream that
 * does not depend on scheduling.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [lo, hi], unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller.
  double normal();

  Rng split(std::uint64_t stream) const;
  Rng split(std::string_view purpose) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
/// Sub-seed for a named purpose (FNV-1a of the label mixed with the base seed).
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose);

bool all_finite(const ComplexMatrix& m);

/// Throws NonHermitian when max |m - m^H| exceeds 1e-9, NonFinite on NaN/Inf.
EigDecomposition hermitian_eig(const ComplexMatrix& m);

/**
 * Solves a x = b for Hermitian positive definite a via Cholesky.
 *
 * Throws IllConditioned when the reciprocal condition estimate is below
 * 1e-12 or the smallest pivot falls below 1e-14 of the largest diagonal entry.
 */
ComplexMatrix solve_hermitian(const ComplexMatrix& a, const ComplexMatrix& b);

/// i.i.d. CN(0, 1) entries.
ComplexVector sample_complex_gaussian(std::size_t n, Rng& rng);

/// Gauss-Legendre nodes and weights on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

const QuadratureRule& gauss_legendre(int n);

}  // namespace xlsum
