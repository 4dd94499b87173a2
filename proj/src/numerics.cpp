#include "xlsum/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include <boost/math/special_functions/legendre.hpp>

#include "xlsum/errors.hpp"

namespace xlsum {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : purpose) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(base ^ splitmix64(h));
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw InvalidConfig("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], keeping log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

Rng Rng::split(std::string_view purpose) const {
  return Rng(derive_seed(seed_, purpose));
}

bool all_finite(const ComplexMatrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) {
        return false;
      }
    }
  }
  return true;
}

namespace {

void require_square(const ComplexMatrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch(std::string(what) + ": matrix is not square");
  }
}

}  // namespace

EigDecomposition hermitian_eig(const ComplexMatrix& m) {
  require_square(m, "hermitian_eig");
  if (!all_finite(m)) throw NonFinite("hermitian_eig: non-finite input");
  const double asymmetry =
      m.size() == 0 ? 0.0 : (m - m.adjoint()).cwiseAbs().maxCoeff();
  if (asymmetry > 1e-9) {
    throw NonHermitian("hermitian_eig: max |m - m^H| = " +
                       std::to_string(asymmetry));
  }
  // Average with the adjoint so the solver sees an exactly Hermitian input.
  const ComplexMatrix sym = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NonFinite("hermitian_eig: eigensolver did not converge");
  }
  const Eigen::Index n = m.rows();
  EigDecomposition out;
  out.eigenvalues.resize(static_cast<std::size_t>(n));
  out.eigenvectors.resize(n, n);
  // Eigen sorts ascending.
  for (Eigen::Index i = 0; i < n; ++i) {
    out.eigenvalues[static_cast<std::size_t>(i)] =
        solver.eigenvalues()(n - 1 - i);
    out.eigenvectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

ComplexMatrix solve_hermitian(const ComplexMatrix& a, const ComplexMatrix& b) {
  require_square(a, "solve_hermitian");
  if (a.rows() != b.rows()) {
    throw DimensionMismatch("solve_hermitian: rhs rows do not match");
  }
  if (!all_finite(a) || !all_finite(b)) {
    throw NonFinite("solve_hermitian: non-finite input");
  }
  if (a.rows() == 0) return b;
  Eigen::LLT<ComplexMatrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw IllConditioned("solve_hermitian: matrix is not positive definite");
  }
  const double max_diag = a.diagonal().real().cwiseAbs().maxCoeff();
  const auto pivots = llt.matrixLLT().diagonal().real();
  const double min_pivot = pivots.cwiseAbs2().minCoeff();
  if (!(max_diag > 0.0) || min_pivot < 1e-14 * max_diag) {
    throw IllConditioned("solve_hermitian: pivot below threshold");
  }
  const double rcond = llt.rcond();
  if (!(rcond >= 1e-12)) {
    throw IllConditioned("solve_hermitian: condition estimate " +
                         std::to_string(1.0 / rcond) + " exceeds 1e12");
  }
  ComplexMatrix x = llt.solve(b);
  if (!all_finite(x)) throw IllConditioned("solve_hermitian: non-finite solve");
  return x;
}

ComplexVector sample_complex_gaussian(std::size_t n, Rng& rng) {
  ComplexVector z(static_cast<Eigen::Index>(n));
  const double scale = std::sqrt(0.5);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double re = rng.normal();
    const double im = rng.normal();
    z(i) = Complex(scale * re, scale * im);
  }
  return z;
}

const QuadratureRule& gauss_legendre(int n) {
  if (n < 1) throw InvalidConfig("gauss_legendre: need at least one node");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (slot) return *slot;

  // Boost returns the non-negative roots; mirror them.
  const std::vector<double> positive =
      boost::math::legendre_p_zeros<double>(n);
  std::vector<double> nodes;
  for (double x : positive) {
    nodes.push_back(x);
    if (x != 0.0) nodes.push_back(-x);
  }
  std::sort(nodes.begin(), nodes.end());
  auto rule = std::make_unique<QuadratureRule>();
  rule->nodes = nodes;
  for (double x : nodes) {
    const double dp = boost::math::legendre_p_prime<double>(n, x);
    rule->weights.push_back(2.0 / ((1.0 - x * x) * dp * dp));
  }
  slot = std::move(rule);
  return *slot;
}

}  // namespace xlsum
