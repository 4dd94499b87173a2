#include "xlsum/channel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include "xlsum/errors.hpp"

namespace xlsum {

ArrayGeometry::ArrayGeometry(int antennas, double wavelength, double spacing)
    : antennas_(antennas),
      wavelength_(wavelength),
      spacing_(spacing > 0.0 ? spacing : 0.5 * wavelength) {
  if (antennas_ < 2) throw InvalidConfig("array needs at least 2 antennas");
  if (!(wavelength_ > 0.0) || !std::isfinite(wavelength_)) {
    throw InvalidConfig("wavelength must be positive");
  }
}

UserGeometry UserGeometry::make(double distance, double azimuth,
                                double attenuation, double scatter_radius) {
  if (!(distance > 0.0) || !(scatter_radius > 0.0)) {
    throw InvalidConfig("user distance and scatter radius must be positive");
  }
  UserGeometry user;
  user.distance = distance;
  user.azimuth = azimuth;
  user.attenuation = attenuation;
  user.scatter_radius = scatter_radius;
  user.angular_spread = std::atan(scatter_radius / distance);
  return user;
}

double UserGeometry::large_scale_gain(double pathloss_exponent) const {
  return attenuation * std::pow(distance, -pathloss_exponent);
}

int VisibilityRegion::overlap(const VisibilityRegion& other) const {
  return std::max(0, std::min(end(), other.end()) -
                         std::max(start, other.start));
}

void ChannelConfig::validate(const ArrayGeometry& geometry) const {
  const int m = geometry.antennas();
  if (vr_min < 1 || vr_min > vr_max) {
    throw InvalidConfig("visibility-region length bounds need 1 <= l1 <= l2");
  }
  if (vr_max > m) {
    throw InvalidConfig("visibility-region upper bound " +
                        std::to_string(vr_max) + " exceeds antenna count " +
                        std::to_string(m));
  }
  if (kl_rank < 1 || kl_rank > m) {
    throw InvalidConfig("KL rank must lie in [1, M]");
  }
  if (quadrature_points < 8) {
    throw InvalidConfig("quadrature needs at least 8 nodes");
  }
  if (!(distance_min > 0.0) || distance_min > distance_max) {
    throw InvalidConfig("user distance range must be positive and ordered");
  }
  if (azimuth_min > azimuth_max) {
    throw InvalidConfig("azimuth range must be ordered");
  }
  if (!(scatter_radius > 0.0)) {
    throw InvalidConfig("scatter radius must be positive");
  }
  if (!(attenuation > 0.0)) throw InvalidConfig("attenuation must be positive");
}

UserPlacement place_users(int users, const ArrayGeometry& geometry,
                          const ChannelConfig& config, Rng& rng) {
  if (users < 1) throw InvalidConfig("need at least one user");
  config.validate(geometry);
  const int m = geometry.antennas();
  UserPlacement out;
  for (int k = 0; k < users; ++k) {
    const double center = rng.uniform(0.0, static_cast<double>(m));
    const int length =
        static_cast<int>(rng.uniform_int(config.vr_min, config.vr_max));
    int start = static_cast<int>(std::floor(center - 0.5 * length));
    // Shift inward so the drawn length survives at the array edges.
    start = std::clamp(start, 0, m - length);
    out.vrs.push_back({start, length});

    const double distance =
        rng.uniform(config.distance_min, config.distance_max);
    const double azimuth = rng.uniform(config.azimuth_min, config.azimuth_max);
    out.users.push_back(UserGeometry::make(distance, azimuth,
                                           config.attenuation,
                                           config.scatter_radius));
  }
  return out;
}

namespace {

/// Covariance restricted to the region block; Toeplitz for a ULA.
ComplexMatrix one_ring_block(const UserGeometry& user, int length,
                             const ArrayGeometry& geometry, int n_quad) {
  const QuadratureRule& rule = gauss_legendre(n_quad);
  const double k0 = 2.0 * std::numbers::pi / geometry.wavelength();
  const double spread = user.angular_spread;
  const Eigen::Vector2d origin = geometry.position(0);

  std::vector<Complex> lag_value(static_cast<std::size_t>(length));
  lag_value[0] = Complex(1.0, 0.0);
  for (int lag = 1; lag < length; ++lag) {
    const Eigen::Vector2d delta = geometry.position(lag) - origin;
    Complex acc(0.0, 0.0);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double angle = spread * rule.nodes[i] + user.azimuth;
      const double phase =
          -k0 * (std::cos(angle) * delta.x() + std::sin(angle) * delta.y());
      acc += rule.weights[i] * std::polar(1.0, phase);
    }
    // (1 / 2 Delta) * Delta * sum w_i g(Delta t_i)
    lag_value[static_cast<std::size_t>(lag)] = 0.5 * acc;
  }

  ComplexMatrix block(length, length);
  for (int p = 0; p < length; ++p) {
    for (int q = 0; q < length; ++q) {
      block(p, q) = p >= q ? lag_value[static_cast<std::size_t>(p - q)]
                           : std::conj(lag_value[static_cast<std::size_t>(q - p)]);
    }
  }
  return block;
}

void require_in_array(const VisibilityRegion& vr, const ArrayGeometry& g) {
  if (vr.start < 0 || vr.length < 1 || vr.end() > g.antennas()) {
    throw InvalidConfig("visibility region outside the array");
  }
}

}  // namespace

ComplexMatrix one_ring_covariance(const UserGeometry& user,
                                  const VisibilityRegion& vr,
                                  const ArrayGeometry& geometry, int n_quad) {
  require_in_array(vr, geometry);
  ComplexMatrix r = ComplexMatrix::Zero(geometry.antennas(), geometry.antennas());
  r.block(vr.start, vr.start, vr.length, vr.length) =
      one_ring_block(user, vr.length, geometry, n_quad);
  return r;
}

KlFactors kl_factors(const ComplexMatrix& covariance, int zeta) {
  const EigDecomposition eig = hermitian_eig(covariance);
  const int n = static_cast<int>(covariance.rows());
  const int rank = std::clamp(zeta, 0, n);
  const double top = eig.eigenvalues.empty() ? 0.0 : eig.eigenvalues.front();
  KlFactors out;
  out.basis = eig.eigenvectors.leftCols(rank);
  for (int i = 0; i < rank; ++i) {
    double lambda = eig.eigenvalues[static_cast<std::size_t>(i)];
    if (lambda < 0.0) {
      if (lambda < -1e-10 * std::max(top, 0.0) && lambda < -1e-300) {
        throw NonHermitian("kl_factors: covariance is not positive semidefinite");
      }
      lambda = 0.0;
    }
    out.sqrt_eigenvalues.push_back(std::sqrt(lambda));
  }
  return out;
}

KlFactors user_kl_factors(const UserGeometry& user, const VisibilityRegion& vr,
                          const ArrayGeometry& geometry,
                          const ChannelConfig& config) {
  require_in_array(vr, geometry);
  const ComplexMatrix block =
      one_ring_block(user, vr.length, geometry, config.quadrature_points);
  KlFactors local = kl_factors(block, std::min(config.kl_rank, vr.length));
  KlFactors out;
  out.basis = ComplexMatrix::Zero(geometry.antennas(), local.rank());
  out.basis.middleRows(vr.start, vr.length) = local.basis;
  out.sqrt_eigenvalues = std::move(local.sqrt_eigenvalues);
  return out;
}

ComplexVector sample_fading(const KlFactors& factors, Rng& rng) {
  const ComplexVector z =
      sample_complex_gaussian(static_cast<std::size_t>(factors.rank()), rng);
  ComplexVector scaled(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    scaled(i) = factors.sqrt_eigenvalues[static_cast<std::size_t>(i)] * z(i);
  }
  if (factors.rank() == 0) {
    return ComplexVector::Zero(factors.basis.rows());
  }
  return factors.basis * scaled;
}

ComplexVector sample_channel_column(const UserGeometry& user,
                                    const KlFactors& factors,
                                    const ChannelConfig& config, Rng& rng) {
  const double gain =
      std::sqrt(user.large_scale_gain(config.pathloss_exponent));
  return gain * sample_fading(factors, rng);
}

std::shared_ptr<const KlFactors> KlFactorCache::get(
    const UserGeometry& user, const VisibilityRegion& vr,
    const ArrayGeometry& geometry, const ChannelConfig& config) {
  const Key key{vr.start,
                vr.length,
                std::bit_cast<std::uint64_t>(user.distance),
                std::bit_cast<std::uint64_t>(user.azimuth),
                std::bit_cast<std::uint64_t>(user.scatter_radius),
                std::bit_cast<std::uint64_t>(geometry.wavelength()),
                std::bit_cast<std::uint64_t>(geometry.spacing()),
                config.quadrature_points,
                config.kl_rank};
  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      hits_.fetch_add(1, std::memory_order_relaxed);
      return it->second;
    }
  }
  auto factors = std::make_shared<const KlFactors>(
      user_kl_factors(user, vr, geometry, config));
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.emplace(key, factors);
  return it->second;
}

std::size_t KlFactorCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::size_t KlFactorCache::hits() const {
  return hits_.load(std::memory_order_relaxed);
}

ChannelMatrix generate_channel_matrix(int users, const ArrayGeometry& geometry,
                                      const ChannelConfig& config, Rng& rng,
                                      KlFactorCache* cache) {
  UserPlacement placement = place_users(users, geometry, config, rng);
  ChannelMatrix out;
  out.h = ComplexMatrix::Zero(geometry.antennas(), users);
  for (int k = 0; k < users; ++k) {
    const auto& user = placement.users[static_cast<std::size_t>(k)];
    const auto& vr = placement.vrs[static_cast<std::size_t>(k)];
    if (cache != nullptr) {
      const auto factors = cache->get(user, vr, geometry, config);
      out.h.col(k) = sample_channel_column(user, *factors, config, rng);
    } else {
      const KlFactors factors = user_kl_factors(user, vr, geometry, config);
      out.h.col(k) = sample_channel_column(user, factors, config, rng);
    }
  }
  out.vrs = std::move(placement.vrs);
  out.users = std::move(placement.users);
  return out;
}

}  // namespace xlsum
