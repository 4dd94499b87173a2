#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <tuple>
#include <utility>
#include <vector>

#include "xlsum/numerics.hpp"

namespace xlsum {

/// Uniform linear array along the x axis.
class ArrayGeometry {
 public:
  /// spacing <= 0 selects half a wavelength.
  ArrayGeometry(int antennas, double wavelength, double spacing = 0.0);

  int antennas() const { return antennas_; }
  double wavelength() const { return wavelength_; }
  double spacing() const { return spacing_; }
  Eigen::Vector2d position(int m) const { return {m * spacing_, 0.0}; }

 private:
  int antennas_;
  double wavelength_;
  double spacing_;
};

struct UserGeometry {
  double distance = 0.0;        // s, meters
  double azimuth = 0.0;         // theta, radians
  double attenuation = 1.0;     // beta
  double scatter_radius = 0.0;  // r, meters
  double angular_spread = 0.0;  // Delta = atan(r / s)

  static UserGeometry make(double distance, double azimuth, double attenuation,
                           double scatter_radius);
  /// Large-scale gain beta * s^-alpha.
  double large_scale_gain(double pathloss_exponent) const;

  friend bool operator==(const UserGeometry&, const UserGeometry&) = default;
};

/// Contiguous antenna interval [start, start + length).
struct VisibilityRegion {
  int start = 0;
  int length = 0;

  int end() const { return start + length; }
  bool contains(int m) const { return m >= start && m < end(); }
  int overlap(const VisibilityRegion& other) const;

  friend bool operator==(const VisibilityRegion&,
                         const VisibilityRegion&) = default;
};

struct ChannelConfig {
  double pathloss_exponent = 3.0;
  double attenuation = 2.0;
  int kl_rank = 8;
  int vr_min = 8;
  int vr_max = 16;
  int quadrature_points = 64;
  double distance_min = 20.0;
  double distance_max = 80.0;
  double azimuth_min = 0.25 * 3.14159265358979323846;
  double azimuth_max = 0.75 * 3.14159265358979323846;
  double scatter_radius = 5.0;

  /// Throws InvalidConfig for internally inconsistent values.
  void validate(const ArrayGeometry& geometry) const;
};

struct ChannelMatrix {
  ComplexMatrix h;  // M x K
  std::vector<VisibilityRegion> vrs;
  std::vector<UserGeometry> users;

  int antennas() const { return static_cast<int>(h.rows()); }
  int users_count() const { return static_cast<int>(h.cols()); }
};

struct KlFactors {
  ComplexMatrix basis;                // M x zeta, orthonormal columns
  std::vector<double> sqrt_eigenvalues;

  int rank() const { return static_cast<int>(sqrt_eigenvalues.size()); }
};

struct UserPlacement {
  std::vector<UserGeometry> users;
  std::vector<VisibilityRegion> vrs;
};

UserPlacement place_users(int users, const ArrayGeometry& geometry,
                          const ChannelConfig& config, Rng& rng);

/**
 * One-ring spatial correlation of a user, M x M.
 *
 * Entries inside the visibility region are the average of
 * exp(j f(a + theta) . (u_p - u_q)) over a in [-Delta, Delta] with
 * f(v) = -(2 pi / lambda)(cos v, sin v), integrated by n_quad-node
 * Gauss-Legendre quadrature; entries with either index outside the region are
 * exactly zero.
 */
ComplexMatrix one_ring_covariance(const UserGeometry& user,
                                  const VisibilityRegion& vr,
                                  const ArrayGeometry& geometry, int n_quad);

/// Top-zeta eigenpairs of a Hermitian PSD matrix (zeta clamped to its size).
KlFactors kl_factors(const ComplexMatrix& covariance, int zeta);

/// KL factors computed on the region block and embedded in M rows, with
/// rank min(zeta, region length).
KlFactors user_kl_factors(const UserGeometry& user, const VisibilityRegion& vr,
                          const ArrayGeometry& geometry,
                          const ChannelConfig& config);

/// Small-scale fading draw U diag(sqrt_lambda) z.
ComplexVector sample_fading(const KlFactors& factors, Rng& rng);

/// sqrt(w) U diag(sqrt_lambda) z, w = beta s^-alpha.
ComplexVector sample_channel_column(const UserGeometry& user,
                                    const KlFactors& factors,
                                    const ChannelConfig& config, Rng& rng);

/// Thread-safe memo of KL factors keyed by region and user geometry.
class KlFactorCache {
 public:
  std::shared_ptr<const KlFactors> get(const UserGeometry& user,
                                       const VisibilityRegion& vr,
                                       const ArrayGeometry& geometry,
                                       const ChannelConfig& config);
  std::size_t size() const;
  std::size_t hits() const;

 private:
  using Key = std::tuple<int, int, std::uint64_t, std::uint64_t, std::uint64_t,
                         std::uint64_t, std::uint64_t, int, int>;
  mutable std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const KlFactors>> entries_;
  std::atomic<std::size_t> hits_{0};
};

/// place_users, then per user covariance -> KL factors -> column.
ChannelMatrix generate_channel_matrix(int users, const ArrayGeometry& geometry,
                                      const ChannelConfig& config, Rng& rng,
                                      KlFactorCache* cache = nullptr);

}  // namespace xlsum
