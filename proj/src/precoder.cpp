#include "xlsum/precoder.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "xlsum/errors.hpp"

namespace xlsum {

SelectionMatrix SelectionMatrix::ones(int antennas, int users) {
  SelectionMatrix s;
  s.mask.setConstant(antennas, users, 1);
  return s;
}

SelectionMatrix SelectionMatrix::zeros(int antennas, int users) {
  SelectionMatrix s;
  s.mask.setZero(antennas, users);
  return s;
}

PowerConfig PowerConfig::uniform(int users, double total_power,
                                 double noise_variance) {
  PowerConfig p;
  p.user_power.assign(static_cast<std::size_t>(users), 1.0);
  p.total_power = total_power;
  p.noise_variance = noise_variance;
  return p;
}

PowerConfig PowerConfig::from_snr_db(int users, double snr_db) {
  return uniform(users, 1.0, std::pow(10.0, -snr_db / 10.0));
}

double PowerConfig::snr_db() const {
  return 10.0 * std::log10(total_power / noise_variance);
}

void PowerConfig::validate(int users) const {
  if (static_cast<int>(user_power.size()) != users) {
    throw DimensionMismatch("power config has " +
                            std::to_string(user_power.size()) +
                            " user powers for " + std::to_string(users) +
                            " users");
  }
  for (double p : user_power) {
    if (!(p > 0.0)) throw InvalidConfig("user powers must be positive");
  }
  if (!(total_power > 0.0) || !(noise_variance > 0.0)) {
    throw InvalidConfig("total power and noise variance must be positive");
  }
}

ComplexMatrix truncate_channel(const ComplexMatrix& h,
                               const SelectionMatrix& selection) {
  if (h.rows() != selection.mask.rows() || h.cols() != selection.mask.cols()) {
    throw DimensionMismatch("truncate_channel: selection shape differs from H");
  }
  ComplexMatrix out = ComplexMatrix::Zero(h.rows(), h.cols());
  for (Eigen::Index k = 0; k < h.cols(); ++k) {
    for (Eigen::Index m = 0; m < h.rows(); ++m) {
      if (selection.mask(m, k) != 0) out(m, k) = h(m, k);
    }
  }
  return out;
}

ComplexMatrix zf_precoder(const ComplexMatrix& truncated,
                          const PowerConfig& power) {
  const Eigen::Index users = truncated.cols();
  power.validate(static_cast<int>(users));
  const ComplexMatrix gram = truncated.adjoint() * truncated;
  const ComplexMatrix gram_inv =
      solve_hermitian(gram, ComplexMatrix::Identity(users, users));
  double weighted_trace = 0.0;
  for (Eigen::Index k = 0; k < users; ++k) {
    weighted_trace += power.user_power[static_cast<std::size_t>(k)] *
                      gram_inv(k, k).real();
  }
  if (!(weighted_trace > 0.0) || !std::isfinite(weighted_trace)) {
    throw IllConditioned("zf_precoder: non-positive normalization trace");
  }
  const double scale = std::sqrt(power.total_power / weighted_trace);
  return scale * (truncated * gram_inv);
}

std::vector<double> sinr(const ComplexMatrix& h, const ComplexMatrix& precoder,
                         const PowerConfig& power) {
  if (h.rows() != precoder.rows() || h.cols() != precoder.cols()) {
    throw DimensionMismatch("sinr: precoder shape differs from H");
  }
  const Eigen::Index users = h.cols();
  power.validate(static_cast<int>(users));
  // gains(k, j) = h_k^H f_j
  const ComplexMatrix gains = h.adjoint() * precoder;
  std::vector<double> out(static_cast<std::size_t>(users));
  for (Eigen::Index k = 0; k < users; ++k) {
    double interference = 0.0;
    for (Eigen::Index j = 0; j < users; ++j) {
      if (j == k) continue;
      interference +=
          std::norm(gains(k, j)) * power.user_power[static_cast<std::size_t>(j)];
    }
    const double signal =
        std::norm(gains(k, k)) * power.user_power[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(k)] =
        signal / (interference + power.noise_variance);
  }
  return out;
}

double sum_rate(const std::vector<double>& gamma) {
  double total = 0.0;
  for (double g : gamma) total += std::log1p(g) / std::numbers::ln2;
  return total;
}

SelectionEvaluation evaluate_selection(const ComplexMatrix& h,
                                       const SelectionMatrix& selection,
                                       const PowerConfig& power) {
  SelectionEvaluation out;
  try {
    const ComplexMatrix precoder =
        zf_precoder(truncate_channel(h, selection), power);
    out.sinr = sinr(h, precoder, power);
    out.sum_rate = sum_rate(out.sinr);
  } catch (const IllConditioned&) {
    out.sinr.clear();
    out.sum_rate = -std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace xlsum
