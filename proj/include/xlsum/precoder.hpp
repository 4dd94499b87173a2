#pragma once

#include <cstdint>
#include <vector>

#include "xlsum/numerics.hpp"

namespace xlsum {

/// Binary antenna-by-user mask; column k marks user k's processing window.
struct SelectionMatrix {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;

  static SelectionMatrix ones(int antennas, int users);
  static SelectionMatrix zeros(int antennas, int users);
  int antennas() const { return static_cast<int>(mask.rows()); }
  int users() const { return static_cast<int>(mask.cols()); }
};

struct PowerConfig {
  std::vector<double> user_power;  // diagonal of P
  double total_power = 1.0;
  double noise_variance = 1.0;

  static PowerConfig uniform(int users, double total_power,
                             double noise_variance);
  /// P = I, P_T = 1, noise variance 10^(-snr_db / 10).
  static PowerConfig from_snr_db(int users, double snr_db);
  /// P_T / sigma^2 in dB.
  double snr_db() const;
  void validate(int users) const;
};

ComplexMatrix truncate_channel(const ComplexMatrix& h,
                               const SelectionMatrix& selection);

/// c H_T (H_T^H H_T)^-1 with c^2 = P_T / trace(P (H_T^H H_T)^-1).
/// Throws IllConditioned when the Gram matrix cannot be solved safely.
ComplexMatrix zf_precoder(const ComplexMatrix& truncated,
                          const PowerConfig& power);

/// Per-user SINR against the full channel, so leakage from antennas outside a
/// user's window counts as interference.
std::vector<double> sinr(const ComplexMatrix& h, const ComplexMatrix& precoder,
                         const PowerConfig& power);

/// Sum of log2(1 + gamma_k).
double sum_rate(const std::vector<double>& gamma);

struct SelectionEvaluation {
  double sum_rate = 0.0;       // -inf when infeasible
  std::vector<double> sinr;    // empty when infeasible
  bool feasible() const { return !sinr.empty(); }
};

/// truncate -> zf -> sinr -> sum_rate; ill-conditioned selections score -inf.
SelectionEvaluation evaluate_selection(const ComplexMatrix& h,
                                       const SelectionMatrix& selection,
                                       const PowerConfig& power);

}  // namespace xlsum
