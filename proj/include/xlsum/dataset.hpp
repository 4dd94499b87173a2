#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xlsum/channel.hpp"
#include "xlsum/mapper.hpp"
#include "xlsum/precoder.hpp"

namespace xlsum {

struct TensorDims {
  int rows = 32;  // antennas per input frame
  int cols = 4;   // users per input frame

  friend bool operator==(const TensorDims&, const TensorDims&) = default;
};

/// Everything needed to generate and label channel instances.
struct ScenarioConfig {
  int antennas = 32;
  double wavelength = 299792458.0 / 2.6e9;
  double spacing = 0.0;  // <= 0: half wavelength
  int users = 3;
  int window = 8;
  int classes = 4;
  ChannelConfig channel;
  double total_power = 1.0;
  std::vector<double> user_power;  // empty: all ones
  double label_snr_db = 10.0;
  bool restrict_to_vr = false;
  std::uint64_t oracle_budget = 1'000'000;
  TensorDims tensor;

  ArrayGeometry geometry() const;
  ClassGrid grid() const;
  /// Power configuration at the given pre-processing SNR (P_T / sigma^2).
  PowerConfig power_at(double snr_db) const;
  PowerConfig label_power() const { return power_at(label_snr_db); }
  void validate() const;
};

struct Sample {
  ChannelMatrix channel;
  std::vector<int> labels;
  double oracle_rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

struct DatasetHeader {
  static constexpr std::uint32_t kFormatMajor = 1;
  static constexpr std::uint32_t kFormatMinor = 0;

  std::uint32_t format_major = kFormatMajor;
  std::uint32_t format_minor = kFormatMinor;
  int antennas = 0;
  int users = 0;
  int classes = 0;
  int window = 0;
  TensorDims tensor;
  std::uint64_t base_seed = 0;
  double wavelength = 0.0;
  double spacing = 0.0;
  double total_power = 1.0;
  double noise_variance = 1.0;
  bool restrict_to_vr = false;
  std::vector<double> user_power;
};

struct DatasetFile {
  DatasetHeader header;
  std::vector<Sample> samples;

  ClassGrid grid() const;
  PowerConfig label_power() const;
};

bool operator==(const Sample& a, const Sample& b);
bool operator==(const DatasetHeader& a, const DatasetHeader& b);
bool operator==(const DatasetFile& a, const DatasetFile& b);

/**
 * Per-column centering and range scaling of a real plane:
 * out(i, j) = (in(i, j) - mean_i in(i, j)) / (max_i in(i, j) - min_i in(i, j)).
 * Columns with zero range map to zeros.
 */
RealMatrix normalize_channel(const RealMatrix& plane);

/// rows x cols x 3 planes (real, imaginary, phase / pi), HWC layout.
struct InputTensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  static constexpr int kPlanes = 3;
  double& at(int r, int c, int plane) {
    return values[static_cast<std::size_t>((r * cols + c) * kPlanes + plane)];
  }
  double at(int r, int c, int plane) const {
    return values[static_cast<std::size_t>((r * cols + c) * kPlanes + plane)];
  }
};

/// Column order of the tensor: target first, then co-users by overlap with
/// the target's region (descending). Ties fall back to region start, region
/// length, then channel energy (descending), so the order follows the users'
/// channels rather than their indices; the index only splits exact duplicates.
std::vector<int> tensor_user_order(const EffectiveWindow& ew,
                                   const ChannelMatrix& channel);

/**
 * Builds one user's classifier input from its effective window.
 *
 * Rows are taken from a frame of dims.rows consecutive antennas that contains
 * the effective window (row 0 is antenna 0 whenever the array fits in the
 * frame, so the class grid keeps a fixed position); rows of the frame outside
 * the window are zero. Oversized windows are cropped to a frame centered on
 * the target's region. Real and imaginary planes are normalized per column
 * over the window rows; the phase plane is arg / pi.
 */
InputTensor build_input_tensor(const ChannelMatrix& channel,
                               const EffectiveWindow& ew,
                               const TensorDims& dims);

/// Label one channel with the oracle.
Sample label_instance(ChannelMatrix channel, const ScenarioConfig& scenario,
                      std::uint64_t index, std::uint64_t seed);

/// Instance i draws from Rng(base_seed).split(i), so the output does not depend
/// on the thread count.
DatasetFile generate_dataset(const ScenarioConfig& scenario,
                             std::uint64_t count, std::uint64_t base_seed,
                             int threads = 1);

/// Stratified by joint label; sample order preserved within each part.
std::pair<DatasetFile, DatasetFile> split_dataset(const DatasetFile& d,
                                                  double validation_fraction,
                                                  Rng& rng);

void save_dataset(const DatasetFile& d, const std::filesystem::path& path);
DatasetFile load_dataset(const std::filesystem::path& path);

/// Human-readable JSON description of a dataset.
std::string dataset_manifest(const DatasetFile& d);
std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

}  // namespace xlsum
