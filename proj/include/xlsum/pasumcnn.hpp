#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xlsum/dataset.hpp"
#include "xlsum/mapper.hpp"
#include "xlsum/nn.hpp"

namespace xlsum {

enum class EnsembleMode : std::uint32_t {
  shared = 1,    // one network replicated for every user
  per_user = 2,  // one network per user position
};

std::string to_string(EnsembleMode mode);
EnsembleMode parse_ensemble_mode(const std::string& text);

/// The trained per-user mappers plus what is needed to feed them.
struct MapperEnsemble {
  EnsembleMode mode = EnsembleMode::shared;
  TensorDims dims;
  ClassGrid grid;
  bool vr_masking = true;
  nn::TrainConfig train_config;
  std::vector<nn::Network> networks;

  const nn::Network& network_for(int user) const;
  nn::Shape input_shape() const { return {dims.rows, dims.cols, InputTensor::kPlanes}; }
  void validate(int users) const;
};

bool operator==(const MapperEnsemble& a, const MapperEnsemble& b);

/// Classifier input for one user of one channel.
std::vector<double> user_input(const ChannelMatrix& channel, int user,
                               const TensorDims& dims);

/**
 * Expands samples into (tensor, label) pairs. With no user given every user
 * of every sample contributes, which is what the shared network trains on.
 * allowed[i] holds the VR candidate classes of that user.
 */
nn::LabeledSet user_examples(const DatasetFile& d,
                             std::optional<int> user = std::nullopt);

/// Fresh, untrained ensemble for a dataset's geometry.
MapperEnsemble make_ensemble(const DatasetFile& d, EnsembleMode mode,
                             bool vr_masking, const nn::TrainConfig& config,
                             std::uint64_t init_seed);

/// Training curves, one per network.
std::vector<std::vector<nn::EpochStats>> train_ensemble(
    MapperEnsemble& ensemble, const DatasetFile& train_set,
    const DatasetFile& validation_set);

/// Per-user argmax over the (optionally VR-masked) class probabilities.
Assignment infer_mapping(const MapperEnsemble& ensemble,
                         const ChannelMatrix& channel, int threads = 1);

/// Sum-rate of an assignment; infeasible assignments give -inf.
SelectionEvaluation evaluate_mapping(const ChannelMatrix& channel,
                                     const ClassGrid& grid,
                                     const Assignment& a,
                                     const PowerConfig& power);

struct BenchmarkRow {
  double snr_db = 0.0;
  double oracle_rate = 0.0;
  double cnn_rate = 0.0;
  double greedy_rate = 0.0;
  double accuracy_pct = 0.0;
  double gap_pct = 0.0;
  double greedy_gap_pct = 0.0;
  double cnn_feasible_pct = 0.0;
  double greedy_feasible_pct = 0.0;
};

struct BenchmarkOptions {
  std::uint64_t oracle_budget = 1'000'000;
  int threads = 1;
};

/**
 * Oracle, network and greedy sum-rates averaged over the test set at each SNR.
 * The oracle is rerun at every SNR over the full grid. Infeasible network or
 * greedy assignments contribute a rate of 0 to the means. Accuracy compares
 * per-user decisions with the oracle assignment at that SNR.
 */
std::vector<BenchmarkRow> benchmark(const MapperEnsemble& ensemble,
                                    const DatasetFile& test_set,
                                    const std::vector<double>& snr_grid,
                                    const BenchmarkOptions& options = {});

/// snr_db,oracle_rate,cnn_rate,greedy_rate,accuracy_pct,gap_pct
std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);
std::string curve_csv(const std::vector<std::vector<nn::EpochStats>>& curves);

/// Fixed 17-significant-digit formatting used by every CSV.
std::string format_number(double v);

void save_ensemble(const MapperEnsemble& e, const std::filesystem::path& path);
MapperEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace xlsum
