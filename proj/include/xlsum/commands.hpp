#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <ostream>
#include <string>

#include "xlsum/config.hpp"

namespace xlsum::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kBudgetExceeded = 3,
  kDiverged = 4,
  kShapeMismatch = 5,
};

int exit_code_for(const std::exception& e);

enum class DataSplit { train, test };

/// Labeled dataset plus manifest. train uses dataset.samples instances,
/// test uses dataset.test_samples from an independent seed.
void gen_data(const ExperimentConfig& config, const std::filesystem::path& out,
              DataSplit split, bool verify_labels, std::ostream& log);

/// Trains the ensemble on a dataset; writes the checkpoint and <out>.curve.csv.
void train_model(const ExperimentConfig& config,
                 const std::filesystem::path& dataset,
                 const std::filesystem::path& out, std::ostream& log);

/// Benchmark table over the configured SNR grid.
void eval_model(const ExperimentConfig& config,
                const std::filesystem::path& model,
                const std::filesystem::path& dataset,
                const std::filesystem::path& out, std::ostream& log);

/// Oracle wall time and assignment-space size per fresh instance.
void oracle_timing(const ExperimentConfig& config, std::uint64_t instances,
                   const std::filesystem::path& out, std::ostream& log);

/// Parses argv, runs one subcommand and returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xlsum::cli
