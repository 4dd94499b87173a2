#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xlsum/dataset.hpp"
#include "xlsum/errors.hpp"
#include "xlsum/nn.hpp"
#include "xlsum/pasumcnn.hpp"

namespace xlsum {

/// Configuration problem tied to a source location (line 0: not from a line).
class ConfigError : public InvalidConfig {
 public:
  ConfigError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

/// Everything one experiment needs; every field has a desk-scale default.
struct ExperimentConfig {
  ScenarioConfig scenario;
  nn::TrainConfig train;
  EnsembleMode ensemble = EnsembleMode::shared;
  bool vr_masking = true;
  std::uint64_t samples = 2000;
  std::uint64_t test_samples = 200;
  double validation_fraction = 0.2;
  std::vector<double> snr_grid{0.0, 10.0, 20.0};
  std::uint64_t seed = 1;
  int threads = 0;  // 0: all available cores

  /// Source line of each "section.key" that was set, for diagnostics.
  std::map<std::string, int> lines;
  std::string source = "<defaults>";

  int resolved_threads() const;
  /// Cross-field checks; throws ConfigError naming the offending line.
  void validate() const;
};

/**
 * Parses sectioned key = value text. '#' and ';' start comments, lists are
 * comma separated, booleans are true/false. Unknown sections or keys are
 * errors.
 */
ExperimentConfig parse_config(std::string_view text,
                              const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace xlsum
