#include "xlsum/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include <CLI11.hpp>

#include "xlsum/dataset.hpp"
#include "xlsum/errors.hpp"
#include "xlsum/pasumcnn.hpp"

namespace xlsum::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidConfig*>(&e) != nullptr) return kConfigError;
  if (dynamic_cast<const BudgetExceeded*>(&e) != nullptr) return kBudgetExceeded;
  if (dynamic_cast<const Diverged*>(&e) != nullptr) return kDiverged;
  if (dynamic_cast<const ShapeMismatch*>(&e) != nullptr ||
      dynamic_cast<const DimensionMismatch*>(&e) != nullptr) {
    return kShapeMismatch;
  }
  return kFailure;
}

namespace {

/// Writes to a sibling temporary and renames on success, so a failed command
/// never leaves a truncated output behind.
class StagedFile {
 public:
  explicit StagedFile(fs::path target) : target_(std::move(target)) {
    staged_ = target_;
    staged_ += ".partial";
  }
  StagedFile(const StagedFile&) = delete;
  StagedFile& operator=(const StagedFile&) = delete;
  ~StagedFile() {
    if (!committed_) {
      std::error_code ignored;
      fs::remove(staged_, ignored);
    }
  }

  const fs::path& path() const { return staged_; }
  void commit() {
    fs::rename(staged_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staged_;
  bool committed_ = false;
};

void write_text(StagedFile& file, const std::string& text) {
  std::ofstream out(file.path(), std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + file.path().string());
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Odometer enumeration written independently of the library oracle.
std::optional<std::string> verify_sample(const Sample& s, const ClassGrid& grid,
                                         const PowerConfig& power,
                                         bool restrict_to_vr) {
  const int users = s.channel.users_count();
  std::vector<std::vector<int>> options(static_cast<std::size_t>(users));
  for (int k = 0; k < users; ++k) {
    if (restrict_to_vr) {
      options[static_cast<std::size_t>(k)] =
          candidate_classes(s.channel.vrs[static_cast<std::size_t>(k)], grid);
    } else {
      for (int c = 0; c < grid.classes(); ++c) options[static_cast<std::size_t>(k)].push_back(c);
    }
  }
  std::vector<std::size_t> digit(static_cast<std::size_t>(users), 0);
  Assignment current;
  current.class_of.resize(static_cast<std::size_t>(users));
  Assignment best;
  double best_rate = -INFINITY;
  for (;;) {
    for (std::size_t k = 0; k < digit.size(); ++k) current.class_of[k] = options[k][digit[k]];
    const double rate = evaluate_assignment(s.channel.h, grid, current, power).sum_rate;
    if (best.class_of.empty() || rate > best_rate) {
      best_rate = rate;
      best = current;
    }
    bool wrapped = true;
    for (std::size_t pos = digit.size(); pos-- > 0;) {
      if (++digit[pos] < options[pos].size()) {
        wrapped = false;
        break;
      }
      digit[pos] = 0;
    }
    if (wrapped) break;
  }
  if (best.class_of != s.labels) return "label differs from brute-force argmax";
  if (std::abs(best_rate - s.oracle_rate) > 1e-12 * std::max(1.0, std::abs(best_rate))) {
    return "stored sum-rate differs from brute force";
  }
  return std::nullopt;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

void gen_data(const ExperimentConfig& config, const fs::path& out,
              DataSplit split, bool verify_labels, std::ostream& log) {
  config.validate();
  const bool test = split == DataSplit::test;
  const std::uint64_t count = test ? config.test_samples : config.samples;
  const std::uint64_t seed =
      derive_seed(config.seed, test ? "gen-data/test" : "gen-data/train");
  const auto start = Clock::now();
  const DatasetFile d =
      generate_dataset(config.scenario, count, seed, config.resolved_threads());

  if (verify_labels) {
    const ClassGrid grid = d.grid();
    const PowerConfig power = d.label_power();
    std::uint64_t checked = 0;
    for (const Sample& s : d.samples) {
      const auto space = assignment_space_size(
          oracle_candidates(s.channel, grid, config.scenario.restrict_to_vr));
      if (space > 10'000) continue;
      if (auto problem = verify_sample(s, grid, power, config.scenario.restrict_to_vr)) {
        throw Error("label verification failed for sample " +
                    std::to_string(s.index) + ": " + *problem);
      }
      ++checked;
    }
    log << "verified " << checked << " of " << d.samples.size()
        << " labels against brute force\n";
  }

  ensure_parent(out);
  StagedFile data(out);
  save_dataset(d, data.path());
  StagedFile manifest(manifest_path(out));
  fs::rename(manifest_path(data.path()), manifest.path());
  data.commit();
  manifest.commit();

  log << "wrote " << d.samples.size() << " samples to " << out.string() << "\n";
  log << "label distribution (user: counts per class)\n";
  for (int k = 0; k < d.header.users; ++k) {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(d.header.classes), 0);
    for (const Sample& s : d.samples) ++counts[static_cast<std::size_t>(s.labels[static_cast<std::size_t>(k)])];
    log << "  user " << k << ":";
    for (auto c : counts) log << " " << c;
    log << "\n";
  }
  log << "elapsed " << seconds_since(start) << " s\n";
}

void train_model(const ExperimentConfig& config, const fs::path& dataset,
                 const fs::path& out, std::ostream& log) {
  config.validate();
  const DatasetFile d = load_dataset(dataset);
  Rng split_rng(derive_seed(config.seed, "split"));
  const auto [train_set, validation_set] =
      split_dataset(d, config.validation_fraction, split_rng);

  nn::TrainConfig train_config = config.train;
  train_config.seed = derive_seed(config.seed, "train");
  MapperEnsemble ensemble = make_ensemble(d, config.ensemble, config.vr_masking,
                                          train_config, derive_seed(config.seed, "init"));
  log << "training " << ensemble.networks.size() << " network(s) on "
      << train_set.samples.size() << " samples, validating on "
      << validation_set.samples.size() << "\n";
  const auto start = Clock::now();
  const auto curves = train_ensemble(ensemble, train_set, validation_set);

  ensure_parent(out);
  fs::path curve_path = out;
  curve_path += ".curve.csv";
  StagedFile model(out);
  StagedFile curve(curve_path);
  save_ensemble(ensemble, model.path());
  write_text(curve, curve_csv(curves));
  model.commit();
  curve.commit();

  for (std::size_t n = 0; n < curves.size(); ++n) {
    if (curves[n].empty()) continue;
    const nn::EpochStats& last = curves[n].back();
    log << "network " << n << ": epoch " << last.epoch << " loss " << last.loss
        << " train " << last.train_accuracy << "% val " << last.validation_accuracy
        << "% val (VR-masked) " << last.validation_masked_accuracy << "%\n";
  }
  log << "elapsed " << seconds_since(start) << " s\n";
}

void eval_model(const ExperimentConfig& config, const fs::path& model,
                const fs::path& dataset, const fs::path& out, std::ostream& log) {
  config.validate();
  const MapperEnsemble ensemble = load_ensemble(model);
  const DatasetFile d = load_dataset(dataset);
  BenchmarkOptions options;
  options.oracle_budget = config.scenario.oracle_budget;
  options.threads = config.resolved_threads();
  const auto rows = benchmark(ensemble, d, config.snr_grid, options);

  ensure_parent(out);
  StagedFile csv(out);
  write_text(csv, benchmark_csv(rows));
  csv.commit();

  double gap = 0.0;
  double greedy_gap = 0.0;
  for (const BenchmarkRow& r : rows) {
    log << "snr " << r.snr_db << " dB: gap " << r.gap_pct << "% (greedy "
        << r.greedy_gap_pct << "%), accuracy " << r.accuracy_pct
        << "%, feasible " << r.cnn_feasible_pct << "% (greedy "
        << r.greedy_feasible_pct << "%)\n";
    gap += r.gap_pct;
    greedy_gap += r.greedy_gap_pct;
  }
  log << "mean gap " << gap / static_cast<double>(rows.size()) << "% vs greedy "
      << greedy_gap / static_cast<double>(rows.size()) << "%\n";
}

void oracle_timing(const ExperimentConfig& config, std::uint64_t instances,
                   const fs::path& out, std::ostream& log) {
  config.validate();
  const ScenarioConfig& s = config.scenario;
  const ClassGrid grid = s.grid();
  const ArrayGeometry geometry = s.geometry();
  const PowerConfig power = s.label_power();
  const Rng base(derive_seed(config.seed, "oracle"));
  OracleOptions options;
  options.restrict_to_vr = s.restrict_to_vr;
  options.budget = s.oracle_budget;
  options.threads = config.resolved_threads();

  std::string csv = "instance,space_size,oracle_rate,wall_seconds\n";
  double total = 0.0;
  for (std::uint64_t i = 0; i < instances; ++i) {
    Rng rng = base.split(i);
    const ChannelMatrix channel = generate_channel_matrix(s.users, geometry, s.channel, rng);
    const auto start = Clock::now();
    std::uint64_t space = 0;
    double rate = -std::numeric_limits<double>::infinity();
    try {
      const OracleResult r = exhaustive_oracle(channel, grid, power, options);
      space = r.space_size;
      rate = r.sum_rate;
    } catch (const AllInfeasible&) {
      // Still a full scan; record it with a rate of -inf.
      space = assignment_space_size(oracle_candidates(channel, grid, options.restrict_to_vr));
    }
    const double wall = seconds_since(start);
    total += wall;
    csv += std::to_string(i) + "," + std::to_string(space) + "," + format_number(rate) + "," +
           format_number(wall) + "\n";
  }
  ensure_parent(out);
  StagedFile file(out);
  write_text(file, csv);
  file.commit();
  log << "oracle: " << instances << " instances, mean "
      << (instances > 0 ? total / static_cast<double>(instances) : 0.0)
      << " s per instance\n";
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial user mapping for extra-large arrays: data, training, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_path;
  app.add_option("--config", config_path, "Experiment configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the base seed");
  app.add_option("--threads", threads, "Worker threads (0: all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", out_path, "Output file")->required();

  auto* gen = app.add_subcommand("gen-data", "Generate and label a dataset");
  bool verify = false;
  bool test_split = false;
  gen->add_flag("--verify-labels", verify, "Recheck labels by brute force");
  gen->add_flag("--test", test_split, "Generate the held-out test set");

  auto* train = app.add_subcommand("train", "Train the mapper networks");
  std::string train_data;
  train->add_option("--data", train_data, "Dataset file")->required();

  auto* eval = app.add_subcommand("eval", "Benchmark a trained model");
  std::string model_path;
  std::string eval_data;
  std::vector<double> snr_grid;
  eval->add_option("--model", model_path, "Model checkpoint")->required();
  eval->add_option("--data", eval_data, "Test dataset file")->required();
  eval->add_option("--snr", snr_grid, "Override the SNR grid (dB)")->delimiter(',');

  auto* oracle = app.add_subcommand("oracle", "Time the exhaustive oracle");
  std::uint64_t instances = 10;
  oracle->add_option("--instances", instances, "Number of fresh instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (!snr_grid.empty()) config.snr_grid = snr_grid;

    if (gen->parsed()) {
      gen_data(config, out_path, test_split ? DataSplit::test : DataSplit::train,
               verify, out);
    } else if (train->parsed()) {
      train_model(config, train_data, out_path, out);
    } else if (eval->parsed()) {
      eval_model(config, model_path, eval_data, out_path, out);
    } else if (oracle->parsed()) {
      oracle_timing(config, instances, out_path, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace xlsum::cli
