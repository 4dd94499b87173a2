#include "xlsum/pasumcnn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "xlsum/binary_io.hpp"
#include "xlsum/errors.hpp"

namespace xlsum {

std::string to_string(EnsembleMode mode) {
  return mode == EnsembleMode::shared ? "shared" : "per_user";
}

EnsembleMode parse_ensemble_mode(const std::string& text) {
  if (text == "shared") return EnsembleMode::shared;
  if (text == "per_user") return EnsembleMode::per_user;
  throw InvalidConfig("ensemble mode must be 'shared' or 'per_user', got '" +
                      text + "'");
}

const nn::Network& MapperEnsemble::network_for(int user) const {
  if (mode == EnsembleMode::shared) return networks.at(0);
  return networks.at(static_cast<std::size_t>(user));
}

void MapperEnsemble::validate(int users) const {
  const std::size_t expected =
      mode == EnsembleMode::shared ? 1 : static_cast<std::size_t>(users);
  if (networks.size() != expected) {
    throw ShapeMismatch("ensemble holds " + std::to_string(networks.size()) +
                        " networks, expected " + std::to_string(expected));
  }
  for (const auto& net : networks) {
    if (!(net.input_shape() == input_shape())) {
      throw ShapeMismatch("network input " + nn::to_string(net.input_shape()) +
                          " differs from tensor shape " +
                          nn::to_string(input_shape()));
    }
    if (net.classes() != grid.classes()) {
      throw ShapeMismatch("network emits " + std::to_string(net.classes()) +
                          " classes, grid has " +
                          std::to_string(grid.classes()));
    }
  }
}

bool operator==(const MapperEnsemble& a, const MapperEnsemble& b) {
  return a.mode == b.mode && a.dims == b.dims &&
         a.grid.antennas == b.grid.antennas && a.grid.window == b.grid.window &&
         a.grid.starts == b.grid.starts && a.vr_masking == b.vr_masking &&
         a.train_config == b.train_config && a.networks == b.networks;
}

std::vector<double> user_input(const ChannelMatrix& channel, int user,
                               const TensorDims& dims) {
  const EffectiveWindow ew = effective_window(user, channel.vrs);
  return build_input_tensor(channel, ew, dims).values;
}

nn::LabeledSet user_examples(const DatasetFile& d, std::optional<int> user) {
  const ClassGrid grid = d.grid();
  nn::LabeledSet set;
  set.shape = {d.header.tensor.rows, d.header.tensor.cols, InputTensor::kPlanes};
  for (const Sample& s : d.samples) {
    for (int k = 0; k < d.header.users; ++k) {
      if (user && *user != k) continue;
      set.inputs.push_back(user_input(s.channel, k, d.header.tensor));
      set.labels.push_back(s.labels.at(static_cast<std::size_t>(k)));
      set.allowed.push_back(
          candidate_classes(s.channel.vrs[static_cast<std::size_t>(k)], grid));
    }
  }
  return set;
}

MapperEnsemble make_ensemble(const DatasetFile& d, EnsembleMode mode,
                             bool vr_masking, const nn::TrainConfig& config,
                             std::uint64_t init_seed) {
  MapperEnsemble e;
  e.mode = mode;
  e.dims = d.header.tensor;
  e.grid = d.grid();
  e.vr_masking = vr_masking;
  e.train_config = config;
  const auto specs = nn::default_architecture(e.grid.classes(), config.dropout);
  const int count = mode == EnsembleMode::shared ? 1 : d.header.users;
  for (int i = 0; i < count; ++i) {
    e.networks.emplace_back(e.input_shape(), specs,
                            Rng(init_seed).split(static_cast<std::uint64_t>(i)).next_u64());
  }
  return e;
}

std::vector<std::vector<nn::EpochStats>> train_ensemble(
    MapperEnsemble& ensemble, const DatasetFile& train_set,
    const DatasetFile& validation_set) {
  std::vector<std::vector<nn::EpochStats>> curves;
  for (std::size_t i = 0; i < ensemble.networks.size(); ++i) {
    std::optional<int> user;
    nn::TrainConfig cfg = ensemble.train_config;
    if (ensemble.mode == EnsembleMode::per_user) {
      user = static_cast<int>(i);
      cfg.seed = derive_seed(cfg.seed, "user-" + std::to_string(i));
    }
    curves.push_back(nn::train(ensemble.networks[i],
                               user_examples(train_set, user),
                               user_examples(validation_set, user), cfg));
  }
  return curves;
}

namespace {

int infer_user(const MapperEnsemble& ensemble, const ChannelMatrix& channel,
               int user) {
  const nn::Network& net = ensemble.network_for(user);
  nn::Tensor x(1, ensemble.input_shape());
  const std::vector<double> values = user_input(channel, user, ensemble.dims);
  std::copy(values.begin(), values.end(), x.data().begin());
  const nn::Tensor p = net.predict(x);
  std::vector<int> allowed;
  if (ensemble.vr_masking) {
    allowed = candidate_classes(channel.vrs.at(static_cast<std::size_t>(user)),
                                ensemble.grid);
  }
  return nn::argmax(p.sample(0), allowed);
}

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const int workers =
      static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = count;
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (i < error_index) {
              error_index = i;
              error = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

Assignment infer_mapping(const MapperEnsemble& ensemble,
                         const ChannelMatrix& channel, int threads) {
  const int users = channel.users_count();
  ensemble.validate(users);
  if (channel.antennas() != ensemble.grid.antennas) {
    throw ShapeMismatch("channel has " + std::to_string(channel.antennas()) +
                        " antennas, model expects " +
                        std::to_string(ensemble.grid.antennas));
  }
  Assignment a;
  a.class_of.assign(static_cast<std::size_t>(users), 0);
  parallel_for(static_cast<std::size_t>(users), threads, [&](std::size_t k) {
    a.class_of[k] = infer_user(ensemble, channel, static_cast<int>(k));
  });
  return a;
}

SelectionEvaluation evaluate_mapping(const ChannelMatrix& channel,
                                     const ClassGrid& grid,
                                     const Assignment& a,
                                     const PowerConfig& power) {
  return evaluate_assignment(channel.h, grid, a, power);
}

std::vector<BenchmarkRow> benchmark(const MapperEnsemble& ensemble,
                                    const DatasetFile& test_set,
                                    const std::vector<double>& snr_grid,
                                    const BenchmarkOptions& options) {
  if (test_set.samples.empty()) throw InvalidConfig("benchmark needs test samples");
  if (snr_grid.empty()) throw InvalidConfig("benchmark needs at least one SNR");
  const int users = test_set.header.users;
  ensemble.validate(users);
  const ClassGrid& grid = ensemble.grid;
  if (grid.antennas != test_set.header.antennas ||
      grid.classes() != test_set.header.classes ||
      grid.window != test_set.header.window || !(ensemble.dims == test_set.header.tensor)) {
    throw ShapeMismatch("model was trained for a different array or tensor layout");
  }
  const std::size_t n = test_set.samples.size();

  // Predictions do not depend on the SNR: inputs are normalized per column.
  std::vector<Assignment> predicted(n);
  std::vector<Assignment> greedy(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    predicted[i] = infer_mapping(ensemble, test_set.samples[i].channel);
    greedy[i] = energy_greedy_baseline(test_set.samples[i].channel.h, grid);
  });

  struct Outcome {
    double oracle = 0.0;
    double cnn = 0.0;
    double greedy = 0.0;
    int correct = 0;
    bool cnn_feasible = false;
    bool greedy_feasible = false;
  };

  std::vector<BenchmarkRow> rows;
  for (double snr : snr_grid) {
    PowerConfig power;
    power.user_power = test_set.header.user_power;
    power.total_power = test_set.header.total_power;
    power.noise_variance = test_set.header.total_power * std::pow(10.0, -snr / 10.0);
    power.validate(users);

    std::vector<Outcome> outcomes(n);
    parallel_for(n, options.threads, [&](std::size_t i) {
      const ChannelMatrix& channel = test_set.samples[i].channel;
      OracleOptions oracle_options;
      oracle_options.budget = options.oracle_budget;
      const OracleResult best = exhaustive_oracle(channel, grid, power, oracle_options);
      Outcome& o = outcomes[i];
      o.oracle = best.sum_rate;
      const auto cnn = evaluate_mapping(channel, grid, predicted[i], power);
      const auto base = evaluate_mapping(channel, grid, greedy[i], power);
      o.cnn_feasible = cnn.feasible();
      o.greedy_feasible = base.feasible();
      o.cnn = o.cnn_feasible ? cnn.sum_rate : 0.0;
      o.greedy = o.greedy_feasible ? base.sum_rate : 0.0;
      for (int k = 0; k < users; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        if (predicted[i].class_of[uk] == best.assignment.class_of[uk]) ++o.correct;
      }
    });

    BenchmarkRow row;
    row.snr_db = snr;
    double correct = 0.0;
    double cnn_feasible = 0.0;
    double greedy_feasible = 0.0;
    for (const Outcome& o : outcomes) {
      row.oracle_rate += o.oracle;
      row.cnn_rate += o.cnn;
      row.greedy_rate += o.greedy;
      correct += o.correct;
      cnn_feasible += o.cnn_feasible ? 1.0 : 0.0;
      greedy_feasible += o.greedy_feasible ? 1.0 : 0.0;
    }
    const double count = static_cast<double>(n);
    row.oracle_rate /= count;
    row.cnn_rate /= count;
    row.greedy_rate /= count;
    row.accuracy_pct = 100.0 * correct / (count * users);
    row.gap_pct = 100.0 * (row.oracle_rate - row.cnn_rate) / row.oracle_rate;
    row.greedy_gap_pct = 100.0 * (row.oracle_rate - row.greedy_rate) / row.oracle_rate;
    row.cnn_feasible_pct = 100.0 * cnn_feasible / count;
    row.greedy_feasible_pct = 100.0 * greedy_feasible / count;
    rows.push_back(row);
  }
  return rows;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::string out = "snr_db,oracle_rate,cnn_rate,greedy_rate,accuracy_pct,gap_pct\n";
  for (const BenchmarkRow& r : rows) {
    out += format_number(r.snr_db) + "," + format_number(r.oracle_rate) + "," +
           format_number(r.cnn_rate) + "," + format_number(r.greedy_rate) + "," +
           format_number(r.accuracy_pct) + "," + format_number(r.gap_pct) + "\n";
  }
  return out;
}

std::string curve_csv(const std::vector<std::vector<nn::EpochStats>>& curves) {
  std::string out =
      "network,epoch,loss,train_accuracy_pct,val_accuracy_pct,val_masked_accuracy_pct\n";
  for (std::size_t n = 0; n < curves.size(); ++n) {
    for (const nn::EpochStats& s : curves[n]) {
      out += std::to_string(n) + "," + std::to_string(s.epoch) + "," +
             format_number(s.loss) + "," + format_number(s.train_accuracy) + "," +
             format_number(s.validation_accuracy) + "," +
             format_number(s.validation_masked_accuracy) + "\n";
    }
  }
  return out;
}

namespace {

constexpr std::string_view kModelMagic = "XLSUMNN\x01";
constexpr std::uint32_t kModelFormatMajor = 1;
constexpr std::uint32_t kModelFormatMinor = 0;

}  // namespace

void save_ensemble(const MapperEnsemble& e, const std::filesystem::path& path) {
  std::ostringstream buffer(std::ios::binary);
  io::Writer w(buffer);
  w.bytes(kModelMagic);
  w.u32(kModelFormatMajor);
  w.u32(kModelFormatMinor);
  w.u32(static_cast<std::uint32_t>(e.mode));
  w.i32(e.dims.rows);
  w.i32(e.dims.cols);
  w.i32(e.grid.antennas);
  w.i32(e.grid.window);
  w.u32(static_cast<std::uint32_t>(e.grid.starts.size()));
  for (int s : e.grid.starts) w.i32(s);
  w.u32(e.vr_masking ? 1 : 0);
  const nn::TrainConfig& c = e.train_config;
  w.i32(c.batch_size);
  w.f64(c.learning_rate);
  w.f64(c.dropout);
  w.f64(c.l1_factor);
  w.i32(c.epochs);
  w.u32(static_cast<std::uint32_t>(c.optimizer));
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(e.networks.size()));
  for (const auto& net : e.networks) net.save(w);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = buffer.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

MapperEnsemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::Reader r(in);
  if (r.bytes(kModelMagic.size()) != kModelMagic) {
    throw FormatError(path.string() + " is not a model checkpoint");
  }
  if (const std::uint32_t major = r.u32(); major != kModelFormatMajor) {
    throw FormatError("unsupported checkpoint version " + std::to_string(major));
  }
  r.u32();
  MapperEnsemble e;
  const std::uint32_t mode = r.u32();
  if (mode != 1 && mode != 2) throw FormatError("unknown ensemble mode");
  e.mode = static_cast<EnsembleMode>(mode);
  e.dims.rows = r.i32();
  e.dims.cols = r.i32();
  e.grid.antennas = r.i32();
  e.grid.window = r.i32();
  const std::uint32_t classes = r.u32();
  if (classes == 0 || classes > 1u << 20) throw FormatError("corrupt class grid");
  for (std::uint32_t i = 0; i < classes; ++i) e.grid.starts.push_back(r.i32());
  e.vr_masking = r.u32() != 0;
  nn::TrainConfig& c = e.train_config;
  c.batch_size = r.i32();
  c.learning_rate = r.f64();
  c.dropout = r.f64();
  c.l1_factor = r.f64();
  c.epochs = r.i32();
  const std::uint32_t optimizer = r.u32();
  if (optimizer != 1 && optimizer != 2) throw FormatError("unknown optimizer");
  c.optimizer = static_cast<nn::Optimizer>(optimizer);
  c.seed = r.u64();
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 1u << 16) throw FormatError("corrupt network count");
  for (std::uint32_t i = 0; i < count; ++i) e.networks.push_back(nn::Network::load(r));
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  return e;
}

}  // namespace xlsum
