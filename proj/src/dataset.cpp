#include "xlsum/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "xlsum/binary_io.hpp"
#include "xlsum/errors.hpp"

namespace xlsum {

ArrayGeometry ScenarioConfig::geometry() const {
  return ArrayGeometry(antennas, wavelength, spacing);
}

ClassGrid ScenarioConfig::grid() const {
  return build_class_grid(antennas, window, classes);
}

PowerConfig ScenarioConfig::power_at(double snr_db) const {
  PowerConfig p = PowerConfig::uniform(
      users, total_power, total_power * std::pow(10.0, -snr_db / 10.0));
  if (!user_power.empty()) p.user_power = user_power;
  return p;
}

void ScenarioConfig::validate() const {
  const ArrayGeometry g = geometry();
  channel.validate(g);
  if (users < 1) throw InvalidConfig("need at least one user");
  if (window < 1 || window > channel.vr_min) {
    throw InvalidConfig("window size must satisfy 1 <= N_max <= l1");
  }
  if (classes < 1) throw InvalidConfig("need at least one class");
  if (tensor.rows < 1 || tensor.cols < 1) {
    throw InvalidConfig("tensor dimensions must be positive");
  }
  if (!user_power.empty() && static_cast<int>(user_power.size()) != users) {
    throw InvalidConfig("user_power needs one entry per user");
  }
  power_at(label_snr_db).validate(users);
  if (oracle_budget < 1) throw InvalidConfig("oracle budget must be positive");
}

ClassGrid DatasetFile::grid() const {
  return build_class_grid(header.antennas, header.window, header.classes);
}

PowerConfig DatasetFile::label_power() const {
  PowerConfig p;
  p.user_power = header.user_power;
  p.total_power = header.total_power;
  p.noise_variance = header.noise_variance;
  return p;
}

bool operator==(const Sample& a, const Sample& b) {
  return a.index == b.index && a.seed == b.seed &&
         a.oracle_rate == b.oracle_rate && a.labels == b.labels &&
         a.channel.vrs == b.channel.vrs && a.channel.users == b.channel.users &&
         a.channel.h.rows() == b.channel.h.rows() &&
         a.channel.h.cols() == b.channel.h.cols() && a.channel.h == b.channel.h;
}

bool operator==(const DatasetHeader& a, const DatasetHeader& b) {
  return a.format_major == b.format_major && a.format_minor == b.format_minor &&
         a.antennas == b.antennas && a.users == b.users &&
         a.classes == b.classes && a.window == b.window &&
         a.tensor == b.tensor && a.base_seed == b.base_seed &&
         a.wavelength == b.wavelength && a.spacing == b.spacing &&
         a.total_power == b.total_power &&
         a.noise_variance == b.noise_variance &&
         a.restrict_to_vr == b.restrict_to_vr && a.user_power == b.user_power;
}

bool operator==(const DatasetFile& a, const DatasetFile& b) {
  return a.header == b.header && a.samples == b.samples;
}

RealMatrix normalize_channel(const RealMatrix& plane) {
  RealMatrix out = RealMatrix::Zero(plane.rows(), plane.cols());
  if (plane.rows() == 0) return out;
  for (Eigen::Index j = 0; j < plane.cols(); ++j) {
    const auto col = plane.col(j);
    const double range = col.maxCoeff() - col.minCoeff();
    if (!(range > 0.0)) continue;
    // Second centering pass removes the rounding left in the first mean, which
    // matters when the offset dwarfs the spread.
    Eigen::ArrayXd centered = col.array() - col.mean();
    centered -= centered.mean();
    out.col(j) = centered / range;
  }
  return out;
}

std::vector<int> tensor_user_order(const EffectiveWindow& ew,
                                   const ChannelMatrix& channel) {
  const auto& vrs = channel.vrs;
  const VisibilityRegion& target = vrs.at(static_cast<std::size_t>(ew.user));
  std::vector<int> others;
  for (int u : ew.co_users) {
    if (u != ew.user) others.push_back(u);
  }
  auto key = [&](int u) {
    const VisibilityRegion& vr = vrs[static_cast<std::size_t>(u)];
    return std::make_tuple(-vr.overlap(target), vr.start, vr.length,
                           -channel.h.col(u).squaredNorm(), u);
  };
  std::sort(others.begin(), others.end(),
            [&](int a, int b) { return key(a) < key(b); });
  std::vector<int> order{ew.user};
  order.insert(order.end(), others.begin(), others.end());
  return order;
}

InputTensor build_input_tensor(const ChannelMatrix& channel,
                               const EffectiveWindow& ew,
                               const TensorDims& dims) {
  const int m = channel.antennas();
  const int frame_len = dims.rows;
  const int lo = ew.antennas.start;
  const int hi = ew.antennas.end();

  int frame = 0;
  int used_lo = lo;
  int used_hi = hi;
  if (hi - lo <= frame_len) {
    if (m > frame_len) {
      const int centered = (lo + hi) / 2 - frame_len / 2;
      frame = std::clamp(centered, std::max(0, hi - frame_len),
                         std::min(lo, m - frame_len));
    }
  } else {
    const VisibilityRegion& target =
        channel.vrs.at(static_cast<std::size_t>(ew.user));
    const int center = target.start + target.length / 2;
    frame = std::clamp(center - frame_len / 2, lo, hi - frame_len);
    used_lo = frame;
    used_hi = frame + frame_len;
  }

  std::vector<int> order = tensor_user_order(ew, channel);
  if (static_cast<int>(order.size()) > dims.cols) order.resize(static_cast<std::size_t>(dims.cols));

  const int n = used_hi - used_lo;
  const int c = static_cast<int>(order.size());
  RealMatrix re(n, c);
  RealMatrix im(n, c);
  for (int j = 0; j < c; ++j) {
    for (int i = 0; i < n; ++i) {
      const Complex v = channel.h(used_lo + i, order[static_cast<std::size_t>(j)]);
      re(i, j) = v.real();
      im(i, j) = v.imag();
    }
  }
  const RealMatrix re_n = normalize_channel(re);
  const RealMatrix im_n = normalize_channel(im);

  InputTensor t;
  t.rows = dims.rows;
  t.cols = dims.cols;
  t.values.assign(static_cast<std::size_t>(dims.rows * dims.cols * InputTensor::kPlanes), 0.0);
  for (int j = 0; j < c; ++j) {
    for (int i = 0; i < n; ++i) {
      const int row = used_lo + i - frame;
      const Complex v = channel.h(used_lo + i, order[static_cast<std::size_t>(j)]);
      t.at(row, j, 0) = re_n(i, j);
      t.at(row, j, 1) = im_n(i, j);
      t.at(row, j, 2) = std::arg(v) / std::numbers::pi;
    }
  }
  return t;
}

Sample label_instance(ChannelMatrix channel, const ScenarioConfig& scenario,
                      std::uint64_t index, std::uint64_t seed) {
  OracleOptions options;
  options.restrict_to_vr = scenario.restrict_to_vr;
  options.budget = scenario.oracle_budget;
  options.threads = 1;
  const OracleResult best = exhaustive_oracle(channel, scenario.grid(),
                                              scenario.label_power(), options);
  Sample s;
  s.channel = std::move(channel);
  s.labels = best.assignment.class_of;
  s.oracle_rate = best.sum_rate;
  s.seed = seed;
  s.index = index;
  return s;
}

DatasetFile generate_dataset(const ScenarioConfig& scenario,
                             std::uint64_t count, std::uint64_t base_seed,
                             int threads) {
  scenario.validate();
  const ArrayGeometry geometry = scenario.geometry();
  const PowerConfig label_power = scenario.label_power();

  // Reject oversize spaces before spending time on channels.
  if (!scenario.restrict_to_vr) {
    const std::vector<std::vector<int>> full(
        static_cast<std::size_t>(scenario.users),
        std::vector<int>(static_cast<std::size_t>(scenario.classes)));
    const std::uint64_t space = assignment_space_size(full);
    if (space > scenario.oracle_budget) {
      throw BudgetExceeded(space, scenario.oracle_budget);
    }
  }

  DatasetFile d;
  d.header.antennas = scenario.antennas;
  d.header.users = scenario.users;
  d.header.classes = scenario.classes;
  d.header.window = scenario.window;
  d.header.tensor = scenario.tensor;
  d.header.base_seed = base_seed;
  d.header.wavelength = geometry.wavelength();
  d.header.spacing = geometry.spacing();
  d.header.total_power = label_power.total_power;
  d.header.noise_variance = label_power.noise_variance;
  d.header.restrict_to_vr = scenario.restrict_to_vr;
  d.header.user_power = label_power.user_power;
  d.samples.resize(count);

  const Rng base(base_seed);
  std::atomic<std::uint64_t> next{0};
  std::mutex error_mutex;
  std::uint64_t error_index = count;
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      const std::uint64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        Rng rng = base.split(i);
        ChannelMatrix channel = generate_channel_matrix(
            scenario.users, geometry, scenario.channel, rng);
        d.samples[i] = label_instance(std::move(channel), scenario, i, rng.seed());
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  const int workers = std::max(1, threads);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return d;
}

std::pair<DatasetFile, DatasetFile> split_dataset(const DatasetFile& d,
                                                  double validation_fraction,
                                                  Rng& rng) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InvalidConfig("validation fraction must lie in (0, 1)");
  }
  const std::size_t total = d.samples.size();
  std::map<std::vector<int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < total; ++i) strata[d.samples[i].labels].push_back(i);

  std::size_t target = static_cast<std::size_t>(
      std::llround(validation_fraction * static_cast<double>(total)));
  if (total >= 2) target = std::clamp<std::size_t>(target, 1, total - 1);

  // Largest-remainder apportionment of the validation count across strata.
  struct Share {
    std::size_t stratum;
    std::size_t base;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  std::size_t s = 0;
  for (const auto& [label, members] : strata) {
    const double exact = validation_fraction * static_cast<double>(members.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    shares.push_back({s++, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> by_remainder(shares.size());
  for (std::size_t i = 0; i < shares.size(); ++i) by_remainder[i] = i;
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) {
                     return shares[a].remainder > shares[b].remainder;
                   });
  std::size_t cursor = 0;
  while (assigned < target && !by_remainder.empty()) {
    auto& share = shares[by_remainder[cursor % by_remainder.size()]];
    const std::size_t cap =
        std::next(strata.begin(), static_cast<long>(share.stratum))->second.size();
    if (share.base < cap) {
      ++share.base;
      ++assigned;
    }
    ++cursor;
  }
  while (assigned > target) {
    for (auto& share : shares) {
      if (assigned > target && share.base > 0) {
        --share.base;
        --assigned;
      }
    }
  }

  std::vector<bool> in_validation(total, false);
  std::size_t idx = 0;
  for (const auto& [label, members] : strata) {
    std::vector<std::size_t> shuffled = members;
    for (std::size_t i = shuffled.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(shuffled[i - 1], shuffled[j]);
    }
    for (std::size_t i = 0; i < shares[idx].base; ++i) in_validation[shuffled[i]] = true;
    ++idx;
  }

  DatasetFile train;
  DatasetFile validation;
  train.header = d.header;
  validation.header = d.header;
  for (std::size_t i = 0; i < total; ++i) {
    (in_validation[i] ? validation : train).samples.push_back(d.samples[i]);
  }
  return {std::move(train), std::move(validation)};
}

namespace {

constexpr std::string_view kDatasetMagic = "XLSUMDS\x01";

}  // namespace

void save_dataset(const DatasetFile& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  io::Writer w(out);
  const DatasetHeader& h = d.header;
  w.bytes(kDatasetMagic);
  w.u32(h.format_major);
  w.u32(h.format_minor);
  w.i32(h.antennas);
  w.i32(h.users);
  w.i32(h.classes);
  w.i32(h.window);
  w.i32(h.tensor.rows);
  w.i32(h.tensor.cols);
  w.u64(d.samples.size());
  w.u64(h.base_seed);
  w.f64(h.wavelength);
  w.f64(h.spacing);
  w.f64(h.total_power);
  w.f64(h.noise_variance);
  w.u32(h.restrict_to_vr ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(h.user_power.size()));
  for (double p : h.user_power) w.f64(p);

  for (const Sample& s : d.samples) {
    if (s.channel.users_count() != h.users || s.channel.antennas() != h.antennas ||
        static_cast<int>(s.labels.size()) != h.users) {
      throw DimensionMismatch("save_dataset: sample shape differs from header");
    }
    w.u64(s.index);
    w.u64(s.seed);
    w.f64(s.oracle_rate);
    for (int label : s.labels) w.i32(label);
    for (int k = 0; k < h.users; ++k) {
      const auto& vr = s.channel.vrs[static_cast<std::size_t>(k)];
      const auto& u = s.channel.users[static_cast<std::size_t>(k)];
      w.i32(vr.start);
      w.i32(vr.length);
      w.f64(u.distance);
      w.f64(u.azimuth);
      w.f64(u.attenuation);
      w.f64(u.scatter_radius);
      w.f64(u.angular_spread);
    }
    for (int k = 0; k < h.users; ++k) {
      for (int m = 0; m < h.antennas; ++m) {
        w.f64(s.channel.h(m, k).real());
        w.f64(s.channel.h(m, k).imag());
      }
    }
  }
  if (!out) throw Error("write failed for " + path.string());

  std::ofstream manifest(manifest_path(path), std::ios::trunc);
  manifest << dataset_manifest(d);
  if (!manifest) throw Error("cannot write manifest for " + path.string());
}

DatasetFile load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::Reader r(in);
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) {
    throw FormatError(path.string() + " is not a dataset file");
  }
  DatasetFile d;
  DatasetHeader& h = d.header;
  h.format_major = r.u32();
  h.format_minor = r.u32();
  if (h.format_major != DatasetHeader::kFormatMajor) {
    throw FormatError("unsupported dataset format version " +
                      std::to_string(h.format_major));
  }
  h.antennas = r.i32();
  h.users = r.i32();
  h.classes = r.i32();
  h.window = r.i32();
  h.tensor.rows = r.i32();
  h.tensor.cols = r.i32();
  const std::uint64_t count = r.u64();
  h.base_seed = r.u64();
  h.wavelength = r.f64();
  h.spacing = r.f64();
  h.total_power = r.f64();
  h.noise_variance = r.f64();
  h.restrict_to_vr = r.u32() != 0;
  const std::uint32_t powers = r.u32();
  if (h.antennas < 1 || h.users < 1 || h.classes < 1 || h.window < 1 ||
      h.tensor.rows < 1 || h.tensor.cols < 1 ||
      powers != static_cast<std::uint32_t>(h.users)) {
    throw FormatError("corrupt dataset header in " + path.string());
  }
  for (std::uint32_t i = 0; i < powers; ++i) h.user_power.push_back(r.f64());

  d.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.index = r.u64();
    s.seed = r.u64();
    s.oracle_rate = r.f64();
    for (int k = 0; k < h.users; ++k) s.labels.push_back(r.i32());
    for (int k = 0; k < h.users; ++k) {
      VisibilityRegion vr;
      vr.start = r.i32();
      vr.length = r.i32();
      UserGeometry u;
      u.distance = r.f64();
      u.azimuth = r.f64();
      u.attenuation = r.f64();
      u.scatter_radius = r.f64();
      u.angular_spread = r.f64();
      s.channel.vrs.push_back(vr);
      s.channel.users.push_back(u);
    }
    s.channel.h.resize(h.antennas, h.users);
    for (int k = 0; k < h.users; ++k) {
      for (int m = 0; m < h.antennas; ++m) {
        const double re = r.f64();
        const double im = r.f64();
        s.channel.h(m, k) = Complex(re, im);
      }
    }
    d.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  return d;
}

std::string dataset_manifest(const DatasetFile& d) {
  const DatasetHeader& h = d.header;
  nlohmann::ordered_json j;
  j["format_version"] = std::to_string(h.format_major) + "." +
                        std::to_string(h.format_minor);
  j["antennas"] = h.antennas;
  j["users"] = h.users;
  j["classes"] = h.classes;
  j["window"] = h.window;
  j["tensor_rows"] = h.tensor.rows;
  j["tensor_cols"] = h.tensor.cols;
  j["sample_count"] = d.samples.size();
  j["base_seed"] = h.base_seed;
  j["wavelength"] = h.wavelength;
  j["spacing"] = h.spacing;
  j["total_power"] = h.total_power;
  j["noise_variance"] = h.noise_variance;
  j["restrict_to_vr"] = h.restrict_to_vr;
  j["user_power"] = h.user_power;
  std::vector<std::vector<std::uint64_t>> histogram(
      static_cast<std::size_t>(h.users),
      std::vector<std::uint64_t>(static_cast<std::size_t>(h.classes), 0));
  for (const Sample& s : d.samples) {
    for (int k = 0; k < h.users; ++k) {
      const int label = s.labels[static_cast<std::size_t>(k)];
      if (label >= 0 && label < h.classes) {
        ++histogram[static_cast<std::size_t>(k)][static_cast<std::size_t>(label)];
      }
    }
  }
  j["label_histogram"] = histogram;
  j["payload"] = "little-endian; per sample: index u64, seed u64, oracle_rate f64, "
                 "labels i32[K], per user (vr_start i32, vr_length i32, distance, "
                 "azimuth, attenuation, scatter_radius, angular_spread f64), "
                 "H column-major (re, im) f64[2MK]";
  return j.dump(2) + "\n";
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p += ".manifest.json";
  return p;
}

}  // namespace xlsum
