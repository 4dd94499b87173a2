#include "xlsum/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace xlsum {

ConfigError::ConfigError(const std::string& source, int line,
                         const std::string& message)
    : InvalidConfig(line > 0 ? source + ":" + std::to_string(line) + ": " + message
                             : source + ": " + message),
      line_(line) {}

int ExperimentConfig::resolved_threads() const {
  if (threads > 0) return threads;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

struct Location {
  const std::string& source;
  int line;
  const std::string& key;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(source, line, key + ": " + what);
  }
};

template <typename T>
T parse_number(std::string_view text, const Location& at) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    at.fail("'" + std::string(text) + "' is not a valid number");
  }
  return value;
}

double parse_double(std::string_view text, const Location& at) {
  return parse_number<double>(text, at);
}

bool parse_bool(std::string_view text, const Location& at) {
  if (text == "true") return true;
  if (text == "false") return false;
  at.fail("expected true or false, got '" + std::string(text) + "'");
}

std::vector<double> parse_list(std::string_view text, const Location& at) {
  std::vector<double> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_double(trim(text.substr(0, comma)), at));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) at.fail("expected a comma separated list");
  return out;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view, const Location&)>;

template <typename T>
Setter integer(T ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, std::string_view v, const Location& at) {
    c.*field = parse_number<T>(v, at);
  };
}

const std::map<std::string, Setter>& setters() {
  using C = ExperimentConfig;
  auto dbl = [](auto pick) -> Setter {
    return [pick](C& c, std::string_view v, const Location& at) {
      pick(c) = parse_double(v, at);
    };
  };
  auto num = [](auto pick) -> Setter {
    return [pick](C& c, std::string_view v, const Location& at) {
      auto& ref = pick(c);
      ref = parse_number<std::remove_reference_t<decltype(ref)>>(v, at);
    };
  };
  auto flag = [](auto pick) -> Setter {
    return [pick](C& c, std::string_view v, const Location& at) {
      pick(c) = parse_bool(v, at);
    };
  };
  static const std::map<std::string, Setter> table = {
      {"array.antennas", num([](C& c) -> int& { return c.scenario.antennas; })},
      {"array.wavelength", dbl([](C& c) -> double& { return c.scenario.wavelength; })},
      {"array.spacing", dbl([](C& c) -> double& { return c.scenario.spacing; })},

      {"channel.pathloss_exponent",
       dbl([](C& c) -> double& { return c.scenario.channel.pathloss_exponent; })},
      {"channel.attenuation",
       dbl([](C& c) -> double& { return c.scenario.channel.attenuation; })},
      {"channel.kl_rank", num([](C& c) -> int& { return c.scenario.channel.kl_rank; })},
      {"channel.vr_min", num([](C& c) -> int& { return c.scenario.channel.vr_min; })},
      {"channel.vr_max", num([](C& c) -> int& { return c.scenario.channel.vr_max; })},
      {"channel.quadrature_points",
       num([](C& c) -> int& { return c.scenario.channel.quadrature_points; })},
      {"channel.distance_min",
       dbl([](C& c) -> double& { return c.scenario.channel.distance_min; })},
      {"channel.distance_max",
       dbl([](C& c) -> double& { return c.scenario.channel.distance_max; })},
      {"channel.azimuth_min",
       dbl([](C& c) -> double& { return c.scenario.channel.azimuth_min; })},
      {"channel.azimuth_max",
       dbl([](C& c) -> double& { return c.scenario.channel.azimuth_max; })},
      {"channel.scatter_radius",
       dbl([](C& c) -> double& { return c.scenario.channel.scatter_radius; })},

      {"users.count", num([](C& c) -> int& { return c.scenario.users; })},

      {"mapping.window", num([](C& c) -> int& { return c.scenario.window; })},
      {"mapping.classes", num([](C& c) -> int& { return c.scenario.classes; })},
      {"mapping.restrict_to_vr",
       flag([](C& c) -> bool& { return c.scenario.restrict_to_vr; })},
      {"mapping.oracle_budget",
       num([](C& c) -> std::uint64_t& { return c.scenario.oracle_budget; })},

      {"power.total_power", dbl([](C& c) -> double& { return c.scenario.total_power; })},
      {"power.user_power",
       [](C& c, std::string_view v, const Location& at) {
         c.scenario.user_power = parse_list(v, at);
       }},
      {"power.label_snr_db", dbl([](C& c) -> double& { return c.scenario.label_snr_db; })},
      {"power.snr_grid",
       [](C& c, std::string_view v, const Location& at) { c.snr_grid = parse_list(v, at); }},

      {"tensor.rows", num([](C& c) -> int& { return c.scenario.tensor.rows; })},
      {"tensor.cols", num([](C& c) -> int& { return c.scenario.tensor.cols; })},

      {"dataset.samples", integer(&C::samples)},
      {"dataset.test_samples", integer(&C::test_samples)},
      {"dataset.validation_fraction",
       dbl([](C& c) -> double& { return c.validation_fraction; })},

      {"train.batch_size", num([](C& c) -> int& { return c.train.batch_size; })},
      {"train.learning_rate", dbl([](C& c) -> double& { return c.train.learning_rate; })},
      {"train.dropout", dbl([](C& c) -> double& { return c.train.dropout; })},
      {"train.l1_factor", dbl([](C& c) -> double& { return c.train.l1_factor; })},
      {"train.epochs", num([](C& c) -> int& { return c.train.epochs; })},
      {"train.optimizer",
       [](C& c, std::string_view v, const Location& at) {
         if (v == "adam") {
           c.train.optimizer = nn::Optimizer::adam;
         } else if (v == "sgd") {
           c.train.optimizer = nn::Optimizer::sgd;
         } else {
           at.fail("optimizer must be adam or sgd");
         }
       }},
      {"train.ensemble",
       [](C& c, std::string_view v, const Location& at) {
         try {
           c.ensemble = parse_ensemble_mode(std::string(v));
         } catch (const InvalidConfig& e) {
           at.fail(e.what());
         }
       }},
      {"train.vr_masking", flag([](C& c) -> bool& { return c.vr_masking; })},

      {"run.seed", integer(&C::seed)},
      {"run.threads", integer(&C::threads)},
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto line_of = [this](std::initializer_list<const char*> keys) {
    int line = 0;
    for (const char* k : keys) {
      if (auto it = lines.find(k); it != lines.end()) line = std::max(line, it->second);
    }
    return line;
  };
  auto require = [&](bool ok, std::initializer_list<const char*> keys,
                     const std::string& message) {
    if (!ok) throw ConfigError(source, line_of(keys), message);
  };
  const auto& s = scenario;
  const auto& ch = s.channel;
  require(s.antennas >= 2, {"array.antennas"}, "antennas must be at least 2");
  require(s.classes >= 1, {"mapping.classes"}, "classes must be at least 1");
  require(s.users >= 1, {"users.count"}, "users.count must be at least 1");
  require(s.window >= 1 && s.window <= ch.vr_min, {"mapping.window", "channel.vr_min"},
          "need window <= vr_min (N_max <= l1), got " + std::to_string(s.window) +
              " > " + std::to_string(ch.vr_min));
  require(ch.vr_min <= ch.vr_max, {"channel.vr_min", "channel.vr_max"},
          "need vr_min <= vr_max");
  require(ch.vr_max <= s.antennas, {"channel.vr_max", "array.antennas"},
          "need vr_max <= antennas");
  require(ch.kl_rank >= 1 && ch.kl_rank <= s.antennas,
          {"channel.kl_rank", "array.antennas"}, "need 1 <= kl_rank <= antennas");
  require(ch.quadrature_points >= 8, {"channel.quadrature_points"},
          "quadrature_points must be at least 8");
  require(samples >= 1, {"dataset.samples"}, "samples must be at least 1");
  require(test_samples >= 1, {"dataset.test_samples"}, "test_samples must be at least 1");
  require(validation_fraction > 0.0 && validation_fraction < 1.0,
          {"dataset.validation_fraction"}, "validation_fraction must lie in (0, 1)");
  require(!snr_grid.empty(), {"power.snr_grid"}, "snr_grid must not be empty");
  require(threads >= 0, {"run.threads"}, "threads must be >= 0");
  try {
    scenario.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidConfig& e) {
    throw ConfigError(source, 0, e.what());
  }
  try {
    train.validate();
  } catch (const InvalidConfig& e) {
    throw ConfigError(source, line_of({"train.batch_size", "train.learning_rate",
                                       "train.dropout", "train.l1_factor",
                                       "train.epochs"}),
                      e.what());
  }
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  ExperimentConfig c;
  c.source = source;
  std::string section;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto newline = text.find('\n');
    std::string_view line = text.substr(0, newline);
    text.remove_prefix(newline == std::string_view::npos ? text.size() : newline + 1);

    if (const auto comment = line.find_first_of("#;"); comment != std::string_view::npos) {
      line = line.substr(0, comment);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      const std::string prefix = section + ".";
      const auto next = setters().lower_bound(prefix);
      if (next == setters().end() || next->first.rfind(prefix, 0) != 0) {
        throw ConfigError(source, line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source, line_no, "expected key = value");
    }
    if (section.empty()) throw ConfigError(source, line_no, "key outside of a section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(source, line_no, "unknown key " + key);
    if (c.lines.count(key) != 0) {
      throw ConfigError(source, line_no,
                        key + " already set on line " + std::to_string(c.lines[key]));
    }
    it->second(c, value, Location{source, line_no, key});
    c.lines[key] = line_no;
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), 0, "cannot open config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

}  // namespace xlsum
