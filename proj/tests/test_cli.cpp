#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "xlsum/commands.hpp"
#include "xlsum/config.hpp"
#include "test_support.hpp"

using namespace xlsum;
namespace fs = std::filesystem;

namespace {

std::string tiny_config(const std::string& extra = "") {
  return R"([array]
antennas = 16

[channel]
kl_rank = 4
vr_min = 4
vr_max = 10

[users]
count = 2

[mapping]
window = 4
classes = 3

[tensor]
rows = 16
cols = 4

[dataset]
samples = 10
test_samples = 6

[train]
batch_size = 4
epochs = 2

[run]
seed = 5
threads = 1
)" + extra;
}

std::string replace_line(std::string text, const std::string& from, const std::string& to) {
  const auto at = text.find(from + "\n");
  REQUIRE(at != std::string::npos);
  return text.replace(at, from.size(), to);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

struct Invocation {
  int code = -1;
  std::string out;
  std::string err;
};

Invocation run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xlsum");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Invocation r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

int error_line(const std::string& text) {
  try {
    parse_config(text, "cfg.ini").validate();
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST_CASE("the shipped desk configuration parses and validates") {
  const ExperimentConfig c = load_config(fs::path(XLSUM_SOURCE_DIR) / "config" / "desk.ini");
  CHECK(c.scenario.antennas == 32);
  CHECK(c.scenario.users == 3);
  CHECK(c.scenario.classes == 4);
  CHECK(c.scenario.window == 8);
  CHECK(c.scenario.channel.vr_min == 8);
  CHECK(c.scenario.channel.vr_max == 16);
  CHECK(c.samples == 2000);
  CHECK(c.validation_fraction == 0.2);
  CHECK(c.train.batch_size == 250);
  CHECK(c.train.learning_rate == 4e-4);
  CHECK(c.snr_grid == std::vector<double>{0.0, 10.0, 20.0});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(tiny_config("[power]\nsnr_grid = -5, 5\n"));
  CHECK(c.scenario.antennas == 16);
  CHECK(c.snr_grid == std::vector<double>{-5.0, 5.0});
  CHECK(c.lines.at("users.count") == 10);
  CHECK(parse_config("[train]\nvr_masking = false ; trailing\n").vr_masking == false);
}

TEST_CASE("config errors name the offending line") {
  CHECK(error_line("[array]\nantennas = 16\nbogus = 3\n") == 3);
  CHECK(error_line("[nowhere]\n") == 1);
  CHECK(error_line("[users]\ncount = 2\ncount = 3\n") == 3);
  CHECK(error_line("[users]\ncount = two\n") == 2);
  CHECK(error_line("[array]\nantennas = 16\n[channel]\nvr_max = 10\nvr_min = 4\n[mapping]\n"
                   "window = 6\n") == 7);
  CHECK(error_line("[array]\nantennas = 8\n[channel]\nvr_max = 16\n") == 4);
  CHECK(error_line("\n\n[train]\nbatch_size = 0\n") == 4);
  try {
    parse_config("[array]\nantennas = x\n", "cfg.ini");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("cfg.ini:2: ", 0) == 0);
  }
}

TEST_CASE("gen-data writes a deterministic dataset") {
  test::TempDir dir("cli_gen");
  const auto cfg = write_file(dir / "tiny.ini", tiny_config());
  const auto a = run_cli({"--config", cfg.string(), "--out", (dir / "a.bin").string(),
                          "gen-data", "--verify-labels"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("verified 10 of 10 labels") != std::string::npos);
  const DatasetFile d = load_dataset(dir / "a.bin");
  CHECK(d.samples.size() == 10);
  CHECK(fs::exists(manifest_path(dir / "a.bin")));

  REQUIRE(run_cli({"--config", cfg.string(), "--threads", "3", "--out",
                   (dir / "b.bin").string(), "gen-data"})
              .code == 0);
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  CHECK(slurp(manifest_path(dir / "a.bin")) == slurp(manifest_path(dir / "b.bin")));

  REQUIRE(run_cli({"--config", cfg.string(), "--seed", "6", "--out",
                   (dir / "c.bin").string(), "gen-data"})
              .code == 0);
  CHECK(slurp(dir / "a.bin") != slurp(dir / "c.bin"));

  REQUIRE(run_cli({"--config", cfg.string(), "--out", (dir / "t.bin").string(), "gen-data",
                   "--test"})
              .code == 0);
  CHECK(load_dataset(dir / "t.bin").samples.size() == 6);
}

TEST_CASE("config and budget failures leave no outputs behind") {
  test::TempDir dir("cli_fail");
  const auto bad =
      write_file(dir / "bad.ini", replace_line(tiny_config(), "window = 4", "window = 6"));
  const auto r = run_cli({"--config", bad.string(), "--out", (dir / "x.bin").string(),
                          "gen-data"});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.ini:") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "x.bin"));
  CHECK_FALSE(fs::exists(dir / "x.bin.partial"));
  CHECK_FALSE(fs::exists(manifest_path(dir / "x.bin")));

  const auto tight = write_file(dir / "tight.ini", tiny_config("[mapping]\noracle_budget = 8\n"));
  CHECK(run_cli({"--config", tight.string(), "--out", (dir / "y.bin").string(), "gen-data"})
            .code == 3);
  CHECK(run_cli({"--config", tight.string(), "--out", (dir / "y.csv").string(), "oracle"})
            .code == 3);
  CHECK_FALSE(fs::exists(dir / "y.bin"));
  CHECK_FALSE(fs::exists(dir / "y.csv"));

  CHECK(run_cli({"--config", (dir / "missing.ini").string(), "--out", "z", "gen-data"}).code ==
        2);
  CHECK(run_cli({"--out", "z", "frobnicate"}).code == 2);
  CHECK(run_cli({"gen-data"}).code == 2);
}

TEST_CASE("train, eval and oracle subcommands") {
  test::TempDir dir("cli_pipeline");
  const auto cfg = write_file(dir / "tiny.ini", tiny_config());
  const std::string c = cfg.string();
  REQUIRE(run_cli({"--config", c, "--out", (dir / "train.bin").string(), "gen-data"}).code == 0);
  REQUIRE(run_cli({"--config", c, "--out", (dir / "test.bin").string(), "gen-data", "--test"})
              .code == 0);

  REQUIRE(run_cli({"--config", c, "--out", (dir / "m1.bin").string(), "train", "--data",
                   (dir / "train.bin").string()})
              .code == 0);
  REQUIRE(run_cli({"--config", c, "--out", (dir / "m2.bin").string(), "train", "--data",
                   (dir / "train.bin").string()})
              .code == 0);
  CHECK(slurp(dir / "m1.bin") == slurp(dir / "m2.bin"));
  const std::string curve = slurp(dir / "m1.bin.curve.csv");
  CHECK(curve.rfind("network,epoch,loss,train_accuracy", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 3);

  const auto e1 = run_cli({"--config", c, "--out", (dir / "r1.csv").string(), "eval", "--model",
                           (dir / "m1.bin").string(), "--data", (dir / "test.bin").string()});
  REQUIRE(e1.code == 0);
  CHECK(e1.out.find("mean gap") != std::string::npos);
  REQUIRE(run_cli({"--config", c, "--threads", "4", "--out", (dir / "r2.csv").string(), "eval",
                   "--model", (dir / "m1.bin").string(), "--data", (dir / "test.bin").string()})
              .code == 0);
  const std::string table = slurp(dir / "r1.csv");
  CHECK(table == slurp(dir / "r2.csv"));
  CHECK(table.rfind("snr_db,oracle_rate,cnn_rate,greedy_rate,accuracy_pct,gap_pct\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);

  std::istringstream rows(table);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::vector<double> v;
    std::istringstream fields(line);
    std::string f;
    while (std::getline(fields, f, ',')) v.push_back(std::stod(f));
    REQUIRE(v.size() == 6);
    CHECK(v[3] <= v[1]);
    CHECK(v[2] <= v[1]);
  }

  const auto o = run_cli({"--config", c, "--out", (dir / "o.csv").string(), "oracle",
                          "--instances", "3"});
  REQUIRE(o.code == 0);
  const std::string timing = slurp(dir / "o.csv");
  CHECK(timing.rfind("instance,space_size,oracle_rate,wall_seconds\n0,9,", 0) == 0);
}

TEST_CASE("oracle space sizes") {
  test::TempDir dir("cli_oracle");
  const auto single = write_file(dir / "one.ini", replace_line(tiny_config(), "classes = 3", "classes = 1"));
  REQUIRE(run_cli({"--config", single.string(), "--out", (dir / "a.csv").string(), "oracle",
                   "--instances", "2"})
              .code == 0);
  CHECK(slurp(dir / "a.csv").find("\n0,1,") != std::string::npos);

  const auto desk = write_file(dir / "desk.ini", "[run]\nthreads = 1\n");
  REQUIRE(run_cli({"--config", desk.string(), "--out", (dir / "b.csv").string(), "oracle",
                   "--instances", "1"})
              .code == 0);
  CHECK(slurp(dir / "b.csv").find("\n0,64,") != std::string::npos);
}

TEST_CASE("a model and dataset of different shapes exit with code 5") {
  test::TempDir dir("cli_shape");
  const auto small = write_file(dir / "small.ini", tiny_config());
  const auto wide = write_file(dir / "wide.ini",
                               replace_line(tiny_config(), "antennas = 16", "antennas = 20"));
  REQUIRE(run_cli({"--config", small.string(), "--out", (dir / "d.bin").string(), "gen-data"})
              .code == 0);
  REQUIRE(run_cli({"--config", wide.string(), "--out", (dir / "w.bin").string(), "gen-data"})
              .code == 0);
  REQUIRE(run_cli({"--config", small.string(), "--out", (dir / "m.bin").string(), "train",
                   "--data", (dir / "d.bin").string()})
              .code == 0);
  CHECK(run_cli({"--config", small.string(), "--out", (dir / "r.csv").string(), "eval",
                 "--model", (dir / "m.bin").string(), "--data", (dir / "w.bin").string()})
            .code == 5);
  CHECK_FALSE(fs::exists(dir / "r.csv"));
}

TEST_CASE("divergence exits with code 4") {
  test::TempDir dir("cli_diverge");
  const auto cfg = write_file(
      dir / "hot.ini",
      tiny_config("[train]\noptimizer = sgd\nlearning_rate = 1e300\nl1_factor = 0\n"));
  REQUIRE(run_cli({"--config", cfg.string(), "--out", (dir / "d.bin").string(), "gen-data"})
              .code == 0);
  CHECK(run_cli({"--config", cfg.string(), "--out", (dir / "m.bin").string(), "train",
                 "--data", (dir / "d.bin").string()})
            .code == 4);
  CHECK_FALSE(fs::exists(dir / "m.bin"));
}

TEST_CASE("exit codes for library errors") {
  CHECK(cli::exit_code_for(ConfigError("x", 1, "m")) == 2);
  CHECK(cli::exit_code_for(InvalidConfig("m")) == 2);
  CHECK(cli::exit_code_for(BudgetExceeded(10, 5)) == 3);
  CHECK(cli::exit_code_for(Diverged("m")) == 4);
  CHECK(cli::exit_code_for(ShapeMismatch("m")) == 5);
  CHECK(cli::exit_code_for(std::runtime_error("m")) == 1);
}
