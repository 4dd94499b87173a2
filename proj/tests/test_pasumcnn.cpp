#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "xlsum/errors.hpp"
#include "xlsum/pasumcnn.hpp"
#include "test_support.hpp"

using namespace xlsum;

namespace {

ScenarioConfig small_scenario(int users, int classes) {
  ScenarioConfig s;
  s.antennas = 16;
  s.users = users;
  s.window = 4;
  s.classes = classes;
  s.channel.vr_min = 4;
  s.channel.vr_max = 10;
  s.channel.kl_rank = 4;
  s.tensor = {16, 4};
  return s;
}

nn::TrainConfig quick_train() {
  nn::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 9;
  return cfg;
}

/// Sets every parameter to zero and the class-score bias to favour one class.
void hard_wire(nn::Network& net, int cls) {
  for (auto& p : net.parameters()) std::fill(p.value.begin(), p.value.end(), 0.0);
  auto scores = net.layer(net.layer_count() - 2).params();
  scores[1].value[static_cast<std::size_t>(cls)] = 10.0;
}

/// Single-user samples whose channel lives exactly on one class window, so
/// that window is the only feasible choice and the oracle label at any SNR.
DatasetFile window_aligned_set(int count, std::uint64_t seed) {
  DatasetFile d = generate_dataset(small_scenario(1, 4), static_cast<std::uint64_t>(count), seed);
  const ClassGrid grid = d.grid();
  Rng rng(seed);
  for (Sample& s : d.samples) {
    const int cls = static_cast<int>(rng.uniform_int(0, 3));
    const VisibilityRegion w = grid.window_of(cls);
    s.channel.h.setZero();
    s.channel.h.col(0).segment(w.start, w.length) = sample_complex_gaussian(4, rng);
    s.channel.vrs = {w};
    s.labels = {cls};
    s.oracle_rate = exhaustive_oracle(s.channel, grid, d.label_power()).sum_rate;
  }
  return d;
}

ChannelMatrix permuted(const ChannelMatrix& ch, const std::vector<int>& perm) {
  ChannelMatrix out = ch;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.h.col(static_cast<Eigen::Index>(k)) = ch.h.col(perm[k]);
    out.vrs[k] = ch.vrs[static_cast<std::size_t>(perm[k])];
    out.users[k] = ch.users[static_cast<std::size_t>(perm[k])];
  }
  return out;
}

}  // namespace

TEST_CASE("ensemble mode names") {
  CHECK(to_string(EnsembleMode::shared) == "shared");
  CHECK(parse_ensemble_mode("per_user") == EnsembleMode::per_user);
  CHECK_THROWS_AS(parse_ensemble_mode("both"), InvalidConfig);
}

TEST_CASE("user_examples expands every user of every sample") {
  const DatasetFile d = generate_dataset(small_scenario(2, 3), 6, 1);
  const nn::LabeledSet all = user_examples(d);
  CHECK(all.size() == 12);
  CHECK(all.shape == nn::Shape{16, 4, 3});
  const nn::LabeledSet second = user_examples(d, 1);
  CHECK(second.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(second.labels[i] == d.samples[i].labels[1]);
    CHECK(second.allowed[i] == candidate_classes(d.samples[i].channel.vrs[1], d.grid()));
    CHECK(second.inputs[i] == user_input(d.samples[i].channel, 1, d.header.tensor));
  }
}

TEST_CASE("a hard-wired single-user network returns its class") {
  const DatasetFile d = generate_dataset(small_scenario(1, 4), 3, 2);
  for (int c = 0; c < 4; ++c) {
    MapperEnsemble e = make_ensemble(d, EnsembleMode::shared, false, quick_train(), 1);
    hard_wire(e.networks[0], c);
    for (const Sample& s : d.samples) {
      CHECK(infer_mapping(e, s.channel).class_of == std::vector<int>{c});
    }
  }
}

TEST_CASE("inference is independent per user") {
  const DatasetFile d = generate_dataset(small_scenario(3, 3), 20, 3);
  const MapperEnsemble e = make_ensemble(d, EnsembleMode::shared, false, quick_train(), 4);
  const std::vector<int> perm{2, 0, 1};
  for (const Sample& s : d.samples) {
    const Assignment a = infer_mapping(e, s.channel);
    const Assignment b = infer_mapping(e, permuted(s.channel, perm));
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(b.class_of[k] == a.class_of[static_cast<std::size_t>(perm[k])]);
    }
    for (int threads : {2, 3, 8}) CHECK(infer_mapping(e, s.channel, threads) == a);
  }
}

TEST_CASE("masked inference stays inside the visibility region candidates") {
  const DatasetFile d = generate_dataset(small_scenario(3, 3), 20, 5);
  const MapperEnsemble e = make_ensemble(d, EnsembleMode::per_user, true, quick_train(), 6);
  for (const Sample& s : d.samples) {
    const Assignment a = infer_mapping(e, s.channel);
    for (int k = 0; k < 3; ++k) {
      const auto allowed = candidate_classes(s.channel.vrs[static_cast<std::size_t>(k)], e.grid);
      CHECK(std::find(allowed.begin(), allowed.end(), a.class_of[static_cast<std::size_t>(k)]) !=
            allowed.end());
    }
  }
}

TEST_CASE("shape mismatches are reported") {
  const DatasetFile d = generate_dataset(small_scenario(2, 3), 2, 7);
  MapperEnsemble e = make_ensemble(d, EnsembleMode::per_user, false, quick_train(), 1);
  const DatasetFile three = generate_dataset(small_scenario(3, 3), 1, 7);
  CHECK_THROWS_AS(infer_mapping(e, three.samples[0].channel), ShapeMismatch);

  ScenarioConfig wide = small_scenario(2, 3);
  wide.antennas = 20;
  const DatasetFile other = generate_dataset(wide, 1, 7);
  CHECK_THROWS_AS(infer_mapping(e, other.samples[0].channel), ShapeMismatch);

  e.dims.rows = 8;
  CHECK_THROWS_AS(e.validate(2), ShapeMismatch);
}

TEST_CASE("evaluate_mapping against the oracle") {
  const ScenarioConfig s = small_scenario(2, 3);
  const DatasetFile d = generate_dataset(s, 20, 8);
  const ClassGrid grid = d.grid();
  const PowerConfig power = d.label_power();
  for (const Sample& sample : d.samples) {
    const auto at_label = evaluate_mapping(sample.channel, grid, Assignment{sample.labels}, power);
    CHECK(std::abs(at_label.sum_rate - sample.oracle_rate) <= 1e-12 * std::max(1.0, sample.oracle_rate));
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        CHECK(evaluate_mapping(sample.channel, grid, Assignment{{a, b}}, power).sum_rate <=
              sample.oracle_rate);
      }
    }
  }

  ChannelMatrix ch;
  ch.h = ComplexMatrix::Zero(16, 2);
  Rng rng(1);
  ch.h.col(0).segment(0, 4) = sample_complex_gaussian(4, rng);
  ch.h.col(1).segment(0, 4) = sample_complex_gaussian(4, rng);
  ch.vrs = {{0, 4}, {0, 4}};
  const auto outside = evaluate_mapping(ch, grid, Assignment{{2, 1}}, power);
  CHECK_FALSE(outside.feasible());
  CHECK(outside.sum_rate == -std::numeric_limits<double>::infinity());
}

TEST_CASE("a perfect classifier has no gap") {
  const DatasetFile d = window_aligned_set(40, 11);
  // Masking restricts each user to the one window its channel occupies.
  MapperEnsemble e = make_ensemble(d, EnsembleMode::shared, true, quick_train(), 1);
  hard_wire(e.networks[0], 0);
  const auto rows = benchmark(e, d, {0.0, 10.0, 20.0});
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.gap_pct == 0.0);
    CHECK(r.accuracy_pct == 100.0);
    CHECK(r.cnn_rate == r.oracle_rate);
    CHECK(r.cnn_feasible_pct == 100.0);
    CHECK(r.greedy_rate <= r.oracle_rate);
  }
}

TEST_CASE("a constant classifier scores at chance") {
  const DatasetFile d = window_aligned_set(600, 12);
  MapperEnsemble e = make_ensemble(d, EnsembleMode::shared, false, quick_train(), 1);
  hard_wire(e.networks[0], 0);
  const auto rows = benchmark(e, d, {10.0});
  CHECK(test::within_binomial_3sigma(rows[0].accuracy_pct / 100.0 * 600, 600, 0.25));
  CHECK(rows[0].cnn_feasible_pct == doctest::Approx(rows[0].accuracy_pct));
}

TEST_CASE("benchmark dominance and masked feasibility") {
  const DatasetFile d = generate_dataset(small_scenario(3, 3), 30, 13);
  const MapperEnsemble e = make_ensemble(d, EnsembleMode::shared, true, quick_train(), 2);
  const auto rows = benchmark(e, d, {0.0, 20.0});
  for (const auto& r : rows) {
    CHECK(r.cnn_rate <= r.oracle_rate);
    CHECK(r.greedy_rate <= r.oracle_rate);
    CHECK(r.cnn_feasible_pct == 100.0);
  }
  BenchmarkOptions threaded;
  threaded.threads = 4;
  CHECK(benchmark_csv(benchmark(e, d, {0.0, 20.0}, threaded)) == benchmark_csv(rows));
}

TEST_CASE("benchmark CSV layout") {
  BenchmarkRow r;
  r.snr_db = 10;
  r.oracle_rate = 0.1;
  r.cnn_rate = 0.09;
  r.greedy_rate = 0.08;
  r.accuracy_pct = 75;
  r.gap_pct = 10;
  const std::string csv = benchmark_csv({r});
  CHECK(csv ==
        "snr_db,oracle_rate,cnn_rate,greedy_rate,accuracy_pct,gap_pct\n"
        "10,0.10000000000000001,0.089999999999999997,0.080000000000000002,75,10\n");
  CHECK(format_number(1.0 / 3.0) == "0.33333333333333331");
}

TEST_CASE("training the ensemble and persisting it") {
  const DatasetFile d = generate_dataset(small_scenario(2, 3), 24, 14);
  Rng split(1);
  const auto [train_set, val_set] = split_dataset(d, 0.25, split);
  for (EnsembleMode mode : {EnsembleMode::shared, EnsembleMode::per_user}) {
    MapperEnsemble a = make_ensemble(d, mode, true, quick_train(), 3);
    MapperEnsemble b = make_ensemble(d, mode, true, quick_train(), 3);
    const auto curves = train_ensemble(a, train_set, val_set);
    train_ensemble(b, train_set, val_set);
    CHECK(a == b);
    CHECK(curves.size() == a.networks.size());
    CHECK(curves[0].size() == 2);

    test::TempDir dir("ensemble");
    save_ensemble(a, dir / "m.bin");
    CHECK(load_ensemble(dir / "m.bin") == a);

    std::ofstream(dir / "bad.bin", std::ios::binary) << "XLSUMNN\x01garbage";
    CHECK_THROWS_AS(load_ensemble(dir / "bad.bin"), FormatError);
  }
}
