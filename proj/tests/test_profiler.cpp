#include <cmath>
#include <vector>

#include "doctest.h"

#include "hetmem/profiler.hpp"

using namespace hetmem;

namespace {

ExperimentConfig small(std::size_t num_lrm) {
  ExperimentConfig e;
  e.model.layers = 4;
  e.model.d_model = 16;
  e.model.heads = 2;
  e.model.window = 8;
  e.model.ff_multiplier = 2;
  e.model.max_distance = 71;
  e.model.memory = MemoryConfig::make(4, num_lrm, Arrangement::interleaved, 64, 64, 4);
  e.train.lanes = 2;
  e.train.warmup_steps = 2;
  return e;
}

}  // namespace

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> up{10, 20, 30, 40, 1000};
  const std::vector<double> down{5, 4, 3, 2, 1};
  CHECK(spearman(a, up) == doctest::Approx(1.0));
  CHECK(spearman(a, down) == doctest::Approx(-1.0));
  // One adjacent swap among five: 1 - 6*2/(5*24) = 0.9.
  const std::vector<double> swapped{1, 2, 4, 3, 5};
  CHECK(spearman(a, swapped) == doctest::Approx(0.9));
  // Ties take their mean rank.
  const std::vector<double> tied{1, 2, 2, 4, 5};
  CHECK(spearman(tied, a) == doctest::Approx(0.9746794344808963));
  CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{2}), std::invalid_argument);
}

TEST_CASE("cost prediction") {
  ModelConfig c = small(0).model;
  c.memory = MemoryConfig::make(4, 0, Arrangement::first, 0, 0, 0);
  const double k = default_layer_constant(c);
  CHECK(k == 8.0 * 16 * 4);
  const auto none = predict(c, k);
  CHECK(none.state_bytes == 0);
  CHECK(none.relative_flops == 4 * (64 + k));

  // Doubling every memory length adds exactly n * m per layer again.
  c.memory = MemoryConfig::make(4, 4, Arrangement::first, 10, 10, 10);
  const auto once = predict(c, k);
  c.memory = MemoryConfig::make(4, 4, Arrangement::first, 20, 20, 20);
  const auto twice = predict(c, k);
  CHECK(twice.relative_flops - once.relative_flops == 4 * 8 * 10);
  CHECK(twice.state_bytes == 2 * once.state_bytes);
  CHECK(once.state_bytes == 4 * 10 * 16 * 4);
}

TEST_CASE("layer constant calibration recovers a synthetic fit") {
  std::vector<ModelConfig> configs;
  std::vector<ProfileRow> rows;
  for (std::size_t k : {4, 2, 1, 0}) {
    configs.push_back(small(k).model);
    const double attn = predict(configs.back(), 0).relative_flops;
    ProfileRow r;
    r.us_per_token = 0.01 * attn + 0.01 * 4 * 700;  // slope 0.01, constant 700 per layer
    rows.push_back(r);
  }
  CHECK(calibrate_layer_constant(rows, configs) == doctest::Approx(700.0));
  for (auto& r : rows) r.us_per_token = 5;  // flat: no slope to fit
  CHECK(calibrate_layer_constant(rows, configs) == default_layer_constant(configs[0]));
}

TEST_CASE("profile peaks shrink with fewer long-range memories and repeat exactly") {
  const std::vector<ExperimentConfig> configs{small(4), small(2), small(0)};
  const auto corpus = Corpus::from_bytes(synthesize_corpus(20000, 5));
  ProfileOptions o;
  o.warmup_steps = 2;
  o.measure_steps = 3;
  const auto a = profile(configs, corpus, o);
  const auto b = profile(configs, corpus, o);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].peak_bytes == b[i].peak_bytes);
    CHECK(a[i].us_per_token > 0);
    CHECK(a[i].num_lrm == configs[i].model.memory.num_lrm);
  }
  CHECK(a[0].peak_bytes > a[1].peak_bytes);
  CHECK(a[1].peak_bytes > a[2].peak_bytes);
  CHECK(a[0].relative_flops > a[1].relative_flops);
  CHECK(a[0].total_memory == 4 * 64);

  const std::string table = format_profile(a);
  CHECK(table.starts_with("#"));
  CHECK(table.find("peak_bytes") != std::string::npos);
  const std::string series = format_profile_series(a);
  CHECK(series.find("reference") != std::string::npos);
}
