#include "hetmem/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hetmem/training.hpp"

namespace hetmem {

namespace {

double attention_term(const ModelConfig& c) {
  double total = 0;
  for (std::size_t m : c.memory.capacities(MemoryPhase::train)) {
    total += static_cast<double>(attention_flops(c.window, m));
  }
  return total;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 == 1 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::vector<ProfileRow> profile(std::span<const ExperimentConfig> configs, const Corpus& corpus,
                                const ProfileOptions& options) {
  if (options.measure_steps == 0) throw std::invalid_argument("profile needs at least one measured step");
  std::vector<Trainer> trainers;
  trainers.reserve(configs.size());
  for (const ExperimentConfig& cfg : configs) trainers.emplace_back(cfg.model, cfg.train, corpus);
  std::vector<std::vector<double>> us(configs.size());
  std::vector<std::size_t> peak(configs.size(), 0);

  // Round-robin: step s of every config runs before step s+1 of any, so a
  // slow drift in machine speed shifts all configs alike.
  for (std::size_t s = 0; s < options.warmup_steps + options.measure_steps; ++s) {
    for (std::size_t i = 0; i < configs.size(); ++i) {
      Trainer& trainer = trainers[i];
      // Everything alive outside this config's memory caches is baseline.
      const std::size_t resident = AllocationTracker::current_bytes() - trainer.memories().bytes();
      AllocationTracker::reset_peak();
      const auto t0 = std::chrono::steady_clock::now();
      trainer.step();
      const auto t1 = std::chrono::steady_clock::now();
      if (s < options.warmup_steps) continue;
      const double tokens = static_cast<double>(configs[i].train.lanes * configs[i].model.window);
      peak[i] = std::max(peak[i], AllocationTracker::peak_bytes() - resident);
      us[i].push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() / tokens);
    }
  }

  std::vector<ProfileRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const ModelConfig& model = configs[i].model;
    ProfileRow row;
    row.num_lrm = model.memory.num_lrm;
    row.pattern = std::string(to_string(model.memory.pattern));
    row.label = std::to_string(row.num_lrm) + "-lrm-" + row.pattern;
    for (std::size_t m : model.memory.capacities(MemoryPhase::train)) row.total_memory += m;
    row.peak_bytes = peak[i];
    row.us_per_token = median(std::move(us[i]));
    const CostPrediction p = predict(model, default_layer_constant(model));
    row.state_bytes = p.state_bytes;
    row.relative_flops = p.relative_flops;
    rows.push_back(std::move(row));
  }
  return rows;
}

CostPrediction predict(const ModelConfig& config, double layer_constant) {
  CostPrediction p;
  p.state_bytes = state_size(config.memory, config.d_model, sizeof(float), MemoryPhase::train);
  p.relative_flops = attention_term(config) + static_cast<double>(config.layers) * layer_constant;
  return p;
}

double default_layer_constant(const ModelConfig& c) {
  return static_cast<double>(c.window * c.d_model * (2 + c.ff_multiplier));
}

double calibrate_layer_constant(std::span<const ProfileRow> rows, std::span<const ModelConfig> configs) {
  if (rows.size() != configs.size() || rows.empty()) {
    throw std::invalid_argument("calibrate: one config per profile row is required");
  }
  const double n = static_cast<double>(rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double x = attention_term(configs[i]);
    const double y = rows[i].us_per_token;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  if (rows.size() < 2 || std::abs(denom) < 1e-12 * std::max(1.0, n * sxx)) {
    return default_layer_constant(configs[0]);
  }
  const double a = (n * sxy - sx * sy) / denom;
  const double b = (sy - a * sx) / n;
  if (!(a > 0)) return default_layer_constant(configs[0]);
  return b / (a * static_cast<double>(configs[0].layers));
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0;
  return sxy / std::sqrt(sxx * syy);
}

std::string format_profile(std::span<const ProfileRow> rows) {
  std::ostringstream out;
  out << "# peak_bytes: largest tracked tensor bytes during one training step above the resident\n"
         "# parameters and optimizer state; includes activations, gradients and memory caches.\n"
         "# us_per_token: median wall-clock per input token over the measured steps.\n";
  out << "label\tnum_lrm\tpattern\ttotal_memory\tpeak_bytes\tus_per_token\tstate_bytes\trelative_flops\n";
  for (const ProfileRow& r : rows) {
    out << r.label << '\t' << r.num_lrm << '\t' << r.pattern << '\t' << r.total_memory << '\t' << r.peak_bytes
        << '\t' << r.us_per_token << '\t' << r.state_bytes << '\t' << r.relative_flops << '\n';
  }
  return out.str();
}

std::string format_profile_series(std::span<const ProfileRow> rows) {
  std::ostringstream out;
  out << "# source num_lrm peak_mb us_per_token\n";
  for (const ProfileRow& r : rows) {
    out << "measured " << r.num_lrm << ' ' << static_cast<double>(r.peak_bytes) / 1e6 << ' ' << r.us_per_token
        << '\n';
  }
  for (const ReferencePoint& p : kReferenceProfile) {
    out << "reference " << p.num_lrm << ' ' << p.memory_gb * 1e3 << ' ' << p.us_per_token << '\n';
  }
  return out.str();
}

}  // namespace hetmem
