#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hetmem/config.hpp"
#include "hetmem/data.hpp"

namespace hetmem {

struct ProfileOptions {
  std::size_t warmup_steps = 10;
  std::size_t measure_steps = 50;
};

struct ProfileRow {
  std::string label;
  std::size_t num_lrm = 0;
  std::string pattern;
  std::size_t total_memory = 0;  // sum of per-layer training capacities
  // Largest per-step peak of tracked tensor bytes above what was resident
  // before the step, with the memory caches counted in.
  std::size_t peak_bytes = 0;
  double us_per_token = 0;  // median over measured steps
  std::size_t state_bytes = 0;
  double relative_flops = 0;
};

/// Runs warmup + measure training steps for each config, with the seed and
/// data of that config. Steps are taken round-robin across configs, one at a
/// time; nothing runs concurrently.
std::vector<ProfileRow> profile(std::span<const ExperimentConfig> configs, const Corpus& corpus,
                                const ProfileOptions& options = {});

struct CostPrediction {
  std::size_t state_bytes = 0;
  double relative_flops = 0;
};

/// sum over layers of attention_flops(n, m_l) plus layers * layer_constant,
/// with training-time capacities and fp32 state.
CostPrediction predict(const ModelConfig& config, double layer_constant);

// Non-attention work of one layer in query-key pair units, counted from the
// projection and feedforward shapes: n * d * (2 + ff_multiplier).
double default_layer_constant(const ModelConfig& config);

/// Least-squares fit of us_per_token = a * attention_term + b over the rows,
/// returning b / (a * layers). Falls back to default_layer_constant when the
/// fit is degenerate or a <= 0.
double calibrate_layer_constant(std::span<const ProfileRow> rows, std::span<const ModelConfig> configs);

// Spearman rank correlation, ties sharing their mean rank.
double spearman(std::span<const double> x, std::span<const double> y);

struct ReferencePoint {
  std::size_t num_lrm;
  double memory_gb;
  double us_per_token;
};

// 24-layer reference profile, kept for trend comparison.
inline constexpr std::array<ReferencePoint, 5> kReferenceProfile = {{
    {24, 3.4, 405},
    {12, 2.8, 273},
    {4, 1.1, 191},
    {1, 0.50, 155},
    {0, 0.20, 143},
}};

// Tab-separated table; leading '#' lines describe the memory metric.
std::string format_profile(std::span<const ProfileRow> rows);

// Whitespace-separated columns for plotting, measured rows then reference rows.
std::string format_profile_series(std::span<const ProfileRow> rows);

}  // namespace hetmem
