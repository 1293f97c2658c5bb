#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hetmem/config.hpp"
#include "hetmem/data.hpp"
#include "hetmem/model.hpp"

namespace hetmem {

struct MetricRecord {
  std::size_t step = 0;
  std::string split;  // "train" or "valid"
  double loss_nats = 0;
  double bpc = 0;
  double wall_ms = 0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

// One JSON object per line: {"step":..,"split":..,"loss_nats":..,"bpc":..,"wall_ms":..}
std::string to_json_line(const MetricRecord& record);

struct EvalReport {
  std::string split;
  std::size_t tokens = 0;
  double mean_nats = 0;
  double bpc = 0;
  double wall_ms = 0;
  MemoryConfig memory;  // as used, including any eval-time LRM override
  MemoryPhase phase = MemoryPhase::eval;
};

// Pretty JSON. Wall-clock is left out unless asked for, so reports of the same
// computation compare byte-for-byte.
std::string to_json(const EvalReport& report, bool include_timing = false);

/// Adam with bias correction; moments live alongside the parameters.
class Adam {
 public:
  Adam(const ModelParams<float>& like, double beta1, double beta2, double epsilon);
  void step(ModelParams<float>& params, const ModelParams<float>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<Tensor<float>> m_;
  std::vector<Tensor<float>> v_;
};

// Rescales `grads` so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(ModelParams<float>& grads, double max_norm);

// Linear warmup to learning_rate, then cosine decay to min_lr_ratio * learning_rate
// at max_steps. `step` counts from 1.
double learning_rate_at(const TrainConfig& config, std::size_t step);

/// Streaming optimizer over the train split. Lanes advance contiguously; at
/// the end of a pass the stream restarts and every memory is cleared.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& train, const Corpus& corpus,
          const ModelParams<float>* init = nullptr);

  // One optimizer step; returns the mean training loss in nats. Throws
  // DivergenceError on a non-finite loss or gradient norm.
  double step();

  std::size_t steps_done() const noexcept { return steps_; }
  std::size_t epochs() const noexcept { return epochs_; }
  const ModelParams<float>& params() const noexcept { return params_; }
  const MemoryManager<float>& memories() const noexcept { return memories_; }
  const ModelConfig& model_config() const noexcept { return model_; }

 private:
  ModelConfig model_;
  TrainConfig train_;
  ModelParams<float> params_;
  Adam adam_;
  WindowStream stream_;
  MemoryManager<float> memories_;
  std::mt19937_64 dropout_rng_;
  std::size_t steps_ = 0;
  std::size_t epochs_ = 0;
};

struct TrainResult {
  ModelParams<float> params;  // from the best validation check
  std::vector<MetricRecord> log;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_valid_bpc = 0;
  bool stopped_early = false;
};

using MetricSink = std::function<void(const MetricRecord&)>;

/// Runs up to train.max_steps steps, validating every valid_interval steps (and
/// after the last one) on the first valid_prefix bytes of the validation split
/// with training-time memory lengths. Stops after `patience` checks without a
/// strict improvement and returns the parameters of the best check.
TrainResult train(const ModelConfig& model, const Corpus& corpus, const TrainConfig& train,
                  const MetricSink& sink = {}, const ModelParams<float>* init = nullptr);

struct EvalOptions {
  // Replaces memory.lrm_length_eval.
  std::optional<std::size_t> lrm_eval;
  // Scores only this many leading bytes of the split.
  std::optional<std::size_t> max_bytes;
  MemoryPhase phase = MemoryPhase::eval;
};

/// One contiguous single-lane pass over `split` with persistent memories.
/// Parameters are only read. Throws std::invalid_argument when the split is
/// too short to score a single position.
EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& config, const Corpus& corpus,
                    Split split, const EvalOptions& options = {});

struct SweepRow {
  std::size_t srm_length = 0;
  double valid_bpc = 0;
  double test_bpc = 0;
  std::size_t steps = 0;
};

struct SweepOptions {
  // Train the base config once, then fine-tune a copy for each length.
  bool fine_tune = false;
  std::size_t fine_tune_steps = 200;
  std::optional<std::size_t> eval_max_bytes;
};

// Lengths must be positive and strictly ascending.
std::vector<SweepRow> srm_sweep(const ExperimentConfig& base, const Corpus& corpus,
                                std::span<const std::size_t> lengths, const SweepOptions& options = {},
                                const MetricSink& sink = {});

// Tab-separated with a header row.
std::string format_sweep(std::span<const SweepRow> rows);

}  // namespace hetmem
