#include "hetmem/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "hetmem/errors.hpp"

namespace hetmem {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::vector<Tensor<float>*> tensors_of(ModelParams<float>& p) {
  std::vector<Tensor<float>*> out;
  p.for_each([&out](const std::string&, Tensor<float>& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor<float>*> tensors_of(const ModelParams<float>& p) {
  std::vector<const Tensor<float>*> out;
  p.for_each([&out](const std::string&, const Tensor<float>& t) { out.push_back(&t); });
  return out;
}

}  // namespace

std::string to_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["split"] = r.split;
  j["loss_nats"] = r.loss_nats;
  j["bpc"] = r.bpc;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

std::string to_json(const EvalReport& r, bool include_timing) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["tokens"] = r.tokens;
  j["mean_nats"] = r.mean_nats;
  j["bpc"] = r.bpc;
  if (include_timing) j["wall_ms"] = r.wall_ms;
  nlohmann::ordered_json m;
  m["phase"] = r.phase == MemoryPhase::eval ? "eval" : "train";
  m["pattern"] = std::string(to_string(r.memory.pattern));
  m["num_lrm"] = r.memory.num_lrm;
  m["lrm_layers"] = r.memory.lrm_layers;
  m["lrm_length"] = r.memory.lrm_length;
  m["lrm_length_eval"] = r.memory.lrm_length_eval;
  m["srm_length"] = r.memory.srm_length;
  m["capacities"] = r.memory.capacities(r.phase);
  j["memory"] = std::move(m);
  return j.dump(2);
}

Adam::Adam(const ModelParams<float>& like, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const Tensor<float>* t : tensors_of(like)) {
    m_.emplace_back(t->shape());
    v_.emplace_back(t->shape());
  }
}

void Adam::step(ModelParams<float>& params, const ModelParams<float>& grads, double lr) {
  ++t_;
  const auto p = tensors_of(params);
  const auto g = tensors_of(grads);
  if (p.size() != m_.size() || g.size() != m_.size()) throw ShapeError("adam: parameter layout changed");
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(epsilon_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    float* w = p[i]->ptr();
    const float* gi = g[i]->ptr();
    float* m = m_[i].ptr();
    float* v = v_[i].ptr();
    const std::size_t n = p[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * gi[j];
      v[j] = b2 * v[j] + (1.0f - b2) * gi[j] * gi[j];
      w[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

double clip_global_norm(ModelParams<float>& grads, double max_norm) {
  double sq = 0;
  auto g = tensors_of(grads);
  for (const Tensor<float>* t : g) {
    for (float x : t->data()) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (Tensor<float>* t : g) {
      for (float& x : t->data()) x *= s;
    }
  }
  return norm;
}

double learning_rate_at(const TrainConfig& c, std::size_t step) {
  if (c.warmup_steps > 0 && step <= c.warmup_steps) {
    return c.learning_rate * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  if (c.max_steps <= c.warmup_steps) return c.learning_rate;
  const double progress = std::min(
      1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(c.max_steps - c.warmup_steps));
  const double floor = c.min_lr_ratio * c.learning_rate;
  return floor + 0.5 * (c.learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const Corpus& corpus,
                 const ModelParams<float>* init)
    : model_(model),
      train_(train),
      params_(init != nullptr ? *init : ModelParams<float>::init(model, train.seed)),
      adam_(params_, train.beta1, train.beta2, train.epsilon),
      stream_(corpus.split(Split::train), train.lanes, model.window),
      memories_(model.memory, model.d_model, train.lanes, MemoryPhase::train),
      dropout_rng_(train.seed ^ 0x9e3779b97f4a7c15ULL) {
  model_.validate();
  train_.validate();
  if (stream_.lane_length() < 2) {
    throw std::invalid_argument("train split too small for " + std::to_string(train.lanes) + " lanes");
  }
}

double Trainer::step() {
  std::optional<Batch> batch = stream_.next();
  if (!batch) {
    stream_.restart();
    memories_.reset();
    ++epochs_;
    batch = stream_.next();
  }
  ++steps_;
  double loss_value = 0;
  ModelParams<float> grads;
  {
    Tape<float> tape;
    const ModelVars<float> vars = bind(tape, params_, true);
    ForwardOptions opts;
    if (model_.attention_dropout > 0) opts.rng = &dropout_rng_;
    ForwardResult<float> out = forward(vars, model_, batch->inputs, memories_, opts);
    const Var<float> l = loss(out.logits, batch->targets);
    loss_value = static_cast<double>(l.value()[0]);
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("non-finite training loss at step " + std::to_string(steps_) + " (lr " +
                            std::to_string(learning_rate_at(train_, steps_)) + ")");
    }
    tape.backward(l);
    grads = gradients(tape, vars, params_);
    memories_ = std::move(out.memories);
  }
  const double norm = clip_global_norm(grads, train_.clip_norm);
  if (!std::isfinite(norm)) {
    throw DivergenceError("non-finite gradient norm at step " + std::to_string(steps_) + " (loss " +
                          std::to_string(loss_value) + ")");
  }
  adam_.step(params_, grads, learning_rate_at(train_, steps_));
  return loss_value;
}

TrainResult train(const ModelConfig& model, const Corpus& corpus, const TrainConfig& config,
                  const MetricSink& sink, const ModelParams<float>* init) {
  const auto start = Clock::now();
  Trainer trainer(model, config, corpus, init);
  TrainResult result;
  result.params = trainer.params();
  result.best_valid_bpc = std::numeric_limits<double>::infinity();

  auto emit = [&](MetricRecord r) {
    if (sink) sink(r);
    result.log.push_back(std::move(r));
  };

  EvalOptions valid_opts;
  valid_opts.max_bytes = config.valid_prefix;
  valid_opts.phase = MemoryPhase::train;

  double interval_sum = 0;
  std::size_t interval_count = 0;
  std::size_t stale_checks = 0;
  for (std::size_t s = 1; s <= config.max_steps; ++s) {
    interval_sum += trainer.step();
    ++interval_count;
    if (s % config.log_interval == 0 || s == config.max_steps) {
      const double nats = interval_sum / static_cast<double>(interval_count);
      emit({s, "train", nats, bpc(nats), elapsed_ms(start)});
      interval_sum = 0;
      interval_count = 0;
    }
    if (s % config.valid_interval == 0 || s == config.max_steps) {
      const EvalReport v = evaluate(trainer.params(), model, corpus, Split::valid, valid_opts);
      emit({s, "valid", v.mean_nats, v.bpc, elapsed_ms(start)});
      if (v.bpc < result.best_valid_bpc) {
        result.best_valid_bpc = v.bpc;
        result.best_step = s;
        result.params = trainer.params();
        stale_checks = 0;
      } else if (++stale_checks >= config.patience) {
        result.stopped_early = true;
        result.steps = s;
        return result;
      }
    }
  }
  result.steps = config.max_steps;
  return result;
}

EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& config, const Corpus& corpus,
                    Split split, const EvalOptions& options) {
  const auto start = Clock::now();
  ModelConfig cfg = config;
  if (options.lrm_eval) cfg.memory.lrm_length_eval = *options.lrm_eval;
  cfg.validate();

  std::span<const std::uint8_t> data = corpus.split(split);
  if (options.max_bytes && *options.max_bytes < data.size()) data = data.first(*options.max_bytes);
  if (data.size() < 2) {
    throw std::invalid_argument("split '" + std::string(to_string(split)) + "' has no position to score");
  }

  WindowStream stream(data, 1, cfg.window);
  MemoryManager<float> memories(cfg.memory, cfg.d_model, 1, options.phase);
  double total = 0;
  std::size_t tokens = 0;
  while (std::optional<Batch> batch = stream.next()) {
    Tape<float> tape;
    const ModelVars<float> vars = bind(tape, params, false);
    ForwardResult<float> out = forward(vars, cfg, batch->inputs, memories);
    for (double nll : token_nll(out.logits.value(), batch->targets)) total += nll;
    tokens += batch->targets.size();
    memories = std::move(out.memories);
  }

  EvalReport r;
  r.split = std::string(to_string(split));
  r.tokens = tokens;
  r.mean_nats = total / static_cast<double>(tokens);
  r.bpc = bpc(r.mean_nats);
  r.memory = cfg.memory;
  r.phase = options.phase;
  r.wall_ms = elapsed_ms(start);
  return r;
}

std::vector<SweepRow> srm_sweep(const ExperimentConfig& base, const Corpus& corpus,
                                std::span<const std::size_t> lengths, const SweepOptions& options,
                                const MetricSink& sink) {
  if (lengths.empty()) throw std::invalid_argument("srm sweep needs at least one length");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0) throw std::invalid_argument("srm sweep lengths must be positive");
    if (i > 0 && lengths[i] <= lengths[i - 1]) {
      throw std::invalid_argument("srm sweep lengths must be strictly ascending");
    }
  }

  std::optional<ModelParams<float>> pretrained;
  if (options.fine_tune) pretrained = train(base.model, corpus, base.train, sink).params;

  EvalOptions eval_opts;
  eval_opts.max_bytes = options.eval_max_bytes;

  std::vector<SweepRow> rows;
  for (std::size_t length : lengths) {
    ModelConfig model = base.model;
    model.memory.srm_length = length;
    TrainConfig tc = base.train;
    if (options.fine_tune) {
      tc.max_steps = options.fine_tune_steps;
      tc.warmup_steps = std::min(tc.warmup_steps, tc.max_steps);
      tc.valid_interval = std::min(tc.valid_interval, tc.max_steps);
    }
    const TrainResult t = train(model, corpus, tc, sink, pretrained ? &*pretrained : nullptr);
    SweepRow row;
    row.srm_length = length;
    row.steps = t.steps;
    row.valid_bpc = evaluate(t.params, model, corpus, Split::valid, eval_opts).bpc;
    row.test_bpc = evaluate(t.params, model, corpus, Split::test, eval_opts).bpc;
    rows.push_back(row);
  }
  return rows;
}

std::string format_sweep(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "srm_length\tvalid_bpc\ttest_bpc\tsteps\n";
  for (const SweepRow& r : rows) {
    out << r.srm_length << '\t' << r.valid_bpc << '\t' << r.test_bpc << '\t' << r.steps << '\n';
  }
  return out.str();
}

}  // namespace hetmem
