#include "hetmem/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hetmem/checkpoint.hpp"
#include "hetmem/config.hpp"
#include "hetmem/errors.hpp"
#include "hetmem/profiler.hpp"
#include "hetmem/training.hpp"

namespace hetmem {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRunConfigName = "run.cfg";

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

fs::path output_dir(const std::string& flag) {
  fs::path dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv(kOutputDirEnv);
    dir = env != nullptr && *env != '\0' ? fs::path(env) : fs::path(".");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

Corpus load_corpus(const DataConfig& d) {
  if (d.path.empty()) throw ConfigError("data.path is not set");
  return Corpus::load(d.path, {d.train_fraction, d.valid_fraction, d.test_fraction});
}

template <class T>
std::vector<T> split_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw UsageError(std::string("empty entry in ") + what);
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || item[0] == '-') throw UsageError(std::string("bad number '") + item + "' in " + what);
      out.push_back(static_cast<T>(v));
    }
  }
  if (out.empty()) throw UsageError(std::string("no entries in ") + what);
  return out;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
  std::string split = "test";
  std::optional<std::size_t> lrm_eval;
  std::optional<std::size_t> max_bytes;
  std::string data;
  std::string lengths;
  bool fine_tune = false;
  std::size_t fine_tune_steps = 200;
  std::string configs;
  std::size_t warmup = 10;
  std::size_t measure = 50;
  std::size_t layers = 0;
  std::size_t num_lrm = 0;
  std::string pattern;
  std::size_t corpus_bytes = 1'000'000;
  std::uint64_t corpus_seed = 1;
  std::string corpus_out;
};

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  const Corpus corpus = load_corpus(cfg.data);
  const fs::path dir = output_dir(o.out_dir);
  write_text(dir / kRunConfigName, serialize(cfg));
  std::ofstream log(dir / "metrics.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (dir / "metrics.jsonl").string());
  err << "training " << parameter_count(cfg.model) << " parameters on " << corpus.split(Split::train).size()
      << " bytes\n";
  const TrainResult r = train(cfg.model, corpus, cfg.train, [&](const MetricRecord& m) {
    const std::string line = to_json_line(m);
    out << line << '\n' << std::flush;
    log << line << '\n' << std::flush;
  });
  const fs::path ck = dir / "checkpoint.bin";
  save_checkpoint(ck, cfg.model, r.params);
  nlohmann::ordered_json summary;
  summary["checkpoint"] = ck.string();
  summary["steps"] = r.steps;
  summary["best_step"] = r.best_step;
  summary["best_valid_bpc"] = r.best_valid_bpc;
  summary["stopped_early"] = r.stopped_early;
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const Split split = parse_split(o.split);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  DataConfig data;
  if (!o.data.empty()) {
    data.path = o.data;
  } else {
    const fs::path run_cfg = fs::path(o.checkpoint).parent_path() / kRunConfigName;
    if (!fs::exists(run_cfg)) {
      throw UsageError("no --data given and no " + run_cfg.string() + " next to the checkpoint");
    }
    data = load_config(run_cfg).data;
  }
  const Corpus corpus = load_corpus(data);
  EvalOptions opts;
  opts.lrm_eval = o.lrm_eval;
  opts.max_bytes = o.max_bytes;
  const EvalReport r = evaluate(ck.params, ck.config, corpus, split, opts);
  out << to_json(r) << '\n';
  err << "evaluated " << r.tokens << " tokens in " << r.wall_ms << " ms\n";
  return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  const auto lengths = split_list<std::size_t>(o.lengths, "--lengths");
  const Corpus corpus = load_corpus(cfg.data);
  const fs::path dir = output_dir(o.out_dir);
  SweepOptions opts;
  opts.fine_tune = o.fine_tune;
  opts.fine_tune_steps = o.fine_tune_steps;
  opts.eval_max_bytes = o.max_bytes;
  const auto rows = srm_sweep(cfg, corpus, lengths, opts, [&err](const MetricRecord& m) {
    if (m.split == "valid") err << to_json_line(m) << '\n';
  });
  const std::string table = format_sweep(rows);
  write_text(dir / "sweep.tsv", table);
  out << table;
  return kExitOk;
}

int cmd_profile(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<ExperimentConfig> configs;
  for (const std::string& path : split_list<std::string>(o.configs, "--configs")) {
    configs.push_back(load_config(path));
  }
  const Corpus corpus = load_corpus(configs.front().data);
  const fs::path dir = output_dir(o.out_dir);
  err << "profiling " << configs.size() << " configs, " << o.warmup << " warmup + " << o.measure
      << " measured steps each\n";
  const auto rows = profile(configs, corpus, {o.warmup, o.measure});
  const std::string table = format_profile(rows);
  write_text(dir / "profile.tsv", table);
  write_text(dir / "profile_series.dat", format_profile_series(rows));
  out << table;
  return kExitOk;
}

int cmd_arrange(const Options& o, std::ostream& out) {
  if (o.layers == 0) throw UsageError("--layers must be positive");
  const Arrangement p = parse_arrangement(o.pattern);
  if (p == Arrangement::explicit_set) throw UsageError("pattern 'explicit' has no rule to print");
  if (o.num_lrm > o.layers) {
    throw ConfigError("--num-lrm " + std::to_string(o.num_lrm) + " exceeds --layers " + std::to_string(o.layers));
  }
  out << format_layer_set(arrange(o.layers, o.num_lrm, p), o.layers) << '\n';
  return kExitOk;
}

int cmd_make_corpus(const Options& o, std::ostream& out) {
  if (o.corpus_bytes == 0) throw UsageError("--bytes must be positive");
  write_text(o.corpus_out, synthesize_corpus(o.corpus_bytes, o.corpus_seed));
  out << o.corpus_out << '\n';
  return kExitOk;
}

}  // namespace

std::string format_layer_set(const std::vector<std::size_t>& layers, std::size_t num_layers) {
  if (num_layers > 1 && layers.size() == num_layers) return "0.." + std::to_string(num_layers - 1);
  std::string s;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0) s += ',';
    s += std::to_string(layers[i]);
  }
  return s;
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer-XL style language model with per-layer memory lengths", "hetmem"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train a model; metric records on stdout");
  train->add_option("--config", o.config, "experiment config file")->required();
  train->add_option("--seed", o.seed, "override train.seed");
  train->add_option("--output-dir", o.out_dir, std::string("output directory (default $") + kOutputDirEnv + " or .)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; JSON report on stdout");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--split", o.split, "valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--lrm-eval", o.lrm_eval, "long-range memory length at evaluation");
  eval->add_option("--data", o.data, "corpus file (default: data.path of run.cfg beside the checkpoint)");
  eval->add_option("--max-bytes", o.max_bytes, "score only this many leading bytes of the split");

  auto* sweep = app.add_subcommand("sweep-srm", "train and evaluate one model per short-range memory length");
  sweep->add_option("--config", o.config, "experiment config file")->required();
  sweep->add_option("--lengths", o.lengths, "comma-separated ascending lengths")->required();
  sweep->add_option("--seed", o.seed, "override train.seed");
  sweep->add_flag("--fine-tune", o.fine_tune, "fine-tune one base model instead of training each from scratch");
  sweep->add_option("--fine-tune-steps", o.fine_tune_steps, "steps per length when fine-tuning");
  sweep->add_option("--max-bytes", o.max_bytes, "evaluate only this many leading bytes of each split");
  sweep->add_option("--output-dir", o.out_dir, "output directory");

  auto* prof = app.add_subcommand("profile", "per-token latency and peak tracked memory per config");
  prof->add_option("--configs", o.configs, "comma-separated config files")->required();
  prof->add_option("--warmup", o.warmup, "discarded steps per config");
  prof->add_option("--measure", o.measure, "measured steps per config")->check(CLI::PositiveNumber);
  prof->add_option("--output-dir", o.out_dir, "output directory");

  auto* arr = app.add_subcommand("arrange", "print the long-range memory layer set");
  arr->add_option("--layers", o.layers, "layer count")->required();
  arr->add_option("--num-lrm", o.num_lrm, "long-range memory count")->required();
  arr->add_option("--pattern", o.pattern, "interleaved, first, last or middle")->required();

  auto* mk = app.add_subcommand("make-corpus", "write the deterministic synthetic text corpus");
  mk->add_option("--bytes", o.corpus_bytes, "corpus size");
  mk->add_option("--seed", o.corpus_seed, "generator seed");
  mk->add_option("--out", o.corpus_out, "output file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    if (!app.get_subcommands().empty()) err << "run '" << app.get_subcommands().front()->get_name() << " --help' for options\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (sweep->parsed()) return cmd_sweep(o, out, err);
    if (prof->parsed()) return cmd_profile(o, out, err);
    if (arr->parsed()) return cmd_arrange(o, out);
    if (mk->parsed()) return cmd_make_corpus(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace hetmem
