#include "hetmem/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "hetmem/errors.hpp"

namespace hetmem {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (lanes == 0) throw ConfigError("train.lanes must be positive");
  if (max_steps == 0) throw ConfigError("train.max_steps must be positive");
  if (valid_interval == 0) throw ConfigError("train.valid_interval must be positive");
  if (patience == 0) throw ConfigError("train.patience must be positive");
  if (valid_prefix == 0) throw ConfigError("train.valid_prefix must be positive");
  if (log_interval == 0) throw ConfigError("train.log_interval must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train.min_lr_ratio must be in [0, 1]");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view text, std::string_view want) {
  throw ConfigError("config: " + std::string(key) + " = '" + std::string(text) + "' is not " +
                    std::string(want));
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) bad_value(key, text, "a non-negative integer");
  return v;
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) bad_value(key, text, "a number");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  bad_value(key, text, "true or false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    out.push_back(parse_int<std::size_t>(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <class Ref>
Field size_field(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_int<std::size_t>(key, v); }};
}

template <class Ref>
Field u64_field(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_int<std::uint64_t>(key, v); }};
}

template <class Ref>
Field double_field(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_double(key, v); }};
}

template <class Ref>
Field bool_field(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_bool(key, v); }};
}

const std::vector<Field>& model_fields() {
  static const std::vector<Field> fields = {
      size_field("model.layers", [](ExperimentConfig& c) -> auto& { return c.model.layers; }),
      size_field("model.d_model", [](ExperimentConfig& c) -> auto& { return c.model.d_model; }),
      size_field("model.heads", [](ExperimentConfig& c) -> auto& { return c.model.heads; }),
      size_field("model.window", [](ExperimentConfig& c) -> auto& { return c.model.window; }),
      size_field("model.ff_multiplier", [](ExperimentConfig& c) -> auto& { return c.model.ff_multiplier; }),
      size_field("model.vocab", [](ExperimentConfig& c) -> auto& { return c.model.vocab; }),
      size_field("model.max_distance", [](ExperimentConfig& c) -> auto& { return c.model.max_distance; }),
      bool_field("model.tie_embeddings", [](ExperimentConfig& c) -> auto& { return c.model.tie_embeddings; }),
      bool_field("model.scale_logits", [](ExperimentConfig& c) -> auto& { return c.model.scale_logits; }),
      double_field("model.attention_dropout", [](ExperimentConfig& c) -> auto& { return c.model.attention_dropout; }),
      double_field("model.init_scale", [](ExperimentConfig& c) -> auto& { return c.model.init_scale; }),
      size_field("memory.lrm_length", [](ExperimentConfig& c) -> auto& { return c.model.memory.lrm_length; }),
      size_field("memory.lrm_length_eval", [](ExperimentConfig& c) -> auto& { return c.model.memory.lrm_length_eval; }),
      size_field("memory.srm_length", [](ExperimentConfig& c) -> auto& { return c.model.memory.srm_length; }),
      {"memory.pattern",
       [](const ExperimentConfig& c) { return std::string(to_string(c.model.memory.pattern)); },
       [](ExperimentConfig& c, std::string_view v) { c.model.memory.pattern = parse_arrangement(v); }},
      size_field("memory.num_lrm", [](ExperimentConfig& c) -> auto& { return c.model.memory.num_lrm; }),
      {"memory.lrm_layers", [](const ExperimentConfig& c) { return format_list(c.model.memory.lrm_layers); },
       [](ExperimentConfig& c, std::string_view v) { c.model.memory.lrm_layers = parse_list("memory.lrm_layers", v); }},
  };
  return fields;
}

const std::vector<Field>& run_fields() {
  static const std::vector<Field> fields = {
      double_field("train.learning_rate", [](ExperimentConfig& c) -> auto& { return c.train.learning_rate; }),
      size_field("train.warmup_steps", [](ExperimentConfig& c) -> auto& { return c.train.warmup_steps; }),
      double_field("train.clip_norm", [](ExperimentConfig& c) -> auto& { return c.train.clip_norm; }),
      size_field("train.lanes", [](ExperimentConfig& c) -> auto& { return c.train.lanes; }),
      size_field("train.max_steps", [](ExperimentConfig& c) -> auto& { return c.train.max_steps; }),
      size_field("train.valid_interval", [](ExperimentConfig& c) -> auto& { return c.train.valid_interval; }),
      size_field("train.patience", [](ExperimentConfig& c) -> auto& { return c.train.patience; }),
      u64_field("train.seed", [](ExperimentConfig& c) -> auto& { return c.train.seed; }),
      size_field("train.valid_prefix", [](ExperimentConfig& c) -> auto& { return c.train.valid_prefix; }),
      double_field("train.beta1", [](ExperimentConfig& c) -> auto& { return c.train.beta1; }),
      double_field("train.beta2", [](ExperimentConfig& c) -> auto& { return c.train.beta2; }),
      double_field("train.epsilon", [](ExperimentConfig& c) -> auto& { return c.train.epsilon; }),
      double_field("train.min_lr_ratio", [](ExperimentConfig& c) -> auto& { return c.train.min_lr_ratio; }),
      size_field("train.log_interval", [](ExperimentConfig& c) -> auto& { return c.train.log_interval; }),
      {"data.path", [](const ExperimentConfig& c) { return c.data.path; },
       [](ExperimentConfig& c, std::string_view v) { c.data.path = std::string(v); }},
      double_field("data.train_fraction", [](ExperimentConfig& c) -> auto& { return c.data.train_fraction; }),
      double_field("data.valid_fraction", [](ExperimentConfig& c) -> auto& { return c.data.valid_fraction; }),
      double_field("data.test_fraction", [](ExperimentConfig& c) -> auto& { return c.data.test_fraction; }),
  };
  return fields;
}

const Field* find_field(std::string_view key, bool model_only) {
  for (const Field& f : model_fields())
    if (f.key == key) return &f;
  if (!model_only)
    for (const Field& f : run_fields())
      if (f.key == key) return &f;
  return nullptr;
}

ExperimentConfig parse_impl(std::string_view text, bool model_only) {
  ExperimentConfig c;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const Field* f = find_field(key, model_only);
    if (f == nullptr) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("config: duplicate key '" + std::string(key) + "'");
    }
    f->set(c, value);
  }

  MemoryConfig& mem = c.model.memory;
  mem.num_layers = c.model.layers;
  if (!seen.contains("memory.lrm_length_eval")) mem.lrm_length_eval = mem.lrm_length;
  if (mem.pattern == Arrangement::explicit_set) {
    if (!seen.contains("memory.lrm_layers")) {
      throw ConfigError("config: memory.pattern = explicit needs memory.lrm_layers");
    }
    if (seen.contains("memory.num_lrm") && mem.num_lrm != mem.lrm_layers.size()) {
      throw ConfigError("config: memory.num_lrm disagrees with memory.lrm_layers");
    }
    mem.resolve();
  } else {
    const std::vector<std::size_t> given = mem.lrm_layers;
    if (!seen.contains("memory.num_lrm")) mem.num_lrm = std::min(mem.num_lrm, mem.num_layers);
    mem.resolve();
    if (seen.contains("memory.lrm_layers") && given != mem.lrm_layers) {
      throw ConfigError("config: memory.lrm_layers disagrees with pattern " +
                        std::string(to_string(mem.pattern)) + " (expected " + format_list(mem.lrm_layers) + ")");
    }
  }
  c.model.validate();
  if (!model_only) {
    c.train.validate();
    const double total = c.data.train_fraction + c.data.valid_fraction + c.data.test_fraction;
    if (c.data.train_fraction < 0 || c.data.valid_fraction < 0 || c.data.test_fraction < 0 ||
        std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("config: data fractions must be non-negative and sum to 1");
    }
  }
  return c;
}

std::string serialize_fields(const ExperimentConfig& c, const std::vector<Field>& fields) {
  std::string out;
  for (const Field& f : fields) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) { return parse_impl(text, false); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  if (!c.data.path.empty() && std::filesystem::path(c.data.path).is_relative()) {
    c.data.path = std::filesystem::absolute(path.parent_path() / c.data.path).lexically_normal().string();
  }
  return c;
}

std::string serialize(const ExperimentConfig& config) {
  return serialize_fields(config, model_fields()) + serialize_fields(config, run_fields());
}

std::string serialize_model(const ModelConfig& config) {
  ExperimentConfig c;
  c.model = config;
  return serialize_fields(c, model_fields());
}

ModelConfig parse_model(std::string_view text) { return parse_impl(text, true).model; }

}  // namespace hetmem
