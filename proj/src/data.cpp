#include "hetmem/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "hetmem/errors.hpp"

namespace hetmem {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, valid or test)");
}

Corpus Corpus::from_bytes(std::string bytes, SplitFractions f) {
  if (bytes.empty()) throw IoError("corpus is empty");
  if (f.train < 0 || f.valid < 0 || f.test < 0 || std::abs(f.train + f.valid + f.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
  Corpus c;
  c.bytes_.assign(bytes.begin(), bytes.end());
  const double size = static_cast<double>(c.bytes_.size());
  c.valid_begin_ = static_cast<std::size_t>(std::llround(size * f.train));
  c.test_begin_ = static_cast<std::size_t>(std::llround(size * (f.train + f.valid)));
  c.test_begin_ = std::min(c.test_begin_, c.bytes_.size());
  return c;
}

Corpus Corpus::load(const std::filesystem::path& path, SplitFractions fractions) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading corpus " + path.string());
  if (bytes.empty()) throw IoError("corpus " + path.string() + " is empty");
  return from_bytes(std::move(bytes), fractions);
}

std::span<const std::uint8_t> Corpus::split(Split which) const {
  const std::span<const std::uint8_t> all(bytes_);
  switch (which) {
    case Split::train: return all.subspan(0, valid_begin_);
    case Split::valid: return all.subspan(valid_begin_, test_begin_ - valid_begin_);
    case Split::test: return all.subspan(test_begin_);
  }
  return {};
}

WindowStream::WindowStream(std::span<const std::uint8_t> data, std::size_t lanes, std::size_t window)
    : data_(data), lanes_(lanes), window_(window), chunk_(lanes == 0 ? 0 : data.size() / lanes) {
  if (lanes == 0 || window == 0) throw std::invalid_argument("window stream needs lanes and window > 0");
}

std::optional<Batch> WindowStream::next() {
  if (chunk_ < 2 || cursor_ + 1 >= chunk_) return std::nullopt;
  const std::size_t n = std::min(window_, chunk_ - 1 - cursor_);
  Batch b;
  b.lanes = lanes_;
  b.window = n;
  b.inputs.resize(lanes_ * n);
  b.targets.resize(lanes_ * n);
  for (std::size_t lane = 0; lane < lanes_; ++lane) {
    const std::size_t base = lane * chunk_ + cursor_;
    for (std::size_t i = 0; i < n; ++i) {
      b.inputs[lane * n + i] = data_[base + i];
      b.targets[lane * n + i] = data_[base + i + 1];
    }
  }
  cursor_ += n;
  return b;
}

namespace {

class TextRng {
 public:
  explicit TextRng(std::uint64_t seed) : engine_(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  bool chance(double p) { return unit() < p; }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }

 private:
  std::mt19937_64 engine_;
};

constexpr std::string_view kWords[] = {
    "the", "of", "and", "to", "in", "a", "was", "is", "for", "that", "on", "as", "with", "by",
    "he", "it", "at", "from", "his", "an", "were", "are", "which", "this", "be", "also", "had",
    "first", "their", "one", "after", "its", "new", "who", "they", "two", "her", "she", "been",
    "other", "when", "there", "all", "during", "into", "school", "time", "may", "years", "more",
    "most", "only", "over", "city", "some", "world", "would", "where", "later", "up", "such",
    "used", "many", "can", "state", "about", "national", "out", "known", "university", "united",
    "then", "made", "between", "each", "under", "river", "several", "part", "second", "while",
    "team", "three", "both", "before", "through", "film", "season", "history", "early", "war",
    "north", "south", "family", "album", "government", "church", "house", "station", "number",
    "system", "music", "book", "club", "county", "league", "series", "people", "village", "music",
    "company", "party", "life", "following", "album", "local", "area", "village", "game", "since",
    "became", "around", "released", "received", "including", "across", "against", "called",
    "played", "named", "built", "among", "three", "four", "long", "small", "large", "great",
    "old", "high", "public", "major", "year", "day", "work", "land", "group", "field", "record",
    "water", "line", "west", "east", "council", "order", "court", "road", "bridge", "market",
    "island", "empire", "kingdom", "army"};

constexpr std::string_view kSyllables[] = {
    "ar", "bel", "cor", "dan", "el", "fir", "gal", "hen", "is", "jor", "kal", "lin",
    "mor", "nor", "ol", "per", "quen", "ros", "sel", "tor", "ul", "ven", "wyn", "zar"};

std::string invent_name(TextRng& rng) {
  std::string name;
  const std::size_t parts = rng.between(2, 3);
  for (std::size_t i = 0; i < parts; ++i) name += kSyllables[rng.below(std::size(kSyllables))];
  name[0] = static_cast<char>(name[0] - 'a' + 'A');
  return name;
}

// Zipf-like draw: index i with weight 1/(i+1).
std::string_view common_word(TextRng& rng) {
  static const std::vector<double> cdf = [] {
    std::vector<double> c(std::size(kWords));
    double total = 0;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = (total += 1.0 / static_cast<double>(i + 1));
    for (double& x : c) x /= total;
    return c;
  }();
  const double u = rng.unit();
  const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  return kWords[std::min<std::size_t>(it - cdf.begin(), std::size(kWords) - 1)];
}

}  // namespace

std::string synthesize_corpus(std::size_t bytes, std::uint64_t seed) {
  TextRng rng(seed);
  std::string out;
  out.reserve(bytes + 4096);
  while (out.size() < bytes) {
    std::vector<std::string> names(rng.between(3, 6));
    for (auto& n : names) n = invent_name(rng);
    const std::string year = std::to_string(rng.between(1700, 2019));
    out += " = " + names[0] + " " + names[1] + " = \n\n";
    const std::size_t doc_len = rng.between(1500, 5000);
    const std::size_t doc_start = out.size();
    while (out.size() - doc_start < doc_len) {
      const std::size_t sentences = rng.between(3, 7);
      out += " ";
      for (std::size_t s = 0; s < sentences; ++s) {
        const std::size_t words = rng.between(6, 18);
        std::string sentence;
        for (std::size_t w = 0; w < words; ++w) {
          std::string word;
          if (rng.chance(0.12)) {
            word = names[rng.below(names.size())];
          } else if (rng.chance(0.02)) {
            word = year;
          } else {
            word = std::string(common_word(rng));
          }
          if (w == 0 && word[0] >= 'a' && word[0] <= 'z') word[0] = static_cast<char>(word[0] - 'a' + 'A');
          if (w > 0) sentence += ' ';
          sentence += word;
          if (w + 1 < words && rng.chance(0.07)) sentence += ',';
        }
        out += sentence + ". ";
      }
      out += "\n";
    }
    out += "\n";
  }
  out.resize(bytes);
  return out;
}

}  // namespace hetmem
