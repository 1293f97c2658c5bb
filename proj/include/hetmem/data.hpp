#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hetmem/ops.hpp"

namespace hetmem {

enum class Split { train, valid, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SplitFractions {
  double train = 0.9;
  double valid = 0.05;
  double test = 0.05;
};

/// Raw bytes plus contiguous train | valid | test boundaries.
class Corpus {
 public:
  /// Reads `path` as bytes. Boundaries sit at round(size * train) and
  /// round(size * (train + valid)). Throws IoError for a missing or empty
  /// file, std::invalid_argument for fractions that do not sum to 1.
  static Corpus load(const std::filesystem::path& path, SplitFractions fractions = {});
  static Corpus from_bytes(std::string bytes, SplitFractions fractions = {});

  std::size_t size() const noexcept { return bytes_.size(); }
  std::size_t valid_begin() const noexcept { return valid_begin_; }
  std::size_t test_begin() const noexcept { return test_begin_; }
  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }
  std::span<const std::uint8_t> split(Split which) const;

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t valid_begin_ = 0;
  std::size_t test_begin_ = 0;
};

struct Batch {
  std::size_t lanes = 0;
  std::size_t window = 0;  // may be shorter than requested for the final window
  std::vector<TokenId> inputs;   // lanes * window, lane-major
  std::vector<TokenId> targets;  // inputs shifted by one byte
};

/// Contiguous windows over `lanes` equal chunks of a byte range.
///
/// Lane i covers [i*c, (i+1)*c) with c = size / lanes (a remainder at the end
/// is unused). Each call advances every lane by the window length; targets
/// are the following bytes, so a lane's last byte is only ever a target. The
/// last window of a pass is shortened rather than dropped, so one pass
/// scores every position of every lane exactly once.
class WindowStream {
 public:
  WindowStream(std::span<const std::uint8_t> data, std::size_t lanes, std::size_t window);

  // std::nullopt once every lane is exhausted.
  std::optional<Batch> next();
  void restart() { cursor_ = 0; }

  std::size_t lanes() const noexcept { return lanes_; }
  std::size_t lane_begin(std::size_t lane) const noexcept { return lane * chunk_; }
  std::size_t lane_length() const noexcept { return chunk_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t lanes_;
  std::size_t window_;
  std::size_t chunk_;
  std::size_t cursor_ = 0;  // offset within each lane
};

/// Deterministic English-like text with document-level long-range structure:
/// each document introduces invented names that recur throughout it. The
/// generator uses only raw mt19937_64 output, so the bytes are identical on
/// every platform.
std::string synthesize_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace hetmem
