#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "hetmem/tensor.hpp"

namespace hetmem {

/// Where the long-range memories go among the layers.
enum class Arrangement { interleaved, first, last, middle, explicit_set };

std::string_view to_string(Arrangement pattern);
// Throws ConfigError for an unknown name.
Arrangement parse_arrangement(std::string_view name);

/// Layer indices (ascending) that hold a long-range memory.
///
///  - first:       {0 .. num_lrm-1}
///  - last:        {layers-num_lrm .. layers-1}
///  - interleaved: ceil(layers/num_lrm)*(j+1)-1 for j in [0, num_lrm),
///                 clamped to the top layer; a collision falls back to the
///                 nearest free lower index
///  - middle:      contiguous block starting at floor(layers/2) - floor(num_lrm/2),
///                 shifted to fit
///
/// Throws std::invalid_argument when num_lrm > layers or for explicit_set,
/// which has no rule to apply.
std::vector<std::size_t> arrange(std::size_t layers, std::size_t num_lrm, Arrangement pattern);

enum class MemoryPhase { train, eval };

/// Per-layer memory lengths plus the arrangement they came from.
struct MemoryConfig {
  std::size_t num_layers = 12;
  std::size_t lrm_length = 384;
  // Test-time LRM length; equal to lrm_length unless extended.
  std::size_t lrm_length_eval = 384;
  std::size_t srm_length = 32;
  Arrangement pattern = Arrangement::interleaved;
  std::size_t num_lrm = 12;
  // Resolved set; the source of truth for explicit_set.
  std::vector<std::size_t> lrm_layers = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

  /// Builds a config whose lrm_layers come from arrange().
  static MemoryConfig make(std::size_t layers, std::size_t num_lrm, Arrangement pattern,
                           std::size_t lrm_length, std::size_t lrm_length_eval,
                           std::size_t srm_length);

  // Recomputes lrm_layers from pattern/num_lrm (no-op for explicit_set).
  void resolve();
  // Throws ConfigError when lrm_layers is out of range, unsorted or inconsistent.
  void validate() const;

  bool is_lrm(std::size_t layer) const;
  std::size_t capacity(std::size_t layer, MemoryPhase phase) const;
  std::vector<std::size_t> capacities(MemoryPhase phase) const;

  friend bool operator==(const MemoryConfig&, const MemoryConfig&) = default;
};

/// Bytes needed to hold every layer's full cache: sum of m_l * d * bytes.
std::size_t state_size(const MemoryConfig& config, std::size_t width, std::size_t bytes_per_value,
                       MemoryPhase phase = MemoryPhase::train);

/// FIFO cache of one layer's input activations for `lanes` parallel streams.
/// Rows are stored [lanes, count, width], oldest first, and never carry
/// gradient linkage: they are plain tensors, not tape values.
template <class T>
class LayerMemory {
 public:
  LayerMemory(std::size_t layer, std::size_t capacity, std::size_t width, std::size_t lanes);

  std::size_t layer() const noexcept { return layer_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t lanes() const noexcept { return lanes_; }
  std::size_t size() const noexcept { return count_; }
  const Tensor<T>& rows() const noexcept { return rows_; }

  /// Appends a [lanes, n, width] (or [n, width] for one lane) window, dropping
  /// the oldest rows beyond capacity.
  void update(const Tensor<T>& window);
  void clear();

 private:
  std::size_t layer_;
  std::size_t capacity_;
  std::size_t width_;
  std::size_t lanes_;
  std::size_t count_ = 0;
  Tensor<T> rows_;
};

/// All layers' caches for one group of streams. Copyable value; one instance
/// per training or evaluation stream group, never shared between threads.
template <class T>
class MemoryManager {
 public:
  MemoryManager(const MemoryConfig& config, std::size_t width, std::size_t lanes,
                MemoryPhase phase = MemoryPhase::train);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t lanes() const noexcept { return lanes_; }
  MemoryPhase phase() const noexcept { return phase_; }
  const MemoryConfig& config() const noexcept { return config_; }

  const LayerMemory<T>& layer(std::size_t i) const { return layers_.at(i); }
  void update(std::size_t layer, const Tensor<T>& window) { layers_.at(layer).update(window); }

  // Empties every cache; `lanes` may change the stream count.
  void reset();
  void reset(std::size_t lanes);

  // Bytes currently held by cached rows.
  std::size_t bytes() const;

 private:
  MemoryConfig config_;
  std::size_t width_;
  std::size_t lanes_;
  MemoryPhase phase_;
  std::vector<LayerMemory<T>> layers_;
};

extern template class LayerMemory<float>;
extern template class LayerMemory<double>;
extern template class MemoryManager<float>;
extern template class MemoryManager<double>;

}  // namespace hetmem
