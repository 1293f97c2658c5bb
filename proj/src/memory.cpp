#include "hetmem/memory.hpp"

#include <algorithm>
#include <stdexcept>

#include "hetmem/errors.hpp"

namespace hetmem {

std::string_view to_string(Arrangement pattern) {
  switch (pattern) {
    case Arrangement::interleaved: return "interleaved";
    case Arrangement::first: return "first";
    case Arrangement::last: return "last";
    case Arrangement::middle: return "middle";
    case Arrangement::explicit_set: return "explicit";
  }
  return "?";
}

Arrangement parse_arrangement(std::string_view name) {
  for (Arrangement p : {Arrangement::interleaved, Arrangement::first, Arrangement::last,
                        Arrangement::middle, Arrangement::explicit_set}) {
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown arrangement pattern '" + std::string(name) +
                    "' (expected interleaved, first, last, middle or explicit)");
}

std::vector<std::size_t> arrange(std::size_t layers, std::size_t num_lrm, Arrangement pattern) {
  if (num_lrm > layers) {
    throw std::invalid_argument("arrange: " + std::to_string(num_lrm) + " long-range memories for " +
                                std::to_string(layers) + " layers");
  }
  std::vector<std::size_t> out;
  if (num_lrm == 0) return out;
  switch (pattern) {
    case Arrangement::first:
      for (std::size_t i = 0; i < num_lrm; ++i) out.push_back(i);
      break;
    case Arrangement::last:
      for (std::size_t i = layers - num_lrm; i < layers; ++i) out.push_back(i);
      break;
    case Arrangement::middle: {
      const std::size_t centre = layers / 2;
      std::size_t start = centre >= num_lrm / 2 ? centre - num_lrm / 2 : 0;
      start = std::min(start, layers - num_lrm);
      for (std::size_t i = 0; i < num_lrm; ++i) out.push_back(start + i);
      break;
    }
    case Arrangement::interleaved: {
      const std::size_t stride = (layers + num_lrm - 1) / num_lrm;
      std::vector<bool> taken(layers, false);
      for (std::size_t j = 0; j < num_lrm; ++j) {
        std::size_t want = std::min(stride * (j + 1) - 1, layers - 1);
        std::size_t pick = want;
        while (taken[pick] && pick > 0) --pick;
        if (taken[pick]) {
          pick = want;
          while (taken[pick]) ++pick;
        }
        taken[pick] = true;
      }
      for (std::size_t i = 0; i < layers; ++i)
        if (taken[i]) out.push_back(i);
      break;
    }
    case Arrangement::explicit_set:
      throw std::invalid_argument("arrange: explicit layer sets are given, not computed");
  }
  return out;
}

MemoryConfig MemoryConfig::make(std::size_t layers, std::size_t num_lrm, Arrangement pattern,
                                std::size_t lrm_length, std::size_t lrm_length_eval,
                                std::size_t srm_length) {
  MemoryConfig c;
  c.num_layers = layers;
  c.num_lrm = num_lrm;
  c.pattern = pattern;
  c.lrm_length = lrm_length;
  c.lrm_length_eval = lrm_length_eval;
  c.srm_length = srm_length;
  c.resolve();
  return c;
}

void MemoryConfig::resolve() {
  if (pattern == Arrangement::explicit_set) {
    std::sort(lrm_layers.begin(), lrm_layers.end());
    num_lrm = lrm_layers.size();
    return;
  }
  if (num_lrm > num_layers) {
    throw ConfigError("memory.num_lrm (" + std::to_string(num_lrm) + ") exceeds layer count (" +
                      std::to_string(num_layers) + ")");
  }
  lrm_layers = arrange(num_layers, num_lrm, pattern);
}

void MemoryConfig::validate() const {
  if (num_layers == 0) throw ConfigError("memory: layer count must be positive");
  if (lrm_layers.size() != num_lrm) {
    throw ConfigError("memory: num_lrm does not match the resolved layer set");
  }
  for (std::size_t i = 0; i < lrm_layers.size(); ++i) {
    if (lrm_layers[i] >= num_layers) {
      throw ConfigError("memory: layer " + std::to_string(lrm_layers[i]) + " out of range [0, " +
                        std::to_string(num_layers) + ")");
    }
    if (i > 0 && lrm_layers[i] <= lrm_layers[i - 1]) {
      throw ConfigError("memory: LRM layer set must be strictly increasing");
    }
  }
}

bool MemoryConfig::is_lrm(std::size_t layer) const {
  return std::binary_search(lrm_layers.begin(), lrm_layers.end(), layer);
}

std::size_t MemoryConfig::capacity(std::size_t layer, MemoryPhase phase) const {
  if (!is_lrm(layer)) return srm_length;
  return phase == MemoryPhase::eval ? lrm_length_eval : lrm_length;
}

std::vector<std::size_t> MemoryConfig::capacities(MemoryPhase phase) const {
  std::vector<std::size_t> out(num_layers);
  for (std::size_t i = 0; i < num_layers; ++i) out[i] = capacity(i, phase);
  return out;
}

std::size_t state_size(const MemoryConfig& config, std::size_t width, std::size_t bytes_per_value,
                       MemoryPhase phase) {
  std::size_t total = 0;
  for (std::size_t m : config.capacities(phase)) total += m * width * bytes_per_value;
  return total;
}

template <class T>
LayerMemory<T>::LayerMemory(std::size_t layer, std::size_t capacity, std::size_t width,
                            std::size_t lanes)
    : layer_(layer), capacity_(capacity), width_(width), lanes_(lanes), rows_(Shape{lanes, 0, width}) {}

template <class T>
void LayerMemory<T>::update(const Tensor<T>& window) {
  const Shape& s = window.shape();
  const bool unbatched = s.size() == 2;
  if (!(unbatched && lanes_ == 1) && !(s.size() == 3 && s[0] == lanes_)) {
    throw ShapeError("memory update: window " + to_string(s) + " for " + std::to_string(lanes_) +
                     " lanes");
  }
  if (s.back() != width_) {
    throw ShapeError("memory update: width " + std::to_string(s.back()) + ", cache holds " +
                     std::to_string(width_));
  }
  if (capacity_ == 0) return;
  const std::size_t n = s[s.size() - 2];
  const std::size_t kept = std::min(count_ + n, capacity_);
  const std::size_t from_old = kept > n ? kept - n : 0;  // newest rows of the old cache
  const std::size_t from_new = kept - from_old;          // newest rows of the window
  Tensor<T> next(Shape{lanes_, kept, width_});
  for (std::size_t b = 0; b < lanes_; ++b) {
    T* dst = next.ptr() + b * kept * width_;
    const T* old = rows_.ptr() + (b * count_ + (count_ - from_old)) * width_;
    dst = std::copy(old, old + from_old * width_, dst);
    const T* fresh = window.ptr() + (b * n + (n - from_new)) * width_;
    std::copy(fresh, fresh + from_new * width_, dst);
  }
  rows_ = std::move(next);
  count_ = kept;
}

template <class T>
void LayerMemory<T>::clear() {
  rows_ = Tensor<T>(Shape{lanes_, 0, width_});
  count_ = 0;
}

template <class T>
MemoryManager<T>::MemoryManager(const MemoryConfig& config, std::size_t width, std::size_t lanes,
                                MemoryPhase phase)
    : config_(config), width_(width), lanes_(lanes), phase_(phase) {
  config_.validate();
  reset(lanes);
}

template <class T>
void MemoryManager<T>::reset() {
  reset(lanes_);
}

template <class T>
void MemoryManager<T>::reset(std::size_t lanes) {
  lanes_ = lanes;
  layers_.clear();
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    layers_.emplace_back(i, config_.capacity(i, phase_), width_, lanes_);
  }
}

template <class T>
std::size_t MemoryManager<T>::bytes() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.rows().bytes();
  return total;
}

template class LayerMemory<float>;
template class LayerMemory<double>;
template class MemoryManager<float>;
template class MemoryManager<double>;

}  // namespace hetmem
