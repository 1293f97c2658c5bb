#pragma once

// Template members of ModelParams; included from model.hpp.

#include <string>

namespace hetmem {

template <class T>
template <class F>
void ModelParams<T>::for_each(F&& f) {
  f(std::string("embedding"), embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block." + std::to_string(i) + ".";
    BlockParams<T>& b = blocks[i];
    f(p + "norm1.gain", b.norm1_gain);
    f(p + "norm1.bias", b.norm1_bias);
    f(p + "attn.query", b.attention.query);
    f(p + "attn.key", b.attention.key);
    f(p + "attn.value", b.attention.value);
    f(p + "attn.output", b.attention.output);
    f(p + "attn.rel_bias", b.attention.rel_bias);
    f(p + "norm2.gain", b.norm2_gain);
    f(p + "norm2.bias", b.norm2_bias);
    f(p + "ff.in", b.ff_in);
    f(p + "ff.in_bias", b.ff_in_bias);
    f(p + "ff.out", b.ff_out);
    f(p + "ff.out_bias", b.ff_out_bias);
  }
  f(std::string("final_norm.gain"), final_gain);
  f(std::string("final_norm.bias"), final_bias);
  if (!output.empty()) f(std::string("output.weight"), output);
  f(std::string("output.bias"), output_bias);
}

template <class T>
template <class F>
void ModelParams<T>::for_each(F&& f) const {
  const_cast<ModelParams<T>*>(this)->for_each(
      [&f](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
}

template <class T>
std::size_t ModelParams<T>::count() const {
  std::size_t total = 0;
  for_each([&total](const std::string&, const Tensor<T>& t) { total += t.size(); });
  return total;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::convert() const {
  ModelParams<U> out;
  out.blocks.resize(blocks.size());
  std::vector<const Tensor<T>*> src;
  for_each([&src](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  // Mirror the tied/untied layout before visiting.
  if (output.empty()) out.output = Tensor<U>();
  else out.output = Tensor<U>(output.shape());
  std::size_t i = 0;
  out.for_each([&](const std::string&, Tensor<U>& t) {
    const Tensor<T>& s = *src[i++];
    t = Tensor<U>(s.shape());
    for (std::size_t j = 0; j < s.size(); ++j) t[j] = static_cast<U>(s[j]);
  });
  return out;
}

}  // namespace hetmem
