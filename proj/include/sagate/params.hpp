#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sagate/nn.hpp"
#include "sagate/tensor.hpp"

namespace sagate {

/// Ordered name -> tensor registry. Registration order is the checkpoint
/// order and the optimizer traversal order, so it must be deterministic.
template <typename S>
class ParamMap {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }

  Tensor<S> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return items_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  size_t size() const { return items_.size(); }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  /// Copies values from another map; names and shapes must match exactly.
  void load_values(const ParamMap& src) {
    for (auto& [name, t] : items_) {
      Tensor<S> s = src.get(name);
      if (s.shape() != t.shape()) throw ShapeMismatch("checkpoint shape mismatch for " + name);
      t.mutable_value() = s.value();
    }
  }

  /// Checkpoint container: magic "STNC", u32 entry count, then per entry a
  /// u32 name length, the name bytes, and an embedded STNS record. Entries
  /// appear in registration order (the manifest).
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write("STNC", 4);
    detail::put_u32_le(f, static_cast<uint32_t>(items_.size()));
    for (const auto& [name, t] : items_) {
      detail::put_u32_le(f, static_cast<uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      save_stns(f, t);
    }
    if (!f) throw IoError("write failed: " + path);
  }

  static ParamMap load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "STNC", 4) != 0) throw IoError("bad checkpoint magic in " + path);
    uint32_t count = detail::get_u32_le(f);
    ParamMap out;
    for (uint32_t i = 0; i < count; ++i) {
      uint32_t len = detail::get_u32_le(f);
      std::string name(len, '\0');
      f.read(name.data(), len);
      out.add(name, load_stns<S>(f));
    }
    if (!f) throw IoError("truncated checkpoint: " + path);
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// -- initializers -------------------------------------------------------------

template <typename S>
Tensor<S> he_normal(Shape shape, int64_t fan_in, SplitMix64& rng) {
  const S std = static_cast<S>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return Tensor<S>::normal(std::move(shape), rng, S(0), std);
}

/// Conv builder; init "he" | "zero". Bias (when present) starts at zero.
template <typename S>
ConvParams<S> make_conv(ParamMap<S>& pm, const std::string& prefix, SplitMix64& rng, int64_t c_out,
                        int64_t c_in, int64_t k, int stride, int padding, bool bias,
                        const char* init = "he") {
  ConvParams<S> p;
  Shape ws{c_out, c_in, k, k};
  Tensor<S> w = (init[0] == 'z') ? Tensor<S>::zeros(ws) : he_normal<S>(ws, c_in * k * k, rng);
  p.weight = pm.add(prefix + ".weight", std::move(w));
  if (bias) p.bias = pm.add(prefix + ".bias", Tensor<S>::zeros({c_out}));
  p.stride = stride;
  p.padding = padding;
  return p;
}

/// MLP builder. The second layer starts at zero so a freshly built gate is
/// neutral: pre-sigmoid output 0, attention weight 0.5.
template <typename S>
MlpParams<S> make_mlp(ParamMap<S>& pm, const std::string& prefix, SplitMix64& rng, int64_t d_in,
                      int64_t d_out, double ratio) {
  const int64_t h = MlpParams<S>::hidden_width(d_in, ratio);
  MlpParams<S> p;
  p.w1 = pm.add(prefix + ".w1", he_normal<S>({h, d_in}, d_in, rng));
  p.b1 = pm.add(prefix + ".b1", Tensor<S>::zeros({h}));
  p.w2 = pm.add(prefix + ".w2", Tensor<S>::zeros({d_out, h}));
  p.b2 = pm.add(prefix + ".b2", Tensor<S>::zeros({d_out}));
  return p;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> make_norm_affine(ParamMap<S>& pm, const std::string& prefix,
                                                 int64_t c) {
  Tensor<S> g = pm.add(prefix + ".gamma", Tensor<S>::ones({c}));
  Tensor<S> b = pm.add(prefix + ".beta", Tensor<S>::zeros({c}));
  return {g, b};
}

}  // namespace sagate
