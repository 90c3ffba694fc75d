#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bianet/rng.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

// Named trainable tensors in registration order. Registration order is the
// iteration order everywhere (optimizer, checkpoint), so runs are
// reproducible.
template <typename T>
class ParamStore {
 public:
  // init_std > 0 draws zero-mean Gaussian values; otherwise zeros.
  Tensor<T> create(const std::string& name, Shape shape, double init_std,
                   Rng& rng) {
    if (index_.count(name)) {
      throw ConfigError("param store: duplicate name " + name);
    }
    std::vector<T> v(shape_numel(shape));
    if (init_std > 0) {
      for (auto& x : v) x = static_cast<T>(rng.normal() * init_std);
    }
    Tensor<T> t = Tensor<T>::from(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ConfigError("param store: unknown name " + name);
    }
    return items_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& items() const {
    return items_;
  }

  std::size_t size() const { return items_.size(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct Conv2d {
  ConvSpec spec;
  Tensor<T> weight;                // [Co, Ci, kh, kw]
  std::optional<Tensor<T>> bias;   // [Co]

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, spec, weight, bias);
  }
};

// Registers a conv layer under `name`.weight / `name`.bias. ReLU-oriented
// fan-in scaling (std = sqrt(2 / fan_in)), zero biases.
template <typename T>
Conv2d<T> make_conv(ParamStore<T>& store, const std::string& name,
                    const ConvSpec& spec, Rng& rng) {
  spec.validate();
  Conv2d<T> layer;
  layer.spec = spec;
  const double fan_in =
      static_cast<double>(spec.in_channels) * spec.kh * spec.kw;
  layer.weight = store.create(
      name + ".weight", {spec.out_channels, spec.in_channels, spec.kh, spec.kw},
      std::sqrt(2.0 / fan_in), rng);
  if (spec.has_bias) {
    layer.bias = store.create(name + ".bias", {spec.out_channels}, 0.0, rng);
  }
  return layer;
}

inline ConvSpec conv3x3(int ci, int co, int dilation = 1) {
  ConvSpec s;
  s.in_channels = ci;
  s.out_channels = co;
  s.kh = s.kw = 3;
  s.dh = s.dw = dilation;
  s.ph = s.pw = dilation;  // preserves spatial size
  return s;
}

inline ConvSpec conv1x1(int ci, int co) {
  ConvSpec s;
  s.in_channels = ci;
  s.out_channels = co;
  return s;
}

}  // namespace bianet
