#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"
#include "random.hpp"

namespace fssuw {

/// Ordered registry of learnable tensors. Modules keep Var handles that alias
/// the entries here, so the registry is the single place optimizers and the
/// weight container look at.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  ag::Var<T> add(const std::string& name, Tensor<T> init) {
    require(!index_.count(name), ErrorCode::InvalidArgument, "duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, ag::Var<T>(std::move(init), true));
    return items_.back().second;
  }

  const std::vector<std::pair<std::string, ag::Var<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, ag::Var<T>>>& items() { return items_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ag::Var<T>& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorCode::InvalidArgument, "no parameter " + name);
    return items_[it->second].second;
  }

  void zero_grad() {
    for (auto& [_, v] : items_) v.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : items_) n += v.value().size();
    return n;
  }

  void fill(T v) {
    for (auto& [_, p] : items_) p.mutable_value().fill(v);
  }

 private:
  std::vector<std::pair<std::string, ag::Var<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Convolution layer with He-normal weights and zero bias.
template <typename T>
struct Conv2d {
  ag::Var<T> weight;
  ag::Var<T> bias;
  ag::ConvGeometry geometry;

  static Conv2d make(ParamSet<T>& params, const std::string& name, std::size_t cin, std::size_t cout,
                     std::size_t kernel, ag::ConvGeometry g, Rng& rng) {
    Tensor<T> w({cout, cin, kernel, kernel});
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * kernel * kernel));
    for (auto& v : w.values()) v = static_cast<T>(stddev * rng.normal());
    Conv2d c;
    c.weight = params.add(name + ".weight", std::move(w));
    c.bias = params.add(name + ".bias", Tensor<T>({cout}, T{0}));
    c.geometry = g;
    return c;
  }

  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv2d(x, weight, bias, geometry); }
};

}  // namespace fssuw
