#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cact/ops.hpp"
#include "cact/rng.hpp"
#include "cact/tensor.hpp"

namespace cact {

// How a registered parameter is filled by ParamStore::initialize.
struct Init {
  enum Kind { fan_in_uniform, zeros, ones } kind = zeros;
  std::size_t fan_in = 1;

  static Init uniform(std::size_t fan_in) { return {fan_in_uniform, fan_in}; }
  static Init zero() { return {zeros, 1}; }
  static Init one() { return {ones, 1}; }
};

// Named registry of trainable parameters and persistent buffers (batch-norm
// running statistics). Tensors are shared handles, so layers keep their own
// copies of the same underlying storage.
class ParamStore {
 public:
  Tensor param(const std::string& name, Shape shape, Init init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Tensor t = Tensor::zeros(std::move(shape), true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, init, true, 0.0});
    return t;
  }

  Tensor buffer(const std::string& name, Shape shape, double fill) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Tensor t = Tensor::constant(std::move(shape), fill);
    index_[name] = entries_.size();
    entries_.push_back({name, t, Init::zero(), false, fill});
    return t;
  }

  // Each parameter draws from its own named stream, so adding or removing
  // unrelated parameters never shifts another parameter's initial values.
  // Buffers return to their registration fill, so a store is fully pristine
  // after initialize regardless of earlier training.
  void initialize(std::uint64_t master_seed) {
    for (Entry& e : entries_) {
      if (!e.trainable) {
        std::fill(e.tensor.data().begin(), e.tensor.data().end(), e.fill);
        continue;
      }
      switch (e.init.kind) {
        case Init::zeros:
          std::fill(e.tensor.data().begin(), e.tensor.data().end(), 0.0);
          break;
        case Init::ones:
          std::fill(e.tensor.data().begin(), e.tensor.data().end(), 1.0);
          break;
        case Init::fan_in_uniform: {
          Rng rng(stream_seed(master_seed, e.name));
          const double bound = 1.0 / std::sqrt(static_cast<double>(e.init.fan_in));
          for (double& v : e.tensor.data()) v = rng.uniform(-bound, bound);
          break;
        }
      }
    }
  }

  void zero_grads() {
    for (Entry& e : entries_)
      if (e.trainable) e.tensor.zero_grad();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  std::vector<std::pair<std::string, Tensor>> params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const Entry& e : entries_)
      if (e.trainable) out.emplace_back(e.name, e.tensor);
    return out;
  }

  // Registration order, parameters and buffers interleaved as declared;
  // this is the checkpoint serialization order.
  std::vector<std::pair<std::string, Tensor>> all() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const Entry& e : entries_) out.emplace_back(e.name, e.tensor);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::string name;
    Tensor tensor;
    Init init;
    bool trainable;
    double fill = 0.0;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Conv2dLayer {
  Tensor weight, bias;
  int stride = 1, padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& store, const std::string& name, std::size_t in_ch,
              std::size_t out_ch, std::size_t kh, std::size_t kw, int stride_ = 1,
              int padding_ = 0)
      : stride(stride_), padding(padding_) {
    const std::size_t fan_in = in_ch * kh * kw;
    weight = store.param(name + ".weight", {out_ch, in_ch, kh, kw}, Init::uniform(fan_in));
    bias = store.param(name + ".bias", {out_ch}, Init::uniform(fan_in));
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct BatchNorm2dLayer {
  Tensor gamma, beta, running_mean, running_var;
  double momentum = 0.1, eps = 1e-5;

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(ParamStore& store, const std::string& name, std::size_t channels) {
    gamma = store.param(name + ".gamma", {channels}, Init::one());
    beta = store.param(name + ".beta", {channels}, Init::zero());
    running_mean = store.buffer(name + ".running_mean", {channels}, 0.0);
    running_var = store.buffer(name + ".running_var", {channels}, 1.0);
  }

  Tensor operator()(const Tensor& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
};

struct DenseLayer {
  Tensor weight, bias;

  DenseLayer() = default;
  DenseLayer(ParamStore& store, const std::string& name, std::size_t in_features,
             std::size_t out_features) {
    weight = store.param(name + ".weight", {in_features, out_features},
                         Init::uniform(in_features));
    bias = store.param(name + ".bias", {out_features}, Init::uniform(in_features));
  }

  Tensor operator()(const Tensor& x) const { return dense(x, weight, bias); }
};

}  // namespace cact
