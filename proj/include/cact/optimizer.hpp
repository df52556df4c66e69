#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "cact/errors.hpp"
#include "cact/nn.hpp"

namespace cact {

struct RmsPropConfig {
  double lr = 1e-4;
  double rho = 0.9;
  double eps = 1e-8;
};

// RMSprop over every trainable parameter of a store. Accumulator state is
// keyed by parameter name so it survives across epochs; a parameter with no
// gradient buffer this step contributes g = 0.
class RmsProp {
 public:
  explicit RmsProp(ParamStore& store, RmsPropConfig cfg = {}) : store_(&store), cfg_(cfg) {
    if (!(cfg_.rho >= 0.0 && cfg_.rho < 1.0))
      throw ContractError("rmsprop: rho must lie in [0,1)");
    if (!(cfg_.lr >= 0.0)) throw ContractError("rmsprop: learning rate must be non-negative");
  }

  const RmsPropConfig& config() const { return cfg_; }

  void step() {
    for (auto& [name, p] : store_->params()) {
      auto& v = state_[name];
      if (v.size() != p.size()) v.assign(p.size(), 0.0);
      if (!p.has_grad()) {
        for (double& vi : v) vi *= cfg_.rho;
        continue;
      }
      const auto& g = p.grad();
      auto& val = p.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i]))
          throw ContractError("rmsprop: non-finite gradient in parameter " + name);
        v[i] = cfg_.rho * v[i] + (1.0 - cfg_.rho) * g[i] * g[i];
        val[i] -= cfg_.lr * g[i] / (std::sqrt(v[i]) + cfg_.eps);
      }
    }
  }

  const std::vector<double>& accumulator(const std::string& name) const {
    auto it = state_.find(name);
    if (it == state_.end()) throw ContractError("rmsprop: no state for parameter " + name);
    return it->second;
  }

 private:
  ParamStore* store_;
  RmsPropConfig cfg_;
  std::unordered_map<std::string, std::vector<double>> state_;
};

}  // namespace cact
