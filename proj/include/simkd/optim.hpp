#pragma once

#include <string>
#include <vector>

#include "simkd/network.hpp"

namespace simkd {

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;
};

/// Momentum buffers keyed by parameter name.
struct SgdState {
  TensorMap velocity;
};

/// One step over every parameter that has a gradient:
///   d = g + wd * theta
///   v = mu * v + d
///   theta -= lr * (d + mu * v)     (Nesterov)  or  lr * v  (heavy ball)
/// Parameters in `frozen`, and parameters without a gradient, are untouched.
inline void sgd_step(ParamStore& params, const TensorMap& grads, SgdState& state, const SgdOptions& opt,
                     const NameSet& frozen = {}) {
  for (const auto& [name, g] : grads)
    if (!params.contains(name)) throw UsageError("sgd_step: gradient for unknown parameter '" + name + "'");
  for (const auto& [name, g] : grads) {
    if (frozen.count(name)) continue;
    Tensor& theta = params.mutable_at(name);
    require_same_shape(theta, g, "sgd_step");
    auto [it, fresh] = state.velocity.try_emplace(name, Tensor(theta.shape()));
    Tensor& v = it->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = g[i] + opt.weight_decay * theta[i];
      v[i] = opt.momentum * v[i] + d;
      const double step = opt.nesterov ? d + opt.momentum * v[i] : v[i];
      theta[i] -= opt.lr * step;
    }
    if (!theta.all_finite()) throw NumericError("sgd_step: parameter '" + name + "' diverged");
  }
}

/// Step schedule: the base rate divided by 10 at every milestone reached.
inline double step_lr(double base, const std::vector<std::size_t>& milestones, std::size_t epoch) {
  double lr = base;
  for (auto m : milestones)
    if (epoch >= m) lr /= 10.0;
  return lr;
}

}  // namespace simkd
