#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "simkd/losses.hpp"
#include "simkd/network.hpp"
#include "simkd/ops.hpp"

namespace simkd {

// Central-difference checks of every analytic gradient in the library.

struct GradSuiteResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline constexpr double kGradTolerance = 1e-6;

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

inline double safe_rel(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

/// Smallest |pre-activation| seen by any ReLU in a cached forward pass.
inline double relu_margin(const Stack& s, const StackCache& cache) {
  double m = INFINITY;
  for (std::size_t i = cache.begin; i < cache.end; ++i)
    if (std::holds_alternative<ReLU>(s.layers[i]))
      for (double v : cache.layers[i - cache.begin].input.data()) m = std::min(m, std::fabs(v));
  return m;
}

/// Randomizes affine and running statistics so batch norm is not an identity.
inline void perturb_batchnorm(const Stack& s, ParamStore& params, ParamStore& buffers, Rng& rng) {
  for (std::size_t i = 0; i < s.layers.size(); ++i)
    if (std::holds_alternative<BatchNorm>(s.layers[i])) {
      for (double& v : params.mutable_at(param_name(s, i, "gamma")).values()) v = 0.5 + rng.uniform();
      for (double& v : params.mutable_at(param_name(s, i, "beta")).values()) v = rng.normal();
      for (double& v : buffers.mutable_at(param_name(s, i, "running_mean")).values()) v = rng.normal();
      for (double& v : buffers.mutable_at(param_name(s, i, "running_var")).values()) v = 0.5 + rng.uniform();
    }
}

/// f = <w, stack(x)>; compares d f / d x and d f / d theta for every parameter.
inline double check_stack(const Stack& s, const ParamStore& params, const ParamStore& buffers, const Tensor& x,
                          const Tensor& w, Mode mode) {
  auto eval = [&](const ParamStore& p, const Tensor& in) {
    ParamStore scratch = buffers;
    return dot(w, forward(s, p, scratch, in, mode));
  };
  ParamStore scratch = buffers;
  StackCache cache;
  forward(s, params, scratch, x, mode, &cache);
  TensorMap grads;
  const Tensor gx = backward(s, params, cache, w, grads);
  double worst = safe_rel(gx, finite_diff_grad([&](const Tensor& in) { return eval(params, in); }, x));
  for (const auto& [name, t] : params) {
    auto f = [&, name = name](const Tensor& v) {
      ParamStore p = params;
      p.set(name, v);
      return eval(p, x);
    };
    const auto it = grads.find(name);
    const Tensor analytic = it == grads.end() ? Tensor(t.shape()) : it->second;
    worst = std::max(worst, safe_rel(analytic, finite_diff_grad(f, t)));
  }
  return worst;
}

struct LayerCase {
  std::string name;
  std::function<std::pair<LayerSpec, Shape>(Rng&)> make;  // layer + per-sample input shape
  Mode mode = Mode::Train;
  bool away_from_zero = false;
};

inline std::vector<LayerCase> layer_cases() {
  auto dims = [](Rng& r, std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(r.below(hi - lo + 1)); };
  return {
      {"dense", [=](Rng& r) { std::size_t i = dims(r, 1, 5), o = dims(r, 1, 5);
                              return std::pair{LayerSpec{Dense{i, o, true}}, Shape{i}}; }},
      {"dense_nobias", [=](Rng& r) { std::size_t i = dims(r, 1, 5), o = dims(r, 1, 5);
                                     return std::pair{LayerSpec{Dense{i, o, false}}, Shape{i}}; }},
      {"conv1x1", [=](Rng& r) { std::size_t c = dims(r, 1, 3), o = dims(r, 1, 3), h = dims(r, 1, 4), w = dims(r, 1, 4);
                                return std::pair{LayerSpec{Conv{c, o, 1, false}}, Shape{c, h, w}}; }},
      {"conv3x3", [=](Rng& r) { std::size_t c = dims(r, 1, 3), o = dims(r, 1, 3), h = dims(r, 1, 4), w = dims(r, 1, 4);
                                return std::pair{LayerSpec{Conv{c, o, 3, false}}, Shape{c, h, w}}; }},
      {"conv3x3_depthwise", [=](Rng& r) { std::size_t c = dims(r, 1, 4), h = dims(r, 1, 4), w = dims(r, 1, 4);
                                          return std::pair{LayerSpec{Conv{c, c, 3, true}}, Shape{c, h, w}}; }},
      {"batchnorm_train", [=](Rng& r) { std::size_t c = dims(r, 1, 3), h = dims(r, 1, 3), w = dims(r, 1, 3);
                                        return std::pair{LayerSpec{BatchNorm{c}}, Shape{c, h, w}}; }},
      {"batchnorm_train_vector", [=](Rng& r) { std::size_t c = dims(r, 1, 4);
                                               return std::pair{LayerSpec{BatchNorm{c}}, Shape{c}}; }},
      {"batchnorm_eval", [=](Rng& r) { std::size_t c = dims(r, 1, 3), h = dims(r, 1, 3), w = dims(r, 1, 3);
                                       return std::pair{LayerSpec{BatchNorm{c}}, Shape{c, h, w}}; }, Mode::Eval},
      {"relu", [=](Rng& r) { std::size_t c = dims(r, 1, 3), h = dims(r, 1, 3), w = dims(r, 1, 3);
                             return std::pair{LayerSpec{ReLU{}}, Shape{c, h, w}}; }, Mode::Train, true},
      {"avgpool", [=](Rng& r) { std::size_t c = dims(r, 1, 3), k = dims(r, 1, 2), h = k * dims(r, 1, 3), w = k * dims(r, 1, 3);
                                return std::pair{LayerSpec{AvgPool{k}}, Shape{c, h, w}}; }},
      {"global_avgpool", [=](Rng& r) { std::size_t c = dims(r, 1, 3), h = dims(r, 1, 4), w = dims(r, 1, 4);
                                       return std::pair{LayerSpec{GlobalAvgPool{}}, Shape{c, h, w}}; }},
      {"flatten", [=](Rng& r) { std::size_t c = dims(r, 1, 3), h = dims(r, 1, 3), w = dims(r, 1, 3);
                                return std::pair{LayerSpec{Flatten{}}, Shape{c, h, w}}; }},
  };
}

inline GradSuiteResult run_layer_suite(const LayerCase& lc, std::size_t instances, const Rng& root) {
  GradSuiteResult res{"layer/" + lc.name, instances, 0.0, false};
  for (std::size_t i = 0; i < instances; ++i) {
    Rng r = root.child(res.name, i);
    auto [layer, in_shape] = lc.make(r);
    const Stack s{"g", in_shape, {layer}};
    ParamStore params, buffers;
    init_stack(s, params, buffers, r.child("init"));
    perturb_batchnorm(s, params, buffers, r);
    Shape batch{3 + static_cast<std::size_t>(r.below(3))};
    batch.insert(batch.end(), in_shape.begin(), in_shape.end());
    Tensor x = random_tensor(batch, r);
    if (lc.away_from_zero)
      for (double& v : x.values()) v += v >= 0.0 ? 0.05 : -0.05;
    Shape out_shape{batch[0]};
    const Shape per = output_shape(s);
    out_shape.insert(out_shape.end(), per.begin(), per.end());
    const Tensor w = random_tensor(out_shape, r);
    res.max_rel_error = std::max(res.max_rel_error, check_stack(s, params, buffers, x, w, lc.mode));
  }
  res.passed = res.max_rel_error < kGradTolerance;
  return res;
}

/// Small conv network checked end to end through the model-level backward.
inline GradSuiteResult run_network_suite(std::size_t instances, const Rng& root) {
  GradSuiteResult res{"network/small_cnn", instances, 0.0, false};
  NetworkSpec spec;
  spec.input = {2, 4, 4};
  spec.encoder = {Conv{2, 3, 3}, BatchNorm{3}, ReLU{}, AvgPool{2}, Conv{3, 4, 1}, BatchNorm{4}, ReLU{},
                  GlobalAvgPool{}, Flatten{}};
  spec.classifier = Dense{4, 3, true};
  spec.block_ends = {4, 9};
  for (std::size_t i = 0; i < instances; ++i) {
    Rng r = root.child(res.name, i);
    Model m = build(spec, r.child("init"));
    perturb_batchnorm(m.encoder, m.params, m.buffers, r);
    // redraw inputs until no ReLU pre-activation sits near its kink
    Tensor x;
    for (std::size_t attempt = 0;; ++attempt) {
      x = random_tensor({3, 2, 4, 4}, r);
      Model probe = m;
      auto fr = forward(probe, x);
      if (relu_margin(probe.encoder, fr.cache.encoder) > 1e-3 || attempt > 50) break;
    }
    const Tensor w = random_tensor({3, 3}, r);
    auto eval = [&](const ParamStore& p) {
      Model copy = m;
      copy.params = p;
      return dot(w, forward(copy, x).logits);
    };
    Model work = m;
    auto fr = forward(work, x);
    const TensorMap grads = backward(work, fr.cache, GradSource::at_logits(w));
    for (const auto& [name, t] : m.params) {
      auto f = [&, name = name](const Tensor& v) {
        ParamStore p = m.params;
        p.set(name, v);
        return eval(p);
      };
      res.max_rel_error = std::max(res.max_rel_error, safe_rel(grads.at(name), finite_diff_grad(f, t)));
    }
  }
  res.passed = res.max_rel_error < kGradTolerance;
  return res;
}

inline Tensor random_one_hot(std::size_t n, std::size_t k, Rng& r) {
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(r.below(k));
  return one_hot(labels, k);
}

struct LossCase {
  std::string name;
  // returns the worst relative error of one random instance
  std::function<double(Rng&)> check;
};

inline std::vector<LossCase> loss_cases() {
  auto nk = [](Rng& r) {
    return std::pair{1 + static_cast<std::size_t>(r.below(4)), 2 + static_cast<std::size_t>(r.below(5))};
  };
  auto feature_shape = [](Rng& r) {
    const std::size_t n = 1 + static_cast<std::size_t>(r.below(3));
    if (r.below(2) == 0) return Shape{n, 2 + static_cast<std::size_t>(r.below(7))};
    return Shape{n, 1 + static_cast<std::size_t>(r.below(3)), 2, 2};
  };
  std::vector<LossCase> cases;
  cases.push_back({"cross_entropy", [=](Rng& r) {
    auto [n, k] = nk(r);
    const Tensor y = random_one_hot(n, k, r);
    const Tensor g = random_tensor({n, k}, r, 2.0);
    return safe_rel(cross_entropy(g, y).grad,
                    finite_diff_grad([&](const Tensor& v) { return cross_entropy(v, y).value; }, g));
  }});
  for (double T : {1.0, 4.0})
    cases.push_back({"kd_T" + std::to_string(static_cast<int>(T)), [=](Rng& r) {
      auto [n, k] = nk(r);
      const Tensor y = random_one_hot(n, k, r);
      const Tensor s = random_tensor({n, k}, r, 2.0), t = random_tensor({n, k}, r, 3.0);
      return safe_rel(kd_loss(s, t, y, T).grad,
                      finite_diff_grad([&](const Tensor& v) { return kd_loss(v, t, y, T).value; }, s));
    }});
  cases.push_back({"simkd_l2", [=](Rng& r) {
    const Shape sh = feature_shape(r);
    const Tensor ft = random_tensor(sh, r), fs = random_tensor(sh, r);
    return safe_rel(simkd_loss(ft, fs).grad,
                    finite_diff_grad([&](const Tensor& v) { return simkd_loss(ft, v).value; }, fs));
  }});
  cases.push_back({"output_l2", [=](Rng& r) {
    auto [n, k] = nk(r);
    const std::size_t c = 2 + static_cast<std::size_t>(r.below(5));
    const Tensor w = random_tensor({k, c}, r), ft = random_tensor({n, c}, r), fs = random_tensor({n, c}, r);
    return safe_rel(output_l2_loss(w, ft, fs).grad,
                    finite_diff_grad([&](const Tensor& v) { return output_l2_loss(w, ft, v).value; }, fs));
  }});
  cases.push_back({"combined_l2", [=](Rng& r) {
    auto [n, k] = nk(r);
    const std::size_t c = 2 + static_cast<std::size_t>(r.below(5));
    const Tensor w = random_tensor({k, c}, r), ft = random_tensor({n, c}, r), fs = random_tensor({n, c}, r);
    return safe_rel(combined_l2_loss(w, ft, fs).grad,
                    finite_diff_grad([&](const Tensor& v) { return combined_l2_loss(w, ft, v).value; }, fs));
  }});
  for (double alpha : {0.0, 0.5, 1.0})
    cases.push_back({"joint_alpha" + std::string(alpha == 0.5 ? "0.5" : alpha == 0.0 ? "0" : "1"), [=](Rng& r) {
      auto [n, k] = nk(r);
      const std::size_t c = 2 + static_cast<std::size_t>(r.below(5));
      const Tensor y = random_one_hot(n, k, r);
      const Tensor s = random_tensor({n, k}, r, 2.0), t = random_tensor({n, k}, r, 3.0);
      const Tensor ft = random_tensor({n, c}, r), fs = random_tensor({n, c}, r);
      auto value = [&](const Tensor& logits, const Tensor& feats) {
        return joint_loss(alpha, kd_loss(logits, t, y), simkd_loss(ft, feats)).value;
      };
      const JointLoss j = joint_loss(alpha, kd_loss(s, t, y), simkd_loss(ft, fs));
      return std::max(
          safe_rel(j.grad_logits, finite_diff_grad([&](const Tensor& v) { return value(v, fs); }, s)),
          safe_rel(j.grad_features, finite_diff_grad([&](const Tensor& v) { return value(s, v); }, fs)));
    }});
  return cases;
}

}  // namespace detail

/// Runs every suite with `instances` seeded random instances each.
inline std::vector<GradSuiteResult> run_gradcheck(std::size_t instances = 100, std::uint64_t seed = 0,
                                                  double tolerance = kGradTolerance,
                                                  std::size_t network_instances = 100) {
  const Rng root = Rng(seed).child("gradcheck");
  std::vector<GradSuiteResult> out;
  for (const auto& lc : detail::layer_cases()) out.push_back(detail::run_layer_suite(lc, instances, root));
  for (const auto& c : detail::loss_cases()) {
    GradSuiteResult res{"loss/" + c.name, instances, 0.0, false};
    for (std::size_t i = 0; i < instances; ++i) {
      Rng r = root.child(res.name, i);
      res.max_rel_error = std::max(res.max_rel_error, c.check(r));
    }
    out.push_back(res);
  }
  if (network_instances > 0) out.push_back(detail::run_network_suite(network_instances, root));
  for (auto& r : out) r.passed = r.max_rel_error < tolerance;
  return out;
}

}  // namespace simkd
