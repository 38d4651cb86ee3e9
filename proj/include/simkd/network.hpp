#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "simkd/layers.hpp"
#include "simkd/ops.hpp"
#include "simkd/rng.hpp"

namespace simkd {

using TensorMap = std::map<std::string, Tensor>;
using NameSet = std::set<std::string>;

enum class Mode { Train, Eval };

/// Named tensors with a version stamp. Every mutable access bumps the
/// version so forward caches taken before an update are detectably stale.
class ParamStore {
 public:
  ParamStore() : id_(next_id()) {}
  ParamStore(const ParamStore& o) : tensors_(o.tensors_), id_(next_id()) {}
  ParamStore(ParamStore&& o) noexcept : tensors_(std::move(o.tensors_)), version_(o.version_), id_(o.id_) {}
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) {
      tensors_ = o.tensors_;
      ++version_;
    }
    return *this;
  }
  ParamStore& operator=(ParamStore&& o) noexcept {
    tensors_ = std::move(o.tensors_);
    version_ = o.version_ + 1;
    id_ = o.id_;
    return *this;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("no tensor named '" + name + "'");
    return it->second;
  }

  Tensor& mutable_at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("no tensor named '" + name + "'");
    ++version_;
    return it->second;
  }

  void set(const std::string& name, Tensor t) {
    tensors_[name] = std::move(t);
    ++version_;
  }

  void erase(const std::string& name) {
    tensors_.erase(name);
    ++version_;
  }

  std::size_t size() const { return tensors_.size(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  const TensorMap& tensors() const { return tensors_; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  std::uint64_t version() const { return version_; }
  std::uint64_t id() const { return id_; }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.tensors_ == b.tensors_; }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  TensorMap tensors_;
  std::uint64_t version_ = 0;
  std::uint64_t id_;
};

// --------------------------------------------------------------------------
// Stack: a named, shape-checked list of layers. Parameter names are
// "<name>.<layer index>.<slot>".

struct Stack {
  std::string name;
  Shape input;  // per-sample
  std::vector<LayerSpec> layers;
};

inline constexpr std::size_t kAllLayers = std::numeric_limits<std::size_t>::max();

inline std::string param_name(const Stack& s, std::size_t i, const std::string& slot) {
  return s.name + "." + std::to_string(i) + "." + slot;
}

/// Per-sample shapes before every layer and after the last (size L+1).
/// Throws ConfigError naming the incompatible layer pair.
inline std::vector<Shape> stack_shapes(const Stack& s) {
  std::vector<Shape> shapes{s.input};
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    try {
      shapes.push_back(infer_shape(s.layers[i], shapes.back()));
    } catch (const DimensionError& e) {
      const std::string prev = i ? "layer " + std::to_string(i - 1) + " " + layer_name(s.layers[i - 1])
                                 : "input " + shape_str(s.input);
      throw ConfigError(s.name + ": " + prev + " is incompatible with layer " + std::to_string(i) + " " +
                        layer_name(s.layers[i]) + " (" + e.what() + ")");
    }
  }
  return shapes;
}

inline Shape output_shape(const Stack& s) { return stack_shapes(s).back(); }

inline std::size_t param_count(const Stack& s) { return param_count(s.layers); }

/// Kaiming-uniform weights in +-sqrt(6 / fan_in), zero biases, BN (1, 0),
/// running stats (0, 1). Each tensor draws from rng.child(<its name>).
inline void init_stack(const Stack& s, ParamStore& params, ParamStore& buffers, const Rng& rng) {
  stack_shapes(s);
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    for (const auto& slot : param_slots(s.layers[i])) {
      const std::string name = param_name(s, i, slot.slot);
      Tensor t(slot.shape, slot.fill);
      if (slot.fan_in > 0) {
        const double bound = std::sqrt(6.0 / static_cast<double>(slot.fan_in));
        Rng r = rng.child(name);
        for (double& v : t.values()) v = r.uniform(-bound, bound);
      }
      params.set(name, std::move(t));
    }
    for (const auto& slot : buffer_slots(s.layers[i])) buffers.set(param_name(s, i, slot.slot), Tensor(slot.shape, slot.fill));
  }
}

/// Copies the tensors of layers [begin, end) of `src` into `dst_store`
/// re-indexed for `dst` (whose layer j corresponds to src layer begin + j).
inline void copy_layer_tensors(const Stack& src, const ParamStore& src_store, std::size_t begin, std::size_t end,
                               const Stack& dst, ParamStore& dst_store, bool buffers) {
  for (std::size_t i = begin; i < end; ++i) {
    const auto slots = buffers ? buffer_slots(src.layers[i]) : param_slots(src.layers[i]);
    for (const auto& slot : slots)
      dst_store.set(param_name(dst, i - begin, slot.slot), src_store.at(param_name(src, i, slot.slot)));
  }
}

struct LayerCache {
  Tensor input;
  Tensor xhat;                  // batch-norm normalized input
  std::vector<double> inv_std;  // batch-norm per channel
  bool train = false;
};

struct StackCache {
  std::uint64_t store_id = 0;
  std::uint64_t version = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<LayerCache> layers;
};

namespace detail {

inline void check_batch(const Tensor& x, const Shape& per_sample, const std::string& where) {
  if (x.rank() != per_sample.size() + 1 || !std::equal(per_sample.begin(), per_sample.end(), x.shape().begin() + 1))
    throw DimensionError(where + ": batch " + shape_str(x.shape()) + " does not match per-sample shape " +
                         shape_str(per_sample));
}

inline Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                                const Tensor& running_var, ParamStore* update, const std::string& mean_name,
                                const std::string& var_name, bool train, LayerCache* cache) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = x.size() / (n * c);
  const std::size_t m = n * spatial;
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(c);
  std::vector<double> batch_mean(c), batch_var(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < spatial; ++p) s += x[(b * c + ch) * spatial + p];
      mean = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < spatial; ++p) {
          const double d = x[(b * c + ch) * spatial + p] - mean;
          v += d * d;
        }
      var = v / static_cast<double>(m);
      batch_mean[ch] = mean;
      batch_var[ch] = m > 1 ? v / static_cast<double>(m - 1) : var;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    inv_std[ch] = is;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < spatial; ++p) {
        const std::size_t idx = (b * c + ch) * spatial + p;
        const double h = (x[idx] - mean) * is;
        xhat[idx] = h;
        y[idx] = gamma[ch] * h + beta[ch];
      }
  }
  if (train) {
    if (!update) throw UsageError("train-mode batch norm needs writable running statistics");
    Tensor& rm = update->mutable_at(mean_name);
    Tensor& rv = update->mutable_at(var_name);
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = kBatchNormMomentum * rm[ch] + (1.0 - kBatchNormMomentum) * batch_mean[ch];
      rv[ch] = kBatchNormMomentum * rv[ch] + (1.0 - kBatchNormMomentum) * batch_var[ch];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->train = train;
  }
  return y;
}

inline Tensor batchnorm_backward(const Tensor& g, const Tensor& gamma, const LayerCache& cache, Tensor* dgamma,
                                 Tensor* dbeta) {
  const std::size_t n = g.dim(0), c = g.dim(1);
  const std::size_t spatial = g.size() / (n * c);
  const double m = static_cast<double>(n * spatial);
  Tensor dx(g.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < spatial; ++p) {
        const std::size_t idx = (b * c + ch) * spatial + p;
        sum_g += g[idx];
        sum_gx += g[idx] * cache.xhat[idx];
      }
    if (dgamma) (*dgamma)[ch] = sum_gx;
    if (dbeta) (*dbeta)[ch] = sum_g;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < spatial; ++p) {
        const std::size_t idx = (b * c + ch) * spatial + p;
        dx[idx] = cache.train ? scale * (g[idx] - sum_g / m - cache.xhat[idx] * sum_gx / m) : scale * g[idx];
      }
  }
  return dx;
}

inline Tensor run_stack(const Stack& s, const ParamStore& params, const ParamStore& buffers, ParamStore* update,
                        const Tensor& x, Mode mode, StackCache* cache, std::size_t begin, std::size_t end) {
  if (end == kAllLayers) end = s.layers.size();
  if (begin > end || end > s.layers.size()) throw UsageError(s.name + ": layer range out of bounds");
  const auto shapes = stack_shapes(s);
  check_batch(x, shapes[begin], s.name + " layer " + std::to_string(begin));
  require_finite(x, (s.name + " input").c_str());
  const bool train = mode == Mode::Train;
  if (cache) {
    cache->store_id = params.id();
    cache->version = params.version();
    cache->begin = begin;
    cache->end = end;
    cache->layers.assign(end - begin, LayerCache{});
  }
  Tensor cur = x;
  for (std::size_t i = begin; i < end; ++i) {
    LayerCache* lc = cache ? &cache->layers[i - begin] : nullptr;
    if (lc) lc->input = cur;
    const LayerSpec& layer = s.layers[i];
    const std::size_t n = cur.dim(0);
    Shape batch_out{n};
    batch_out.insert(batch_out.end(), shapes[i + 1].begin(), shapes[i + 1].end());
    if (const auto* d = std::get_if<Dense>(&layer)) {
      Tensor y = matmul_bt(cur, params.at(param_name(s, i, "weight")));
      if (d->bias) {
        const Tensor& b = params.at(param_name(s, i, "bias"));
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t o = 0; o < d->out; ++o) y[r * d->out + o] += b[o];
      }
      cur = std::move(y);
    } else if (const auto* c = std::get_if<Conv>(&layer)) {
      cur = conv2d(cur, params.at(param_name(s, i, "weight")), c->depthwise ? c->in_ch : 1);
    } else if (std::holds_alternative<BatchNorm>(layer)) {
      const std::string mean_name = param_name(s, i, "running_mean"), var_name = param_name(s, i, "running_var");
      cur = batchnorm_forward(cur, params.at(param_name(s, i, "gamma")), params.at(param_name(s, i, "beta")),
                              buffers.at(mean_name), buffers.at(var_name), update, mean_name, var_name, train, lc);
    } else if (std::holds_alternative<ReLU>(layer)) {
      for (double& v : cur.values()) v = v > 0.0 ? v : 0.0;
    } else if (const auto* p = std::get_if<AvgPool>(&layer)) {
      cur = avg_pool(cur, p->window);
    } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
      const std::size_t ch = cur.dim(1), plane = cur.dim(2) * cur.dim(3);
      Tensor y(batch_out);
      for (std::size_t q = 0; q < n * ch; ++q) {
        double acc = 0.0;
        for (std::size_t k = 0; k < plane; ++k) acc += cur[q * plane + k];
        y[q] = acc / static_cast<double>(plane);
      }
      cur = std::move(y);
    } else {
      cur = cur.reshaped(batch_out);
    }
  }
  require_finite(cur, (s.name + " output").c_str());
  return cur;
}

}  // namespace detail

/// Runs layers [begin, end). In train mode batch norm uses batch statistics
/// and updates the running statistics in `buffers`.
inline Tensor forward(const Stack& s, const ParamStore& params, ParamStore& buffers, const Tensor& x, Mode mode,
                      StackCache* cache = nullptr, std::size_t begin = 0, std::size_t end = kAllLayers) {
  return detail::run_stack(s, params, buffers, &buffers, x, mode, cache, begin, end);
}

/// Eval-mode forward with read-only state.
inline Tensor infer(const Stack& s, const ParamStore& params, const ParamStore& buffers, const Tensor& x,
                    std::size_t begin = 0, std::size_t end = kAllLayers) {
  return detail::run_stack(s, params, buffers, nullptr, x, Mode::Eval, nullptr, begin, end);
}

/// Backpropagates `grad_out` through the cached range. Parameter gradients
/// are written into `grads` (accumulating if already present) except for
/// names in `frozen`. Returns the gradient with respect to the range input.
inline Tensor backward(const Stack& s, const ParamStore& params, const StackCache& cache, const Tensor& grad_out,
                       TensorMap& grads, const NameSet& frozen = {}) {
  if (cache.store_id != params.id() || cache.version != params.version())
    throw UsageError(s.name + ": forward cache is stale (parameters changed since forward)");
  if (cache.layers.size() != cache.end - cache.begin) throw UsageError(s.name + ": malformed forward cache");
  auto emit = [&](const std::string& name, Tensor g) {
    if (frozen.count(name)) return;
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, std::move(g));
    else
      axpy(1.0, g, it->second);
  };
  Tensor g = grad_out;
  for (std::size_t i = cache.end; i-- > cache.begin;) {
    const LayerCache& lc = cache.layers[i - cache.begin];
    const LayerSpec& layer = s.layers[i];
    if (const auto* d = std::get_if<Dense>(&layer)) {
      const Tensor& w = params.at(param_name(s, i, "weight"));
      emit(param_name(s, i, "weight"), matmul_at(g, lc.input));
      if (d->bias) {
        Tensor gb({d->out});
        for (std::size_t r = 0; r < g.dim(0); ++r)
          for (std::size_t o = 0; o < d->out; ++o) gb[o] += g[r * d->out + o];
        emit(param_name(s, i, "bias"), std::move(gb));
      }
      g = matmul(g, w);
    } else if (const auto* c = std::get_if<Conv>(&layer)) {
      auto cg = conv2d_backward(lc.input, params.at(param_name(s, i, "weight")), g, c->depthwise ? c->in_ch : 1);
      emit(param_name(s, i, "weight"), std::move(cg.kernel));
      g = std::move(cg.input);
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      Tensor dgamma({b->ch}), dbeta({b->ch});
      g = detail::batchnorm_backward(g, params.at(param_name(s, i, "gamma")), lc, &dgamma, &dbeta);
      emit(param_name(s, i, "gamma"), std::move(dgamma));
      emit(param_name(s, i, "beta"), std::move(dbeta));
    } else if (std::holds_alternative<ReLU>(layer)) {
      for (std::size_t k = 0; k < g.size(); ++k)
        if (!(lc.input[k] > 0.0)) g[k] = 0.0;
    } else if (const auto* p = std::get_if<AvgPool>(&layer)) {
      g = avg_pool_backward(lc.input.shape(), g, p->window);
    } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
      const std::size_t n = lc.input.dim(0), ch = lc.input.dim(1), plane = lc.input.dim(2) * lc.input.dim(3);
      Tensor gi(lc.input.shape());
      for (std::size_t q = 0; q < n * ch; ++q)
        for (std::size_t k = 0; k < plane; ++k) gi[q * plane + k] = g[q] / static_cast<double>(plane);
      g = std::move(gi);
    } else {
      g = g.reshaped(lc.input.shape());
    }
  }
  return g;
}

// --------------------------------------------------------------------------
// Networks: feature encoder + single dense classifier.

struct NetworkSpec {
  Shape input;  // per-sample, e.g. {C, H, W}
  std::vector<LayerSpec> encoder;
  Dense classifier;
  /// Encoder index one past the end of each building block; the last equals
  /// encoder.size(). Empty means a single block.
  std::vector<std::size_t> block_ends;

  std::size_t num_classes() const { return classifier.out; }
  std::size_t feature_dim() const { return classifier.in; }
};

inline Stack encoder_stack(const NetworkSpec& spec) { return {"enc", spec.input, spec.encoder}; }
inline Stack classifier_stack(const NetworkSpec& spec) {
  return {"cls", {spec.classifier.in}, {spec.classifier}};
}

inline std::vector<std::size_t> block_ends(const NetworkSpec& spec) {
  return spec.block_ends.empty() ? std::vector<std::size_t>{spec.encoder.size()} : spec.block_ends;
}

inline void validate(const NetworkSpec& spec) {
  const Shape feat = output_shape(encoder_stack(spec));
  if (feat.size() != 1)
    throw ConfigError("encoder must end in a feature vector, got per-sample shape " + shape_str(feat));
  if (feat[0] != spec.classifier.in)
    throw ConfigError("encoder output [" + std::to_string(feat[0]) + "] is incompatible with classifier " +
                      layer_name(spec.classifier));
  if (spec.classifier.out < 2) throw ConfigError("classifier needs at least two classes");
  const auto ends = block_ends(spec);
  for (std::size_t i = 0; i < ends.size(); ++i)
    if ((i && ends[i] <= ends[i - 1]) || (ends[i] == 0 && !spec.encoder.empty()))
      throw ConfigError("block boundaries must be strictly increasing and positive");
  if (ends.back() != spec.encoder.size()) throw ConfigError("last block boundary must equal the encoder length");
}

inline std::size_t param_count(const NetworkSpec& spec) {
  return param_count(spec.encoder) + param_count(LayerSpec{spec.classifier});
}

struct Model {
  NetworkSpec spec;
  Stack encoder;
  Stack classifier;
  ParamStore params;
  ParamStore buffers;
  Mode mode = Mode::Train;
};

inline Model build(const NetworkSpec& spec, const Rng& rng) {
  validate(spec);
  Model m{spec, encoder_stack(spec), classifier_stack(spec), {}, {}, Mode::Train};
  init_stack(m.encoder, m.params, m.buffers, rng);
  init_stack(m.classifier, m.params, m.buffers, rng);
  return m;
}

struct ForwardCache {
  StackCache encoder;
  StackCache classifier;
};

struct ForwardResult {
  Tensor features;
  Tensor logits;
  ForwardCache cache;
};

inline ForwardResult forward(Model& model, const Tensor& batch) {
  ForwardResult r;
  r.features = forward(model.encoder, model.params, model.buffers, batch, model.mode, &r.cache.encoder);
  r.logits = forward(model.classifier, model.params, model.buffers, r.features, model.mode, &r.cache.classifier);
  return r;
}

/// Eval-mode (features, logits) without touching model state.
inline std::pair<Tensor, Tensor> predict(const Model& model, const Tensor& batch) {
  Tensor f = infer(model.encoder, model.params, model.buffers, batch);
  Tensor g = infer(model.classifier, model.params, model.buffers, f);
  return {std::move(f), std::move(g)};
}

/// Exactly one of the two gradient entry points.
struct GradSource {
  std::optional<Tensor> logits;
  std::optional<Tensor> features;

  static GradSource at_logits(Tensor g) { return {std::move(g), std::nullopt}; }
  static GradSource at_features(Tensor g) { return {std::nullopt, std::move(g)}; }
};

inline TensorMap backward(const Model& model, const ForwardCache& cache, const GradSource& source,
                          const NameSet& frozen = {}) {
  if (source.logits.has_value() == source.features.has_value())
    throw UsageError("backward needs exactly one gradient source (logits or features)");
  TensorMap grads;
  Tensor g_feat;
  if (source.logits)
    g_feat = backward(model.classifier, model.params, cache.classifier, *source.logits, grads, frozen);
  else
    g_feat = *source.features;
  backward(model.encoder, model.params, cache.encoder, g_feat, grads, frozen);
  return grads;
}

inline NameSet names_with_prefix(const ParamStore& store, const std::string& prefix) {
  NameSet out;
  for (const auto& [name, _] : store)
    if (name.rfind(prefix, 0) == 0) out.insert(name);
  return out;
}

// --------------------------------------------------------------------------
// Reusing the deep end of a teacher.

/// Where the alignment happens when only the classifier is reused: on the
/// pooled feature vector, or on the last feature map before the trailing
/// parameter-free pooling (GlobalAvgPool / Flatten) layers.
enum class AlignPoint { FeatureVector, FeatureMap };

/// Encoder index at which the network is cut when its last k blocks (plus
/// the classifier) are taken over by the teacher.
inline std::size_t reuse_cut(const NetworkSpec& spec, std::size_t k, AlignPoint point) {
  const auto ends = block_ends(spec);
  if (k > ends.size())
    throw ConfigError("cannot reuse " + std::to_string(k) + " blocks of a " + std::to_string(ends.size()) +
                      "-block network");
  if (k > 0) return ends.size() - k == 0 ? 0 : ends[ends.size() - k - 1];
  if (point == AlignPoint::FeatureVector) return spec.encoder.size();
  std::size_t cut = spec.encoder.size();
  while (cut > 0 && (std::holds_alternative<GlobalAvgPool>(spec.encoder[cut - 1]) ||
                     std::holds_alternative<Flatten>(spec.encoder[cut - 1])))
    --cut;
  if (cut == spec.encoder.size()) throw ConfigError("encoder has no trailing pooling to align before");
  return cut;
}

/// Frozen deep part of a teacher: encoder layers from the cut onwards plus
/// the classifier, with copies of the teacher's tensors.
struct ReusedTail {
  Stack layers;  // "tail"
  Stack classifier;
  ParamStore params;
  ParamStore buffers;
  std::size_t teacher_cut = 0;

  Tensor logits(const Tensor& x) const {
    return infer(classifier, params, buffers, infer(layers, params, buffers, x));
  }
};

inline std::size_t param_count(const ReusedTail& tail) {
  return param_count(tail.layers) + param_count(tail.classifier);
}

struct ReuseSplit {
  Stack student;  // "enc", truncated student encoder
  std::size_t student_cut = 0;
  ReusedTail tail;
};

/// k = 0 reuses only the classifier (at `point`); k >= 1 additionally reuses
/// the teacher's last k building blocks.
inline ReuseSplit split_reuse(const Model& teacher, const NetworkSpec& student, std::size_t k,
                              AlignPoint point = AlignPoint::FeatureVector) {
  validate(student);
  if (student.num_classes() != teacher.spec.num_classes())
    throw ConfigError("teacher and student disagree on the number of classes");
  const std::size_t tcut = reuse_cut(teacher.spec, k, point);
  const std::size_t scut = reuse_cut(student, k, point);
  ReuseSplit split;
  split.student_cut = scut;
  split.student = Stack{"enc", student.input,
                        std::vector<LayerSpec>(student.encoder.begin(), student.encoder.begin() + static_cast<long>(scut))};
  const auto tshapes = stack_shapes(teacher.encoder);
  ReusedTail& tail = split.tail;
  tail.teacher_cut = tcut;
  tail.layers = Stack{"tail", tshapes[tcut],
                      std::vector<LayerSpec>(teacher.encoder.layers.begin() + static_cast<long>(tcut),
                                             teacher.encoder.layers.end())};
  tail.classifier = teacher.classifier;
  copy_layer_tensors(teacher.encoder, teacher.params, tcut, teacher.encoder.layers.size(), tail.layers, tail.params,
                     false);
  copy_layer_tensors(teacher.encoder, teacher.buffers, tcut, teacher.encoder.layers.size(), tail.layers,
                     tail.buffers, true);
  copy_layer_tensors(teacher.classifier, teacher.params, 0, 1, tail.classifier, tail.params, false);
  return split;
}

}  // namespace simkd
