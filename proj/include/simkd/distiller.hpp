#pragma once

#include <cmath>
#include <functional>
#include <cstdint>
#include <limits>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "simkd/dataset.hpp"
#include "simkd/losses.hpp"
#include "simkd/network.hpp"
#include "simkd/optim.hpp"
#include "simkd/projector.hpp"

namespace simkd {

// --------------------------------------------------------------------------
// Configuration

enum class Method { Baseline, Teacher, KD, SimKD, Joint, Sequential, SimKDPlus, MultiTeacher };
enum class MultiVariant { AVEG, SimKD, SimKDv };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Baseline: return "baseline";
    case Method::Teacher: return "teacher";
    case Method::KD: return "kd";
    case Method::SimKD: return "simkd";
    case Method::Joint: return "joint";
    case Method::Sequential: return "sequential";
    case Method::SimKDPlus: return "simkd_plus";
    case Method::MultiTeacher: return "multi_teacher";
  }
  return "?";
}

inline std::string to_string(MultiVariant v) {
  switch (v) {
    case MultiVariant::AVEG: return "aveg";
    case MultiVariant::SimKD: return "simkd";
    case MultiVariant::SimKDv: return "simkd_v";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (auto m : {Method::Baseline, Method::Teacher, Method::KD, Method::SimKD, Method::Joint, Method::Sequential,
                 Method::SimKDPlus, Method::MultiTeacher})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

inline MultiVariant multi_variant_from_string(const std::string& s) {
  for (auto v : {MultiVariant::AVEG, MultiVariant::SimKD, MultiVariant::SimKDv})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown multi-teacher variant '" + s + "'");
}

struct DistillConfig {
  Method method = Method::SimKD;
  double T = kDefaultTemperature;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double lr = 0.05;
  std::vector<std::size_t> lr_milestones{35, 45, 55};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  ProjectorKind projector = ProjectorKind::Bottleneck;
  std::size_t r = 2;
  double alpha = 0.5;         // Joint
  std::size_t k_blocks = 1;   // SimKDPlus
  MultiVariant multi = MultiVariant::AVEG;
  std::optional<AugmentOptions> augment;
  std::size_t eval_batch = 250;
};

inline void validate(const DistillConfig& c) {
  if (!(c.T > 0.0)) throw ConfigError("temperature must be positive");
  if (c.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(c.lr >= 0.0) || !(c.momentum >= 0.0 && c.momentum < 1.0) || !(c.weight_decay >= 0.0))
    throw ConfigError("invalid optimizer settings");
  for (std::size_t i = 0; i < c.lr_milestones.size(); ++i) {
    if (i && c.lr_milestones[i] <= c.lr_milestones[i - 1]) throw ConfigError("lr milestones must strictly increase");
    if (c.epochs > 0 && c.lr_milestones[i] >= c.epochs) throw ConfigError("lr milestones must be below the epoch count");
  }
  if (c.method == Method::Joint && !(c.alpha >= 0.0 && c.alpha <= 1.0))
    throw ConfigError("joint loss weight alpha must lie in [0, 1]");
  if (c.r == 0) throw ConfigError("reduction factor must be positive");
  if (c.eval_batch == 0) throw ConfigError("eval batch must be positive");
}

inline SgdOptions sgd_options(const DistillConfig& c, double lr) { return {lr, c.momentum, c.weight_decay, true}; }

struct TrainingData {
  Dataset train;
  Dataset test;
  Normalization norm;
};

inline TrainingData make_training_data(Dataset train, Dataset test, std::optional<Normalization> norm = std::nullopt) {
  validate(train);
  validate(test);
  if (train.sample_shape() != test.sample_shape() || train.num_classes != test.num_classes)
    throw InputError("train and test sets disagree on sample shape or class count");
  Normalization n = norm ? *norm : compute_normalization(train);
  return {std::move(train), std::move(test), std::move(n)};
}

// --------------------------------------------------------------------------
// Parameter accounting

struct ParamBudget {
  std::uint64_t se = 0;    // student encoder (as deployed)
  std::uint64_t proj = 0;  // projector(s)
  std::uint64_t t = 0;     // whole teacher(s)
  std::uint64_t tc = 0;    // reused teacher part (classifier, plus blocks for SimKD+)
  std::uint64_t sc = 0;    // student classifier
};

/// 1 - (se + proj + tc - sc) / t.
inline double pruning_ratio(const ParamBudget& b) {
  if (b.t == 0) throw DomainError("pruning ratio needs a teacher with parameters");
  const double delta = static_cast<double>(b.tc) - static_cast<double>(b.sc);
  return 1.0 - (static_cast<double>(b.se) + static_cast<double>(b.proj) + delta) / static_cast<double>(b.t);
}

inline double vanilla_kd_ratio(std::uint64_t se, std::uint64_t t) { return pruning_ratio({se, 0, t, 0, 0}); }

// --------------------------------------------------------------------------
// Reports

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double test_top1 = 0.0;
  double test_nll = 0.0;
  std::optional<double> test_l2;
};

struct EvalMetrics {
  double top1 = 0.0;  // percent
  double nll = 0.0;
  std::optional<double> l2;
};

struct HeadResult {
  std::string head;  // "student", "teacher_cls", "sequential", "ensemble"
  EvalMetrics metrics;
};

struct TrainReport {
  std::string method;
  std::uint64_t seed = 0;
  std::optional<double> alpha;
  std::optional<std::size_t> r;
  std::vector<EpochRecord> epochs;
  std::vector<HeadResult> heads;  // final evaluation; first entry is the deployed head
  std::optional<ParamBudget> budget;
  std::optional<double> pruning_ratio;

  const HeadResult& head(const std::string& name) const {
    for (const auto& h : heads)
      if (h.head == name) return h;
    throw UsageError("report has no head '" + name + "'");
  }
};

// --------------------------------------------------------------------------
// Evaluation

struct BatchPrediction {
  Tensor logits;
  std::optional<double> l2_sum;  // summed over the samples of the batch
};

/// Top-1 (ties to the lowest class index), mean NLL at T = 1 and, when the
/// predictor supplies it, mean per-sample squared alignment error.
template <class Predict>
EvalMetrics evaluate_with(Predict&& predict, const Dataset& data, const Normalization& norm, std::size_t batch = 250) {
  if (data.size() == 0) throw InputError("cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  double nll = 0.0, l2 = 0.0;
  bool has_l2 = false;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    BatchPrediction p = [&] {
      if constexpr (std::is_invocable_v<Predict&, const Tensor&, std::span<const std::size_t>>)
        return predict(to_tensor(data, idx, norm), std::span<const std::size_t>(idx));
      else
        return predict(to_tensor(data, idx, norm));
    }();
    const Tensor logp = log_softmax_t(p.logits, 1.0);
    const std::size_t k = p.logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (p.logits[b * k + j] > p.logits[b * k + best]) best = j;
      const std::size_t y = data.labels[idx[b]];
      correct += best == y;
      nll -= logp[b * k + y];
    }
    if (p.l2_sum) {
      has_l2 = true;
      l2 += *p.l2_sum;
    }
  }
  const double n = static_cast<double>(data.size());
  EvalMetrics m{100.0 * static_cast<double>(correct) / n, nll / n, std::nullopt};
  if (has_l2) m.l2 = l2 / n;
  return m;
}

inline EvalMetrics evaluate(const Model& model, const Dataset& data, const Normalization& norm,
                            std::size_t batch = 250) {
  return evaluate_with([&](const Tensor& x) { return BatchPrediction{predict(model, x).second, std::nullopt}; }, data,
                       norm, batch);
}

/// Per-sample squared distances summed over the batch.
inline double squared_distance_sum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "squared_distance_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// --------------------------------------------------------------------------
// Epoch driver

inline std::vector<std::size_t> epoch_order(std::size_t n, const Rng& root, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng r = root.child("shuffle", epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
  return order;
}

struct Batch {
  const Tensor& x;
  std::span<const int> labels;
  std::span<const std::size_t> indices;  // rows of the training set
  bool augmented = false;
};

/// Runs cfg.epochs epochs of minibatch steps. `step(batch, lr)` returns the
/// batch loss; `eval()` returns test metrics after each epoch.
template <class Step, class Eval>
std::vector<EpochRecord> run_epochs(const TrainingData& data, const DistillConfig& cfg, Step&& step, Eval&& eval) {
  if (data.train.size() == 0) throw InputError("training set is empty");
  validate(cfg);
  const Rng root(cfg.seed);
  std::vector<EpochRecord> records;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_lr(cfg.lr, cfg.lr_milestones, epoch);
    const auto order = epoch_order(data.train.size(), root, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor x = to_tensor(data.train, idx, data.norm);
      if (cfg.augment) {
        Rng ar = root.child("augment", epoch).child("batch", b);
        x = augment(x, *cfg.augment, ar);
      }
      const std::vector<int> labels = labels_of(data.train, idx);
      loss_sum += step(Batch{x, labels, idx, cfg.augment.has_value()}, lr) * static_cast<double>(idx.size());
    }
    const EvalMetrics m = eval();
    records.push_back({epoch + 1, lr, loss_sum / static_cast<double>(order.size()), m.top1, m.nll, m.l2});
  }
  return records;
}

/// Memoizes a fixed per-sample map (an eval-mode teacher) over a dataset.
/// Eval-mode layers treat samples independently with a fixed summation
/// order, so a cached row is bitwise what a fresh batch would give.
class SampleCache {
 public:
  using Fn = std::function<Tensor(const Tensor&)>;

  SampleCache(const Dataset& data, const Normalization& norm, Fn fn, std::size_t chunk = 250)
      : data_(&data), norm_(&norm), fn_(std::move(fn)), chunk_(chunk) {}

  Tensor rows(std::span<const std::size_t> idx) {
    if (!table_) fill();
    const std::size_t row = table_->size() / table_->dim(0);
    Shape shape = table_->shape();
    shape[0] = idx.size();
    std::vector<double> out;
    out.reserve(idx.size() * row);
    const double* src = table_->data().data();
    for (auto i : idx) out.insert(out.end(), src + i * row, src + (i + 1) * row);
    return Tensor(std::move(shape), std::move(out));
  }

  /// Rows for a training batch; augmented inputs are recomputed.
  Tensor operator()(const Batch& b) { return b.augmented ? fn_(b.x) : rows(b.indices); }

 private:
  void fill() {
    std::vector<double> all;
    Shape shape;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data_->size(); start += chunk_) {
      const std::size_t end = std::min(data_->size(), start + chunk_);
      idx.resize(end - start);
      for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
      const Tensor t = fn_(to_tensor(*data_, idx, *norm_));
      if (shape.empty()) shape = t.shape();
      all.insert(all.end(), t.data().begin(), t.data().end());
    }
    shape[0] = data_->size();
    table_ = Tensor(std::move(shape), std::move(all));
  }

  const Dataset* data_;
  const Normalization* norm_;
  Fn fn_;
  std::size_t chunk_;
  std::optional<Tensor> table_;
};

inline void require_same_classes(const Model& teacher, const NetworkSpec& student) {
  if (teacher.spec.num_classes() != student.num_classes())
    throw ConfigError("teacher has " + std::to_string(teacher.spec.num_classes()) + " classes, student " +
                      std::to_string(student.num_classes()));
}

inline Model initial_student(const NetworkSpec& spec, std::uint64_t seed) { return build(spec, Rng(seed).child("model")); }

// --------------------------------------------------------------------------
// Cross-entropy training (teachers and baseline students)

struct ModelResult {
  Model model;
  TrainReport report;
};

/// Trains `model` in place with cross-entropy.
inline TrainReport train_model(Model& model, const TrainingData& data, const DistillConfig& cfg) {
  if (data.train.num_classes != model.spec.num_classes())
    throw ConfigError("dataset and network disagree on the number of classes");
  SgdState state;
  const std::size_t k = model.spec.num_classes();
  auto step = [&](const Batch& b, double lr) {
    model.mode = Mode::Train;
    auto fr = forward(model, b.x);
    LossValue loss = cross_entropy(fr.logits, one_hot(b.labels, k));
    const TensorMap grads = backward(model, fr.cache, GradSource::at_logits(std::move(loss.grad)));
    sgd_step(model.params, grads, state, sgd_options(cfg, lr));
    return loss.value;
  };
  auto eval = [&] { return evaluate(model, data.test, data.norm, cfg.eval_batch); };
  TrainReport report;
  report.method = cfg.method == Method::Teacher ? "teacher" : "baseline";
  report.seed = cfg.seed;
  report.epochs = run_epochs(data, cfg, step, eval);
  model.mode = Mode::Eval;
  report.heads.push_back({"student", eval()});
  return report;
}

inline ModelResult train_model(const NetworkSpec& spec, const TrainingData& data, const DistillConfig& cfg) {
  if (data.train.size() == 0) throw InputError("training set is empty");
  Model m = initial_student(spec, cfg.seed);
  TrainReport r = train_model(m, data, cfg);
  return {std::move(m), std::move(r)};
}

// --------------------------------------------------------------------------
// Vanilla KD (single teacher) and AVEG (mean of softened teacher predictions)

inline Tensor mean_soft_targets(const std::vector<const Model*>& teachers, const Tensor& x, double T) {
  Tensor acc;
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    Tensor p = softmax_t(predict(*teachers[i], x).second, T);
    if (i == 0)
      acc = std::move(p);
    else
      axpy(1.0, p, acc);
  }
  if (teachers.size() > 1)
    for (double& v : acc.values()) v /= static_cast<double>(teachers.size());
  return acc;
}

/// Trains `student` in place on CE + T^2 KL against the mean softened
/// prediction of `teachers` (one teacher: vanilla KD).
inline TrainReport train_kd(Model& student, const std::vector<const Model*>& teachers, const TrainingData& data,
                            const DistillConfig& cfg) {
  if (teachers.empty()) throw ConfigError("KD needs at least one teacher");
  for (const auto* t : teachers) require_same_classes(*t, student.spec);
  SgdState state;
  const std::size_t k = student.spec.num_classes();
  SampleCache soft_targets(data.train, data.norm,
                           [&](const Tensor& x) { return mean_soft_targets(teachers, x, cfg.T); }, cfg.eval_batch);
  auto step = [&](const Batch& b, double lr) {
    const Tensor soft = soft_targets(b);
    student.mode = Mode::Train;
    auto fr = forward(student, b.x);
    LossValue loss = kd_loss_from_probs(fr.logits, soft, one_hot(b.labels, k), cfg.T);
    const TensorMap grads = backward(student, fr.cache, GradSource::at_logits(std::move(loss.grad)));
    sgd_step(student.params, grads, state, sgd_options(cfg, lr));
    return loss.value;
  };
  auto eval = [&] { return evaluate(student, data.test, data.norm, cfg.eval_batch); };
  TrainReport report;
  report.method = teachers.size() == 1 ? "kd" : "aveg";
  report.seed = cfg.seed;
  report.epochs = run_epochs(data, cfg, step, eval);
  student.mode = Mode::Eval;
  report.heads.push_back({"student", eval()});
  std::uint64_t t = 0;
  for (const auto* tm : teachers) t += param_count(tm->spec);
  report.budget = ParamBudget{param_count(student.spec.encoder), 0, t, 0, 0};
  report.pruning_ratio = pruning_ratio(*report.budget);
  return report;
}

inline ModelResult distill_kd(const Model& teacher, const NetworkSpec& student_spec, const TrainingData& data,
                              const DistillConfig& cfg) {
  require_same_classes(teacher, student_spec);
  Model s = initial_student(student_spec, cfg.seed);
  TrainReport r = train_kd(s, {&teacher}, data, cfg);
  return {std::move(s), std::move(r)};
}

// --------------------------------------------------------------------------
// Classifier reuse: student (prefix) encoder + per-teacher projector +
// frozen teacher tail. One branch is plain SimKD / SimKD+; several branches
// are the multi-teacher variants, whose logits are averaged.

struct Branch {
  ProjectorSpec spec;
  Stack projector;
  ReusedTail tail;
  /// Teacher activation is average-pooled to this size when it is larger
  /// than the student's.
  std::optional<std::pair<std::size_t, std::size_t>> target_pool;
};

struct SimKDAssembly {
  Stack student;  // "enc"
  std::vector<Branch> branches;
  ParamStore params;  // student and projector tensors
  ParamStore buffers;
  std::size_t k_blocks = 0;

  /// Projected student activation for branch i (eval mode).
  Tensor project(const Tensor& x, std::size_t i) const {
    return infer(branches.at(i).projector, params, buffers, infer(student, params, buffers, x));
  }

  Tensor logits(const Tensor& x) const {
    const Tensor fs = infer(student, params, buffers, x);
    Tensor acc;
    for (std::size_t i = 0; i < branches.size(); ++i) {
      Tensor g = branches[i].tail.logits(infer(branches[i].projector, params, buffers, fs));
      if (i == 0)
        acc = std::move(g);
      else
        axpy(1.0, g, acc);
    }
    if (branches.size() > 1)
      for (double& v : acc.values()) v /= static_cast<double>(branches.size());
    return acc;
  }
};

/// Teacher activation at the branch's cut, pooled to the student size if needed.
inline Tensor alignment_target(const Model& teacher, const Branch& b, const Tensor& x) {
  Tensor t = infer(teacher.encoder, teacher.params, teacher.buffers, x, 0, b.tail.teacher_cut);
  if (b.target_pool) t = spatial_align(t, b.target_pool->first, b.target_pool->second);
  return t;
}

/// Builds the assembly with fresh student / projector initialization. The
/// student prefix starts from the same tensors as initial_student(spec).
inline SimKDAssembly make_simkd_assembly(const std::vector<const Model*>& teachers, const NetworkSpec& student_spec,
                                         const DistillConfig& cfg, std::size_t k_blocks) {
  if (teachers.empty()) throw ConfigError("classifier reuse needs at least one teacher");
  const AlignPoint point =
      cfg.projector == ProjectorKind::LinearVector ? AlignPoint::FeatureVector : AlignPoint::FeatureMap;
  SimKDAssembly a;
  a.k_blocks = k_blocks;
  const Model full = initial_student(student_spec, cfg.seed);
  const Rng proj_rng = Rng(cfg.seed).child("projector");
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    require_same_classes(*teachers[i], student_spec);
    ReuseSplit split = split_reuse(*teachers[i], student_spec, k_blocks, point);
    if (i == 0) {
      a.student = split.student;
      copy_layer_tensors(full.encoder, full.params, 0, split.student_cut, a.student, a.params, false);
      copy_layer_tensors(full.encoder, full.buffers, 0, split.student_cut, a.student, a.buffers, true);
    }
    const Shape s_shape = output_shape(a.student);
    Shape t_shape = split.tail.layers.input;
    Branch b;
    if (s_shape.size() == 3 && t_shape.size() == 3 && (t_shape[1] > s_shape[1] || t_shape[2] > s_shape[2])) {
      spatial_align(Tensor({1, t_shape[0], t_shape[1], t_shape[2]}), s_shape[1], s_shape[2]);  // divisibility
      b.target_pool = std::make_pair(s_shape[1], s_shape[2]);
      t_shape = {t_shape[0], s_shape[1], s_shape[2]};
      split.tail.layers.input = t_shape;
      stack_shapes(split.tail.layers);
    }
    if (s_shape.empty() || t_shape.empty()) throw ConfigError("cannot align scalar activations");
    b.spec = ProjectorSpec{cfg.projector, cfg.r, s_shape[0], t_shape[0], true};
    b.projector = projector_stack(b.spec, s_shape, t_shape);
    b.projector.name = teachers.size() == 1 ? "proj" : "proj" + std::to_string(i);
    init_stack(b.projector, a.params, a.buffers, proj_rng);
    b.tail = std::move(split.tail);
    a.branches.push_back(std::move(b));
  }
  return a;
}

inline ParamBudget simkd_budget(const SimKDAssembly& a, const std::vector<const Model*>& teachers,
                                const NetworkSpec& student_spec) {
  ParamBudget b;
  b.se = param_count(a.student);
  for (std::size_t i = 0; i < a.branches.size(); ++i) {
    b.proj += param_count(a.branches[i].projector);
    b.tc += param_count(a.branches[i].tail);
    b.t += param_count(teachers.at(i)->spec);
  }
  b.sc = param_count(LayerSpec{student_spec.classifier});
  return b;
}

/// Optional per-branch caches hold the alignment targets of `data`.
inline EvalMetrics evaluate(const SimKDAssembly& a, const std::vector<const Model*>& teachers, const Dataset& data,
                            const Normalization& norm, std::size_t batch = 250,
                            std::vector<SampleCache>* targets = nullptr) {
  return evaluate_with(
      [&](const Tensor& x, std::span<const std::size_t> idx) {
        const Tensor fs = infer(a.student, a.params, a.buffers, x);
        Tensor acc;
        double l2 = 0.0;
        for (std::size_t i = 0; i < a.branches.size(); ++i) {
          const Branch& b = a.branches[i];
          const Tensor fp = infer(b.projector, a.params, a.buffers, fs);
          const Tensor t = targets ? (*targets)[i].rows(idx) : alignment_target(*teachers.at(i), b, x);
          l2 += squared_distance_sum(t, fp);
          Tensor g = b.tail.logits(fp);
          if (i == 0)
            acc = std::move(g);
          else
            axpy(1.0, g, acc);
        }
        if (a.branches.size() > 1)
          for (double& v : acc.values()) v /= static_cast<double>(a.branches.size());
        return BatchPrediction{std::move(acc), l2};
      },
      data, norm, batch);
}

/// Feature alignment only: sum over branches of ||f_t - P(f_s)||^2. Labels
/// never enter the loss; only the student prefix and projectors train.
inline TrainReport train_alignment(SimKDAssembly& a, const std::vector<const Model*>& teachers,
                                   const TrainingData& data, const DistillConfig& cfg) {
  if (teachers.size() != a.branches.size()) throw UsageError("one teacher per branch required");
  std::vector<SampleCache> train_targets, test_targets;
  for (std::size_t i = 0; i < a.branches.size(); ++i) {
    auto fn = [&a, &teachers, i](const Tensor& x) { return alignment_target(*teachers[i], a.branches[i], x); };
    train_targets.emplace_back(data.train, data.norm, fn, cfg.eval_batch);
    test_targets.emplace_back(data.test, data.norm, fn, cfg.eval_batch);
  }
  SgdState state;
  auto step = [&](const Batch& b, double lr) {
    StackCache student_cache;
    const Tensor fs = forward(a.student, a.params, a.buffers, b.x, Mode::Train, &student_cache);
    std::vector<StackCache> proj_cache(a.branches.size());
    std::vector<LossValue> losses;
    double total = 0.0;
    for (std::size_t i = 0; i < a.branches.size(); ++i) {
      const Tensor target = train_targets[i](b);
      const Tensor fp = forward(a.branches[i].projector, a.params, a.buffers, fs, Mode::Train, &proj_cache[i]);
      losses.push_back(simkd_loss(target, fp));
      total += losses.back().value;
    }
    TensorMap grads;
    Tensor g_fs(fs.shape());
    for (std::size_t i = 0; i < a.branches.size(); ++i)
      axpy(1.0, backward(a.branches[i].projector, a.params, proj_cache[i], losses[i].grad, grads), g_fs);
    backward(a.student, a.params, student_cache, g_fs, grads);
    sgd_step(a.params, grads, state, sgd_options(cfg, lr));
    return total;
  };
  auto eval = [&] { return evaluate(a, teachers, data.test, data.norm, cfg.eval_batch, &test_targets); };
  TrainReport report;
  report.seed = cfg.seed;
  report.r = cfg.r;
  report.epochs = run_epochs(data, cfg, step, eval);
  report.heads.push_back({a.branches.size() == 1 ? "teacher_cls" : "ensemble", eval()});
  return report;
}

struct AssemblyResult {
  SimKDAssembly assembly;
  TrainReport report;
};

/// SimKD+ family: k_blocks = 0 is plain SimKD.
inline AssemblyResult distill_simkd_plus(const Model& teacher, const NetworkSpec& student_spec,
                                         const TrainingData& data, const DistillConfig& cfg, std::size_t k_blocks) {
  validate(cfg);
  std::vector<const Model*> teachers{&teacher};
  SimKDAssembly a = make_simkd_assembly(teachers, student_spec, cfg, k_blocks);
  TrainReport r = train_alignment(a, teachers, data, cfg);
  r.method = k_blocks == 0 ? "simkd" : "simkd+k" + std::to_string(k_blocks);
  r.budget = simkd_budget(a, teachers, student_spec);
  r.pruning_ratio = pruning_ratio(*r.budget);
  return {std::move(a), std::move(r)};
}

inline AssemblyResult distill_simkd(const Model& teacher, const NetworkSpec& student_spec, const TrainingData& data,
                                    const DistillConfig& cfg) {
  return distill_simkd_plus(teacher, student_spec, data, cfg, 0);
}

// --------------------------------------------------------------------------
// Joint training: (1 - alpha) KD on the student's own classifier plus
// alpha SimKD on the projected features, both heads evaluated.

struct JointAssembly {
  Model student;
  Stack projector;
  ParamStore proj_params;
  ParamStore proj_buffers;
  ReusedTail tail;
  std::size_t cut = 0;  // student encoder index where the projector taps in
  std::optional<std::pair<std::size_t, std::size_t>> target_pool;

  Tensor projected(const Tensor& x) const {
    return infer(projector, proj_params, proj_buffers, infer(student.encoder, student.params, student.buffers, x, 0, cut));
  }
  Tensor reused_logits(const Tensor& x) const { return tail.logits(projected(x)); }
};

struct JointResult {
  JointAssembly assembly;
  TrainReport report;
};

inline JointResult distill_joint(const Model& teacher, const NetworkSpec& student_spec, const TrainingData& data,
                                 const DistillConfig& cfg) {
  validate(cfg);
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ConfigError("joint loss weight alpha must lie in [0, 1]");
  require_same_classes(teacher, student_spec);
  SimKDAssembly shape_source = make_simkd_assembly({&teacher}, student_spec, cfg, 0);
  Branch& br = shape_source.branches.front();
  JointAssembly j;
  j.student = initial_student(student_spec, cfg.seed);
  j.cut = shape_source.student.layers.size();
  j.projector = br.projector;
  j.tail = br.tail;
  j.target_pool = br.target_pool;
  for (const auto& [name, t] : shape_source.params)
    if (name.rfind(j.projector.name + ".", 0) == 0) j.proj_params.set(name, t);
  for (const auto& [name, t] : shape_source.buffers)
    if (name.rfind(j.projector.name + ".", 0) == 0) j.proj_buffers.set(name, t);

  SgdState student_state, proj_state;
  const std::size_t k = student_spec.num_classes();
  Model& s = j.student;
  auto target_fn = [&](const Tensor& x) {
    Tensor t = infer(teacher.encoder, teacher.params, teacher.buffers, x, 0, j.tail.teacher_cut);
    if (j.target_pool) t = spatial_align(t, j.target_pool->first, j.target_pool->second);
    return t;
  };
  SampleCache train_logits(data.train, data.norm, [&](const Tensor& x) { return predict(teacher, x).second; },
                           cfg.eval_batch);
  SampleCache train_targets(data.train, data.norm, target_fn, cfg.eval_batch);
  SampleCache test_targets(data.test, data.norm, target_fn, cfg.eval_batch);
  auto step = [&](const Batch& b, double lr) {
    const Tensor teacher_logits = train_logits(b);
    const Tensor target = train_targets(b);

    StackCache head_cache, tail_cache, cls_cache, proj_cache;
    const Tensor act = forward(s.encoder, s.params, s.buffers, b.x, Mode::Train, &head_cache, 0, j.cut);
    const Tensor feats = forward(s.encoder, s.params, s.buffers, act, Mode::Train, &tail_cache, j.cut, kAllLayers);
    const Tensor logits = forward(s.classifier, s.params, s.buffers, feats, Mode::Train, &cls_cache);
    const Tensor fp = forward(j.projector, j.proj_params, j.proj_buffers, act, Mode::Train, &proj_cache);

    const JointLoss loss =
        joint_loss(cfg.alpha, kd_loss(logits, teacher_logits, one_hot(b.labels, k), cfg.T), simkd_loss(target, fp));
    TensorMap grads, proj_grads;
    Tensor g = backward(s.classifier, s.params, cls_cache, loss.grad_logits, grads);
    g = backward(s.encoder, s.params, tail_cache, g, grads);
    axpy(1.0, backward(j.projector, j.proj_params, proj_cache, loss.grad_features, proj_grads), g);
    backward(s.encoder, s.params, head_cache, g, grads);
    sgd_step(s.params, grads, student_state, sgd_options(cfg, lr));
    sgd_step(j.proj_params, proj_grads, proj_state, sgd_options(cfg, lr));
    return loss.value;
  };
  auto eval_student = [&] { return evaluate(s, data.test, data.norm, cfg.eval_batch); };
  auto eval_reused = [&] {
    return evaluate_with(
        [&](const Tensor& x, std::span<const std::size_t> idx) {
          const Tensor fp = j.projected(x);
          return BatchPrediction{j.tail.logits(fp), squared_distance_sum(test_targets.rows(idx), fp)};
        },
        data.test, data.norm, cfg.eval_batch);
  };
  auto eval = [&] {
    EvalMetrics m = eval_student();
    m.l2 = eval_reused().l2;
    return m;
  };
  JointResult out;
  out.report.method = "joint";
  out.report.seed = cfg.seed;
  out.report.alpha = cfg.alpha;
  out.report.r = cfg.r;
  out.report.epochs = run_epochs(data, cfg, step, eval);
  s.mode = Mode::Eval;
  out.report.heads.push_back({"student", eval_student()});
  out.report.heads.push_back({"teacher_cls", eval_reused()});
  out.assembly = std::move(j);
  return out;
}

// --------------------------------------------------------------------------
// Sequential training: frozen aligned features, fresh linear classifier.

struct SequentialResult {
  Stack classifier;  // "seq"
  ParamStore params;
  TrainReport report;
};

/// Pooled projected features of a single-branch assembly: the input the
/// reused classifier sees.
inline Tensor pooled_projected_features(const SimKDAssembly& a, const Tensor& x) {
  const Branch& b = a.branches.at(0);
  return infer(b.tail.layers, b.tail.params, b.tail.buffers, a.project(x, 0));
}

inline SequentialResult sequential_linear_eval(const SimKDAssembly& a, const Model& teacher, const TrainingData& data,
                                               const DistillConfig& cfg) {
  if (a.branches.size() != 1 || a.k_blocks != 0)
    throw ConfigError("sequential training expects a single-teacher, classifier-only assembly");
  const Branch& b = a.branches.front();
  const Dense& reused = std::get<Dense>(b.tail.classifier.layers.at(0));
  SequentialResult out;
  out.classifier = Stack{"seq", {reused.in}, {Dense{reused.in, reused.out, true}}};
  ParamStore no_buffers;
  init_stack(out.classifier, out.params, no_buffers, Rng(cfg.seed).child("sequential"));
  SgdState state;
  SampleCache train_feats(data.train, data.norm, [&](const Tensor& x) { return pooled_projected_features(a, x); },
                          cfg.eval_batch);
  auto step = [&](const Batch& b, double lr) {
    const Tensor f = train_feats(b);
    StackCache cache;
    const Tensor logits = forward(out.classifier, out.params, no_buffers, f, Mode::Train, &cache);
    LossValue loss = cross_entropy(logits, one_hot(b.labels, reused.out));
    TensorMap grads;
    backward(out.classifier, out.params, cache, loss.grad, grads);
    sgd_step(out.params, grads, state, sgd_options(cfg, lr));
    return loss.value;
  };
  auto eval = [&] {
    return evaluate_with(
        [&](const Tensor& x) {
          return BatchPrediction{infer(out.classifier, out.params, no_buffers, pooled_projected_features(a, x)),
                                 std::nullopt};
        },
        data.test, data.norm, cfg.eval_batch);
  };
  out.report.method = "sequential";
  out.report.seed = cfg.seed;
  out.report.r = cfg.r;
  out.report.epochs = run_epochs(data, cfg, step, eval);
  out.report.heads.push_back({"sequential", eval()});
  out.report.heads.push_back({"teacher_cls", evaluate(a, {&teacher}, data.test, data.norm, cfg.eval_batch)});
  return out;
}

// --------------------------------------------------------------------------
// Multi-teacher

struct MultiTeacherResult {
  std::optional<Model> student;           // AVEG, SimKD_v
  std::optional<SimKDAssembly> assembly;  // SimKD (and the pre-merge SimKD_v assembly)
  TrainReport report;
};

/// Folds each linear projector into its teacher classifier and averages the
/// merged heads element-wise; returns the student network carrying them.
inline Model merge_into_student(const SimKDAssembly& a, const NetworkSpec& student_spec, std::uint64_t seed) {
  Model s = initial_student(student_spec, seed);
  if (a.student.layers.size() != student_spec.encoder.size() || !student_spec.classifier.bias)
    throw ConfigError("merging needs a full student encoder and a biased student classifier");
  copy_layer_tensors(a.student, a.params, 0, a.student.layers.size(), s.encoder, s.params, false);
  copy_layer_tensors(a.student, a.buffers, 0, a.student.layers.size(), s.encoder, s.buffers, true);
  Tensor w, bias;
  for (std::size_t i = 0; i < a.branches.size(); ++i) {
    const Branch& b = a.branches[i];
    if (b.spec.kind != ProjectorKind::LinearVector || b.projector.layers.size() != 1 || !b.tail.layers.layers.empty())
      throw ConfigError("only linear projectors feeding a bare classifier can be merged");
    auto [mw, mb] = merge_linear_projector(b.tail.params.at(param_name(b.tail.classifier, 0, "weight")),
                                           b.tail.params.at(param_name(b.tail.classifier, 0, "bias")),
                                           a.params.at(param_name(b.projector, 0, "weight")),
                                           a.params.at(param_name(b.projector, 0, "bias")));
    if (i == 0) {
      w = std::move(mw);
      bias = std::move(mb);
    } else {
      axpy(1.0, mw, w);
      axpy(1.0, mb, bias);
    }
  }
  if (a.branches.size() > 1) {
    const double n = static_cast<double>(a.branches.size());
    for (double& v : w.values()) v /= n;
    for (double& v : bias.values()) v /= n;
  }
  s.params.set(param_name(s.classifier, 0, "weight"), std::move(w));
  s.params.set(param_name(s.classifier, 0, "bias"), std::move(bias));
  s.mode = Mode::Eval;
  return s;
}

inline MultiTeacherResult multi_teacher(const std::vector<const Model*>& teachers, const NetworkSpec& student_spec,
                                        const TrainingData& data, const DistillConfig& cfg, MultiVariant variant) {
  validate(cfg);
  if (teachers.size() < 2) throw ConfigError("multi-teacher distillation needs at least two teachers");
  for (const auto* t : teachers)
    if (t->spec.num_classes() != teachers.front()->spec.num_classes())
      throw ConfigError("teachers disagree on the number of classes");
  MultiTeacherResult out;
  if (variant == MultiVariant::AVEG) {
    Model s = initial_student(student_spec, cfg.seed);
    out.report = train_kd(s, teachers, data, cfg);
    out.report.method = "aveg";
    out.student = std::move(s);
    return out;
  }
  DistillConfig c = cfg;
  if (variant == MultiVariant::SimKDv) c.projector = ProjectorKind::LinearVector;
  SimKDAssembly a = make_simkd_assembly(teachers, student_spec, c, 0);
  out.report = train_alignment(a, teachers, data, c);
  out.report.budget = simkd_budget(a, teachers, student_spec);
  if (variant == MultiVariant::SimKD) {
    out.report.method = "multi_simkd";
    out.report.pruning_ratio = pruning_ratio(*out.report.budget);
    out.assembly = std::move(a);
    return out;
  }
  Model merged = merge_into_student(a, student_spec, cfg.seed);
  std::uint64_t t = 0;
  for (const auto* tm : teachers) t += param_count(tm->spec);
  out.report.method = "multi_simkd_v";
  out.report.r.reset();
  out.report.heads.insert(out.report.heads.begin(), {"student", evaluate(merged, data.test, data.norm, cfg.eval_batch)});
  out.report.budget = ParamBudget{param_count(student_spec.encoder), 0, t, 0, 0};
  out.report.pruning_ratio = pruning_ratio(*out.report.budget);
  out.student = std::move(merged);
  out.assembly = std::move(a);
  return out;
}

}  // namespace simkd
