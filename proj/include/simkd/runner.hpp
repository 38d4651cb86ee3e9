#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "simkd/checkpoint.hpp"
#include "simkd/distiller.hpp"

namespace simkd {

// Method dispatch shared by the CLI and the acceptance harness: runs one
// configured pipeline, and rebuilds the deployed predictor from the tensors
// it saved.

struct RunResult {
  TrainReport report;
  TensorMap tensors;  // everything needed to redeploy (see restore_deployment)
};

namespace detail {

inline TensorMap collect_all(const ParamStore& params, const ParamStore& buffers, const std::string& prefix = "") {
  TensorMap t;
  collect(t, params, buffers, prefix);
  return t;
}

inline TensorMap assembly_tensors(const SimKDAssembly& a) { return collect_all(a.params, a.buffers); }

inline TensorMap joint_tensors(const JointAssembly& j) {
  TensorMap t = collect_all(j.student.params, j.student.buffers);
  collect(t, j.proj_params, j.proj_buffers);
  return t;
}

}  // namespace detail

inline RunResult run_method(const std::vector<const Model*>& teachers, const NetworkSpec& student,
                            const TrainingData& data, const DistillConfig& cfg) {
  validate(cfg);
  auto need_one = [&] {
    if (teachers.size() != 1) throw ConfigError(to_string(cfg.method) + " needs exactly one teacher");
    return teachers.front();
  };
  switch (cfg.method) {
    case Method::Baseline:
    case Method::Teacher: {
      auto r = train_model(student, data, cfg);
      return {std::move(r.report), detail::collect_all(r.model.params, r.model.buffers)};
    }
    case Method::KD: {
      auto r = distill_kd(*need_one(), student, data, cfg);
      return {std::move(r.report), detail::collect_all(r.model.params, r.model.buffers)};
    }
    case Method::SimKD: {
      auto r = distill_simkd(*need_one(), student, data, cfg);
      return {std::move(r.report), detail::assembly_tensors(r.assembly)};
    }
    case Method::SimKDPlus: {
      auto r = distill_simkd_plus(*need_one(), student, data, cfg, cfg.k_blocks);
      return {std::move(r.report), detail::assembly_tensors(r.assembly)};
    }
    case Method::Joint: {
      auto r = distill_joint(*need_one(), student, data, cfg);
      return {std::move(r.report), detail::joint_tensors(r.assembly)};
    }
    case Method::Sequential: {
      const Model* t = need_one();
      auto aligned = distill_simkd(*t, student, data, cfg);
      auto seq = sequential_linear_eval(aligned.assembly, *t, data, cfg);
      TensorMap tensors = detail::assembly_tensors(aligned.assembly);
      ParamStore none;
      collect(tensors, seq.params, none);
      seq.report.budget = aligned.report.budget;
      return {std::move(seq.report), std::move(tensors)};
    }
    case Method::MultiTeacher: {
      auto r = multi_teacher(teachers, student, data, cfg, cfg.multi);
      TensorMap tensors;
      if (cfg.multi == MultiVariant::SimKD)
        tensors = detail::assembly_tensors(*r.assembly);
      else
        tensors = detail::collect_all(r.student->params, r.student->buffers);
      return {std::move(r.report), std::move(tensors)};
    }
  }
  throw ConfigError("unsupported method");
}

/// A trained artifact ready for inference: logits plus the features fed to
/// its final classifier.
struct Deployment {
  std::function<Tensor(const Tensor&)> logits;
  std::function<Tensor(const Tensor&)> features;
  std::uint64_t inference_params = 0;
};

namespace detail {

inline std::shared_ptr<Model> restored_model(const NetworkSpec& spec, const TensorMap& tensors) {
  auto m = std::make_shared<Model>(build(spec, Rng(0)));
  restore(tensors, m->params, m->buffers);
  m->mode = Mode::Eval;
  return m;
}

inline Deployment model_deployment(std::shared_ptr<Model> m) {
  return {[m](const Tensor& x) { return predict(*m, x).second; },
          [m](const Tensor& x) { return predict(*m, x).first; }, param_count(m->spec)};
}

}  // namespace detail

/// Rebuilds the structure `cfg` trains (deterministically from its seed) and
/// loads the saved tensors into it. Teachers must be the ones used in training.
inline Deployment restore_deployment(const std::vector<const Model*>& teachers, const NetworkSpec& student,
                                     const DistillConfig& cfg, const TensorMap& tensors) {
  switch (cfg.method) {
    case Method::Baseline:
    case Method::Teacher:
    case Method::KD:
      return detail::model_deployment(detail::restored_model(student, tensors));
    case Method::MultiTeacher:
      if (cfg.multi != MultiVariant::SimKD) return detail::model_deployment(detail::restored_model(student, tensors));
      [[fallthrough]];
    case Method::SimKD:
    case Method::SimKDPlus:
    case Method::Sequential: {
      const std::size_t k = cfg.method == Method::SimKDPlus ? cfg.k_blocks : 0;
      auto a = std::make_shared<SimKDAssembly>(make_simkd_assembly(teachers, student, cfg, k));
      restore(tensors, a->params, a->buffers);
      if (cfg.method == Method::Sequential) {
        const Dense& reused = std::get<Dense>(a->branches.at(0).tail.classifier.layers.at(0));
        auto seq = std::make_shared<Stack>(Stack{"seq", {reused.in}, {Dense{reused.in, reused.out, true}}});
        auto params = std::make_shared<ParamStore>();
        ParamStore none;
        init_stack(*seq, *params, none, Rng(0));
        restore(tensors, *params, none);
        auto feats = [a](const Tensor& x) { return pooled_projected_features(*a, x); };
        return {[a, seq, params, feats](const Tensor& x) { return infer(*seq, *params, ParamStore{}, feats(x)); },
                feats, param_count(a->student) + param_count(a->branches[0].projector) + param_count(*seq)};
      }
      std::uint64_t n = param_count(a->student);
      for (const auto& b : a->branches) n += param_count(b.projector) + param_count(b.tail);
      return {[a](const Tensor& x) { return a->logits(x); },
              [a](const Tensor& x) {
                const Branch& b = a->branches.at(0);
                return infer(b.tail.layers, b.tail.params, b.tail.buffers, a->project(x, 0));
              },
              n};
    }
    case Method::Joint: {
      if (teachers.size() != 1) throw ConfigError("joint needs exactly one teacher");
      auto m = detail::restored_model(student, [&] {
        TensorMap own;
        for (const auto& [name, t] : tensors)
          if (name.rfind("proj.", 0) != 0) own.emplace(name, t);
        return own;
      }());
      return detail::model_deployment(m);
    }
  }
  throw ConfigError("unsupported method");
}

}  // namespace simkd
