#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "simkd/ops.hpp"

namespace simkd {

inline constexpr double kDefaultTemperature = 4.0;

/// Scalar loss and its gradient with respect to the differentiated argument.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

namespace detail {

inline void require_logits(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected [N x K], got " + shape_str(t.shape()));
}

inline void require_temperature(double T) {
  if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("temperature must be positive, got " + std::to_string(T));
}

inline double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite loss");
  return v;
}

}  // namespace detail

/// Row-wise log softmax of logits / T.
inline Tensor log_softmax_t(const Tensor& logits, double T) {
  detail::require_logits(logits, "log_softmax_t");
  detail::require_temperature(T);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = logits[r * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp((logits[r * k + j] - mx) / T);
    const double lz = std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = (logits[r * k + j] - mx) / T - lz;
  }
  return out;
}

/// Row-wise softmax of logits / T.
inline Tensor softmax_t(const Tensor& logits, double T) {
  detail::require_logits(logits, "softmax_t");
  detail::require_temperature(T);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = logits[r * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp((logits[r * k + j] - mx) / T);
      out[r * k + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  return out;
}

inline Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor y({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw InputError("label " + std::to_string(labels[i]) + " out of range");
    y[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return y;
}

inline void require_one_hot(const Tensor& labels) {
  const std::size_t n = labels.dim(0), k = labels.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    int ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = labels[r * k + j];
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        throw InputError("label row " + std::to_string(r) + " is not one-hot");
    }
    if (ones != 1) throw InputError("label row " + std::to_string(r) + " is not one-hot");
  }
}

/// Mean over the batch of -log softmax(logits)[label]; grad (p - y) / N.
inline LossValue cross_entropy(const Tensor& logits, const Tensor& labels) {
  detail::require_logits(logits, "cross_entropy");
  require_same_shape(logits, labels, "cross_entropy");
  require_one_hot(labels);
  const std::size_t n = logits.dim(0);
  const Tensor logp = log_softmax_t(logits, 1.0);
  LossValue out{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.value -= labels[i] * logp[i];
    out.grad[i] = (std::exp(logp[i]) - labels[i]) * inv_n;
  }
  out.value = detail::checked(out.value * inv_n, "cross_entropy");
  return out;
}

/// Vanilla KD against already-softened teacher probabilities:
///   CE(y, softmax(s)) + T^2 KL(p_t || softmax(s / T)), averaged over the batch.
/// The KL part contributes T (softmax(s / T) - p_t) / N to the gradient.
inline LossValue kd_loss_from_probs(const Tensor& student_logits, const Tensor& teacher_probs, const Tensor& labels,
                                    double T) {
  detail::require_temperature(T);
  require_same_shape(student_logits, teacher_probs, "kd_loss");
  LossValue out = cross_entropy(student_logits, labels);
  const Tensor logq = log_softmax_t(student_logits, T);
  const double inv_n = 1.0 / static_cast<double>(student_logits.dim(0));
  double kl = 0.0;
  for (std::size_t i = 0; i < logq.size(); ++i) {
    const double p = teacher_probs[i];
    if (p > 0.0) kl += p * (std::log(p) - logq[i]);
    out.grad[i] += T * (std::exp(logq[i]) - p) * inv_n;
  }
  out.value = detail::checked(out.value + T * T * kl * inv_n, "kd_loss");
  return out;
}

inline LossValue kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& labels,
                         double T = kDefaultTemperature) {
  require_same_shape(student_logits, teacher_logits, "kd_loss");
  return kd_loss_from_probs(student_logits, softmax_t(teacher_logits, T), labels, T);
}

/// Feature alignment: mean over the batch of ||f_t - f_s||^2 summed over all
/// remaining dimensions; grad -2 (f_t - f_s) / N.
inline LossValue simkd_loss(const Tensor& teacher_features, const Tensor& student_projected) {
  require_same_shape(teacher_features, student_projected, "simkd_loss");
  if (teacher_features.rank() < 1) throw DimensionError("simkd_loss: features need a batch axis");
  const double inv_n = 1.0 / static_cast<double>(teacher_features.dim(0));
  LossValue out{0.0, Tensor(teacher_features.shape())};
  for (std::size_t i = 0; i < teacher_features.size(); ++i) {
    const double d = teacher_features[i] - student_projected[i];
    out.value += d * d;
    out.grad[i] = -2.0 * d * inv_n;
  }
  out.value = detail::checked(out.value * inv_n, "simkd_loss");
  return out;
}

/// (1 - alpha) L_KD + alpha L_SimKD with both gradients scaled accordingly.
struct JointLoss {
  double value = 0.0;
  Tensor grad_logits;
  Tensor grad_features;
};

inline JointLoss joint_loss(double alpha, const LossValue& kd, const LossValue& simkd) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("joint loss weight alpha must lie in [0, 1]");
  return {(1.0 - alpha) * kd.value + alpha * simkd.value, (1.0 - alpha) * kd.grad, alpha * simkd.grad};
}

/// Alignment measured after the frozen teacher classifier:
/// mean over the batch of ||W (f_t - f_s)||^2; grad -2 W^T W (f_t - f_s) / N.
inline LossValue output_l2_loss(const Tensor& teacher_weight, const Tensor& teacher_features,
                                const Tensor& student_projected) {
  require_same_shape(teacher_features, student_projected, "output_l2_loss");
  detail::require_logits(teacher_features, "output_l2_loss");
  if (teacher_weight.rank() != 2 || teacher_weight.dim(1) != teacher_features.dim(1))
    throw DimensionError("output_l2_loss: weight " + shape_str(teacher_weight.shape()) + " vs features " +
                         shape_str(teacher_features.shape()));
  const Tensor diff = teacher_features - student_projected;
  const Tensor projected = matmul_bt(diff, teacher_weight);  // N x K
  const double inv_n = 1.0 / static_cast<double>(diff.dim(0));
  LossValue out{0.0, matmul(projected, teacher_weight)};
  for (double v : projected.values()) out.value += v * v;
  for (double& g : out.grad.values()) g *= -2.0 * inv_n;
  out.value = detail::checked(out.value * inv_n, "output_l2_loss");
  return out;
}

/// Input plus output alignment; grad -2 (I + W^T W)(f_t - f_s) / N.
inline LossValue combined_l2_loss(const Tensor& teacher_weight, const Tensor& teacher_features,
                                  const Tensor& student_projected) {
  LossValue in = simkd_loss(teacher_features, student_projected);
  LossValue outl = output_l2_loss(teacher_weight, teacher_features, student_projected);
  return {in.value + outl.value, in.grad + outl.grad};
}

}  // namespace simkd
