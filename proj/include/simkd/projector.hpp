#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "simkd/network.hpp"

namespace simkd {

enum class ProjectorKind {
  OneConv,       // 1x1 conv
  TwoConv,       // 1x1 conv - 1x1 conv
  BottleneckDW,  // 1x1 conv - 3x3 depthwise conv - 1x1 conv
  Bottleneck,    // 1x1 conv - 3x3 conv - 1x1 conv
  LinearVector,  // dense map on pooled feature vectors, mergeable into a classifier
};

inline std::string to_string(ProjectorKind k) {
  switch (k) {
    case ProjectorKind::OneConv: return "one_conv";
    case ProjectorKind::TwoConv: return "two_conv";
    case ProjectorKind::BottleneckDW: return "bottleneck_dw";
    case ProjectorKind::Bottleneck: return "bottleneck";
    case ProjectorKind::LinearVector: return "linear";
  }
  return "?";
}

inline ProjectorKind projector_kind_from_string(const std::string& s) {
  for (auto k : {ProjectorKind::OneConv, ProjectorKind::TwoConv, ProjectorKind::BottleneckDW, ProjectorKind::Bottleneck,
                 ProjectorKind::LinearVector})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown projector kind '" + s + "'");
}

struct ProjectorSpec {
  ProjectorKind kind = ProjectorKind::Bottleneck;
  std::size_t r = 2;
  std::size_t cs = 0;
  std::size_t ct = 0;
  /// Average-pool larger student maps down to the teacher's spatial size.
  bool spatial_align = true;

  bool on_maps() const { return kind != ProjectorKind::LinearVector; }
};

inline bool uses_reduction(ProjectorKind k) {
  return k == ProjectorKind::TwoConv || k == ProjectorKind::BottleneckDW || k == ProjectorKind::Bottleneck;
}

/// Layer list of the projector, before any spatial pooling.
inline std::vector<LayerSpec> projector_layers(const ProjectorSpec& spec) {
  if (spec.cs == 0 || spec.ct == 0 || spec.r == 0) throw ConfigError("projector dimensions must be positive");
  if (uses_reduction(spec.kind) && spec.ct % spec.r != 0)
    throw ConfigError("projector: C_t=" + std::to_string(spec.ct) + " is not divisible by r=" + std::to_string(spec.r));
  const std::size_t cs = spec.cs, ct = spec.ct, mid = uses_reduction(spec.kind) ? ct / spec.r : ct;
  switch (spec.kind) {
    case ProjectorKind::OneConv:
      return {Conv{cs, ct, 1}, BatchNorm{ct}, ReLU{}};
    case ProjectorKind::TwoConv:
      return {Conv{cs, mid, 1}, BatchNorm{mid}, ReLU{}, Conv{mid, ct, 1}, BatchNorm{ct}, ReLU{}};
    case ProjectorKind::BottleneckDW:
      return {Conv{cs, mid, 1},         BatchNorm{mid}, ReLU{}, Conv{mid, mid, 3, true}, BatchNorm{mid}, ReLU{},
              Conv{mid, ct, 1},         BatchNorm{ct},  ReLU{}};
    case ProjectorKind::Bottleneck:
      return {Conv{cs, mid, 1}, BatchNorm{mid}, ReLU{}, Conv{mid, mid, 3}, BatchNorm{mid}, ReLU{},
              Conv{mid, ct, 1}, BatchNorm{ct},  ReLU{}};
    case ProjectorKind::LinearVector:
      return {Dense{cs, ct, true}};
  }
  throw ConfigError("unknown projector kind");
}

/// Non-overlapping average pooling of [N x C x H1 x W1] down to (H2, W2);
/// identity when the sizes already match.
inline Tensor spatial_align(const Tensor& f_large, std::size_t h2, std::size_t w2) {
  if (f_large.rank() != 4) throw DimensionError("spatial_align: expected [N x C x H x W], got " + shape_str(f_large.shape()));
  const std::size_t n = f_large.dim(0), c = f_large.dim(1), h1 = f_large.dim(2), w1 = f_large.dim(3);
  if (h2 == 0 || w2 == 0 || h1 < h2 || w1 < w2 || h1 % h2 != 0 || w1 % w2 != 0)
    throw ConfigError("spatial_align: cannot pool " + std::to_string(h1) + "x" + std::to_string(w1) + " to " +
                      std::to_string(h2) + "x" + std::to_string(w2));
  if (h1 == h2 && w1 == w2) return f_large;
  const std::size_t wy = h1 / h2, wx = w1 / w2;
  const double scale = 1.0 / static_cast<double>(wy * wx);
  Tensor out({n, c, h2, w2});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < wy; ++dy)
          for (std::size_t dx = 0; dx < wx; ++dx) s += f_large[(p * h1 + y * wy + dy) * w1 + x * wx + dx];
        out[(p * h2 + y) * w2 + x] = s * scale;
      }
  return out;
}

/// Projector stack mapping a student activation of per-sample shape
/// `student` onto the teacher's `target`. Larger square student maps are
/// average-pooled first when spatial_align is set.
inline Stack projector_stack(const ProjectorSpec& spec, const Shape& student, const Shape& target) {
  std::vector<LayerSpec> layers;
  if (spec.on_maps()) {
    if (student.size() != 3 || target.size() != 3)
      throw ConfigError("projector " + to_string(spec.kind) + " needs feature maps, got " + shape_str(student) + " -> " +
                        shape_str(target));
    if (student[1] != target[1] || student[2] != target[2]) {
      const bool poolable = spec.spatial_align && student[1] > target[1] && student[1] % target[1] == 0 &&
                            student[2] % target[2] == 0 && student[1] / target[1] == student[2] / target[2];
      if (!poolable)
        throw ConfigError("incompatible spatial sizes after alignment: " + shape_str(student) + " vs " +
                          shape_str(target));
      layers.push_back(AvgPool{student[1] / target[1]});
    }
  } else if (student.size() != 1 || target.size() != 1) {
    throw ConfigError("linear projector needs feature vectors, got " + shape_str(student) + " -> " + shape_str(target));
  }
  if (student[0] != spec.cs || target[0] != spec.ct)
    throw ConfigError("projector spec (C_s=" + std::to_string(spec.cs) + ", C_t=" + std::to_string(spec.ct) +
                      ") does not match " + shape_str(student) + " -> " + shape_str(target));
  for (auto& l : projector_layers(spec)) layers.push_back(std::move(l));
  Stack s{"proj", student, std::move(layers)};
  if (output_shape(s) != target) throw ConfigError("projector output does not reach " + shape_str(target));
  return s;
}

struct Projector {
  ProjectorSpec spec;
  Stack stack;
  ParamStore params;
  ParamStore buffers;
};

inline Projector build_projector(const ProjectorSpec& spec, const Shape& student, const Shape& target, const Rng& rng,
                                 const std::string& name = "proj") {
  Projector p{spec, projector_stack(spec, student, target), {}, {}};
  p.stack.name = name;
  init_stack(p.stack, p.params, p.buffers, rng);
  return p;
}

/// Bottleneck projector size: C_t (C_s + C_t + 4) / r + 9 C_t^2 / r^2 + 2 C_t.
inline std::uint64_t projector_param_formula(std::uint64_t cs, std::uint64_t ct, std::uint64_t r) {
  if (r == 0 || ct == 0 || ct % r != 0)
    throw ConfigError("projector formula needs C_t divisible by r (C_t=" + std::to_string(ct) + ", r=" +
                      std::to_string(r) + ")");
  const std::uint64_t m = ct / r;
  return m * (cs + ct + 4) + 9 * m * m + 2 * ct;
}

struct PropositionCheck {
  bool left_holds = false;      // 2 F(2r) < F(r)
  bool right_holds = false;     // F(r) < 4 F(2r)
  bool left_condition = false;  // C_t > 4 r^2 / 9
};

/// Evaluates both inequalities exactly. F is scaled by 4 r^2 so every term is
/// an integer even when C_t is not divisible by 2r.
inline PropositionCheck check_proposition(std::uint64_t cs, std::uint64_t ct, std::uint64_t r) {
  if (cs == 0 || ct == 0 || r == 0) throw ConfigError("proposition needs positive C_s, C_t, r");
  auto mul = [](std::uint64_t a, std::uint64_t b) {
    std::uint64_t out;
    if (__builtin_mul_overflow(a, b, &out)) throw ConfigError("proposition: dimensions too large");
    return out;
  };
  const std::uint64_t base = mul(ct, cs + ct + 4);
  const std::uint64_t f_r = mul(mul(4, r), base) + mul(36, mul(ct, ct)) + mul(mul(8, mul(r, r)), ct);    // 4r^2 F(r)
  const std::uint64_t f_2r = mul(mul(2, r), base) + mul(9, mul(ct, ct)) + mul(mul(8, mul(r, r)), ct);    // 4r^2 F(2r)
  return {mul(2, f_2r) < f_r, f_r < mul(4, f_2r), mul(9, ct) > mul(4, mul(r, r))};
}

/// Folds a linear projector (A, b) into a classifier (W_t, b_t):
/// W' = W_t A, b' = W_t b + b_t.
inline std::pair<Tensor, Tensor> merge_linear_projector(const Tensor& w_t, const Tensor& b_t, const Tensor& a,
                                                        const Tensor& b) {
  if (w_t.rank() != 2 || a.rank() != 2 || b_t.rank() != 1 || b.rank() != 1 || w_t.dim(1) != a.dim(0) ||
      b_t.dim(0) != w_t.dim(0) || b.dim(0) != a.dim(0))
    throw DimensionError("merge_linear_projector: W_t " + shape_str(w_t.shape()) + ", b_t " + shape_str(b_t.shape()) +
                         ", A " + shape_str(a.shape()) + ", b " + shape_str(b.shape()));
  Tensor merged_w = matmul(w_t, a);
  Tensor merged_b = matmul(w_t, b.reshaped({b.dim(0), 1})).reshaped({w_t.dim(0)});
  for (std::size_t i = 0; i < merged_b.size(); ++i) merged_b[i] += b_t[i];
  return {std::move(merged_w), std::move(merged_b)};
}

}  // namespace simkd
