#pragma once

#include <cstddef>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "simkd/tensor.hpp"

namespace simkd {

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;
  friend bool operator==(const Dense&, const Dense&) = default;
};

/// Bias-free, stride 1, same padding. depthwise requires in_ch == out_ch.
struct Conv {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t k = 3;
  bool depthwise = false;
  friend bool operator==(const Conv&, const Conv&) = default;
};

struct BatchNorm {
  std::size_t ch = 0;
  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};

/// Non-overlapping window x window average.
struct AvgPool {
  std::size_t window = 2;
  friend bool operator==(const AvgPool&, const AvgPool&) = default;
};

/// [C x H x W] -> [C x 1 x 1].
struct GlobalAvgPool {
  friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using LayerSpec = std::variant<Dense, Conv, BatchNorm, ReLU, AvgPool, GlobalAvgPool, Flatten>;

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

inline std::string layer_name(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>)
          return "Dense(" + std::to_string(l.in) + "," + std::to_string(l.out) + (l.bias ? "" : ",nobias") + ")";
        else if constexpr (std::is_same_v<L, Conv>)
          return std::string(l.depthwise ? "DWConv" : "Conv") + std::to_string(l.k) + "x" + std::to_string(l.k) +
                 "(" + std::to_string(l.in_ch) + "," + std::to_string(l.out_ch) + ")";
        else if constexpr (std::is_same_v<L, BatchNorm>)
          return "BatchNorm(" + std::to_string(l.ch) + ")";
        else if constexpr (std::is_same_v<L, ReLU>)
          return "ReLU";
        else if constexpr (std::is_same_v<L, AvgPool>)
          return "AvgPool(" + std::to_string(l.window) + ")";
        else if constexpr (std::is_same_v<L, GlobalAvgPool>)
          return "GlobalAvgPool";
        else
          return "Flatten";
      },
      layer);
}

/// Trainable tensors of one layer: (slot name, shape, fan-in for init).
struct ParamSlot {
  std::string slot;
  Shape shape;
  std::size_t fan_in = 0;  // 0: not a weight (bias / affine)
  double fill = 0.0;       // used when fan_in == 0
};

inline std::vector<ParamSlot> param_slots(const LayerSpec& layer) {
  std::vector<ParamSlot> slots;
  if (const auto* d = std::get_if<Dense>(&layer)) {
    slots.push_back({"weight", {d->out, d->in}, d->in});
    if (d->bias) slots.push_back({"bias", {d->out}, 0, 0.0});
  } else if (const auto* c = std::get_if<Conv>(&layer)) {
    const std::size_t per_group = c->depthwise ? 1 : c->in_ch;
    slots.push_back({"weight", {c->out_ch, per_group, c->k, c->k}, per_group * c->k * c->k});
  } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
    slots.push_back({"gamma", {b->ch}, 0, 1.0});
    slots.push_back({"beta", {b->ch}, 0, 0.0});
  }
  return slots;
}

/// Running statistics (not trainable) of one layer.
inline std::vector<ParamSlot> buffer_slots(const LayerSpec& layer) {
  if (const auto* b = std::get_if<BatchNorm>(&layer))
    return {{"running_mean", {b->ch}, 0, 0.0}, {"running_var", {b->ch}, 0, 1.0}};
  return {};
}

inline std::size_t param_count(const LayerSpec& layer) {
  std::size_t n = 0;
  for (const auto& s : param_slots(layer)) n += shape_size(s.shape);
  return n;
}

inline std::size_t param_count(const std::vector<LayerSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += param_count(l);
  return n;
}

/// Per-sample output shape, or throws DimensionError describing why the
/// layer cannot accept `in`.
inline Shape infer_shape(const LayerSpec& layer, const Shape& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw DimensionError(layer_name(layer) + " cannot take input " + shape_str(in) + ": " + why);
  };
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          if (in.size() != 1 || in[0] != l.in) return fail("expected [" + std::to_string(l.in) + "]");
          return {l.out};
        } else if constexpr (std::is_same_v<L, Conv>) {
          if (l.k != 1 && l.k != 3) return fail("kernel size must be 1 or 3");
          if (l.depthwise && l.in_ch != l.out_ch) return fail("depthwise conv needs in_ch == out_ch");
          if (in.size() != 3 || in[0] != l.in_ch) return fail("expected " + std::to_string(l.in_ch) + " channels");
          return {l.out_ch, in[1], in[2]};
        } else if constexpr (std::is_same_v<L, BatchNorm>) {
          if ((in.size() != 1 && in.size() != 3) || in[0] != l.ch)
            return fail("expected " + std::to_string(l.ch) + " channels");
          return in;
        } else if constexpr (std::is_same_v<L, ReLU>) {
          return in;
        } else if constexpr (std::is_same_v<L, AvgPool>) {
          if (in.size() != 3 || l.window == 0 || in[1] % l.window || in[2] % l.window)
            return fail("window must tile the spatial extent");
          return {in[0], in[1] / l.window, in[2] / l.window};
        } else if constexpr (std::is_same_v<L, GlobalAvgPool>) {
          if (in.size() != 3) return fail("expected a feature map");
          return {in[0], 1, 1};
        } else {
          return {shape_size(in)};
        }
      },
      layer);
}

inline bool is_parameter_free(const LayerSpec& layer) { return param_slots(layer).empty(); }

}  // namespace simkd
