#pragma once

#include <cstddef>

#include "simkd/network.hpp"

namespace simkd {

/// Three-block plain CNN for small images:
///   [conv3x3(w) BN ReLU pool2] [conv3x3(2w) BN ReLU pool2] [conv3x3(4w) BN ReLU GAP flatten] dense(4w, K)
/// Pools are skipped once the spatial size would drop below 1.
inline NetworkSpec desk_cnn(std::size_t width, std::size_t num_classes, const Shape& input) {
  if (input.size() != 3) throw ConfigError("desk_cnn needs a [C x H x W] input");
  if (width == 0) throw ConfigError("desk_cnn width must be positive");
  NetworkSpec spec;
  spec.input = input;
  std::size_t ch = input[0], h = input[1], w = input[2];
  const std::size_t widths[3] = {width, 2 * width, 4 * width};
  for (std::size_t b = 0; b < 3; ++b) {
    spec.encoder.push_back(Conv{ch, widths[b], 3});
    spec.encoder.push_back(BatchNorm{widths[b]});
    spec.encoder.push_back(ReLU{});
    ch = widths[b];
    if (b < 2 && h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2) {
      spec.encoder.push_back(AvgPool{2});
      h /= 2;
      w /= 2;
    }
    if (b == 2) {
      spec.encoder.push_back(GlobalAvgPool{});
      spec.encoder.push_back(Flatten{});
    }
    spec.block_ends.push_back(spec.encoder.size());
  }
  spec.classifier = Dense{ch, num_classes, true};
  validate(spec);
  return spec;
}

/// Fully connected network: hidden Dense+ReLU layers, one block each.
inline NetworkSpec mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t num_classes) {
  NetworkSpec spec;
  spec.input = {in};
  std::size_t cur = in;
  for (auto hsz : hidden) {
    spec.encoder.push_back(Dense{cur, hsz, true});
    spec.encoder.push_back(ReLU{});
    spec.block_ends.push_back(spec.encoder.size());
    cur = hsz;
  }
  spec.classifier = Dense{cur, num_classes, true};
  validate(spec);
  return spec;
}

}  // namespace simkd
