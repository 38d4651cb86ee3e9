#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "simkd/binary_io.hpp"
#include "simkd/tensor.hpp"

namespace simkd {

/// Labeled 8-bit image set, samples stored [C x H x W] row-major.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return channels * height * width; }
  Shape sample_shape() const { return {channels, height, width}; }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void validate(const Dataset& d) {
  if (d.channels == 0 || d.height == 0 || d.width == 0) throw InputError("dataset has empty sample shape");
  if (d.num_classes < 2 || d.num_classes > 256) throw InputError("dataset needs 2..256 classes");
  if (d.pixels.size() != d.size() * d.sample_size()) throw InputError("dataset pixel payload does not match header");
  for (auto l : d.labels)
    if (l >= d.num_classes) throw InputError("dataset label " + std::to_string(l) + " >= K");
}

// --------------------------------------------------------------------------
// DatasetFile: "SKDD", u16 version, u32 count, u16 H, u16 W, u16 C, u16 K,
// u8 pixels, u8 labels, u64 FNV-1a of all preceding bytes.

inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::vector<unsigned char> encode_dataset(const Dataset& d) {
  validate(d);
  if (d.height > 0xffff || d.width > 0xffff || d.channels > 0xffff || d.size() > 0xffffffffULL)
    throw InputError("dataset too large for the file format");
  ByteWriter w;
  w.put_bytes("SKDD", 4);
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.size()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.height));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.width));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.channels));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.num_classes));
  w.put_bytes(d.pixels.data(), d.pixels.size());
  w.put_bytes(d.labels.data(), d.labels.size());
  w.seal();
  return w.bytes();
}

inline Dataset decode_dataset(const std::vector<unsigned char>& bytes) {
  const std::size_t body = verify_sealed(bytes, "dataset");
  ByteReader r(bytes.data(), body);
  if (std::memcmp(r.take(4), "SKDD", 4) != 0) throw CorruptionError("dataset: bad magic");
  if (r.get<std::uint16_t>() != kDatasetVersion) throw CorruptionError("dataset: unsupported version");
  Dataset d;
  const std::size_t count = r.get<std::uint32_t>();
  d.height = r.get<std::uint16_t>();
  d.width = r.get<std::uint16_t>();
  d.channels = r.get<std::uint16_t>();
  d.num_classes = r.get<std::uint16_t>();
  const unsigned char* px = r.take(count * d.sample_size());
  d.pixels.assign(px, px + count * d.sample_size());
  const unsigned char* lb = r.take(count);
  d.labels.assign(lb, lb + count);
  if (r.remaining() != 0) throw CorruptionError("dataset: trailing bytes");
  try {
    validate(d);
  } catch (const InputError& e) {
    throw CorruptionError(std::string("dataset: ") + e.what());
  }
  return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) { write_file_bytes(path, encode_dataset(d)); }
inline Dataset read_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

// --------------------------------------------------------------------------
// Synthetic generator.

struct SyntheticOptions {
  std::size_t num_classes = 10;
  std::size_t per_class = 200;
  std::size_t test_per_class = 100;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 3;
  /// Signal strength in (0, 1]: prototype amplitude relative to pixel noise.
  double difficulty = 0.2;
  std::uint64_t seed = 0;
};

namespace detail {

inline constexpr double kPrototypeAmplitude = 1.6;
inline constexpr double kPixelNoise = 1.0;
inline constexpr double kPixelScale = 36.0;

/// Smoothed, standardized random image per class.
inline std::vector<std::vector<double>> class_prototypes(const SyntheticOptions& o, const Rng& root) {
  const std::size_t h = o.height, w = o.width, plane = h * w;
  std::vector<std::vector<double>> protos;
  for (std::size_t k = 0; k < o.num_classes; ++k) {
    Rng r = root.child("prototype", k);
    std::vector<double> raw(o.channels * plane);
    for (double& v : raw) v = r.normal();
    std::vector<double> smooth(raw.size());
    for (std::size_t c = 0; c < o.channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double s = 0.0;
          for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx)
              s += raw[c * plane + ((y + h + dy - 1) % h) * w + (x + w + dx - 1) % w];
          smooth[c * plane + y * w + x] = s / 9.0;
        }
    double mean = 0.0, var = 0.0;
    for (double v : smooth) mean += v;
    mean /= static_cast<double>(smooth.size());
    for (double v : smooth) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(smooth.size()));
    for (double& v : smooth) v = (v - mean) / sd;
    protos.push_back(std::move(smooth));
  }
  return protos;
}

inline Dataset sample_split(const SyntheticOptions& o, const std::vector<std::vector<double>>& protos,
                            std::size_t per_class, const Rng& stream) {
  Dataset d{o.channels, o.height, o.width, o.num_classes, {}, {}};
  const std::size_t h = o.height, w = o.width, plane = h * w;
  const std::size_t count = per_class * o.num_classes;
  d.pixels.reserve(count * d.sample_size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % o.num_classes;
    Rng r = stream.child("sample", i);
    const std::size_t sy = static_cast<std::size_t>(r.below(3)), sx = static_cast<std::size_t>(r.below(3));
    const auto& p = protos[label];
    for (std::size_t c = 0; c < o.channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double proto = p[c * plane + ((y + h + sy - 1) % h) * w + (x + w + sx - 1) % w];
          const double v = o.difficulty * kPrototypeAmplitude * proto + kPixelNoise * r.normal();
          d.pixels.push_back(static_cast<std::uint8_t>(std::clamp(std::round(128.0 + kPixelScale * v), 0.0, 255.0)));
        }
    d.labels.push_back(static_cast<std::uint8_t>(label));
  }
  return d;
}

}  // namespace detail

/// Class k is a smoothed random prototype; each sample is the prototype,
/// circularly shifted by up to one pixel, scaled by `difficulty` and buried
/// in unit Gaussian noise. Classes are interleaved so every class has
/// exactly per_class samples.
inline std::pair<Dataset, Dataset> gen_synthetic(const SyntheticOptions& o) {
  if (o.num_classes < 2 || o.num_classes > 256) throw ConfigError("gen_synthetic: K must be in [2, 256]");
  if (o.per_class == 0 || o.test_per_class == 0) throw ConfigError("gen_synthetic: per-class counts must be positive");
  if (o.height == 0 || o.width == 0 || o.channels == 0 || o.height > 0xffff || o.width > 0xffff || o.channels > 0xffff)
    throw ConfigError("gen_synthetic: invalid image size");
  if (!(o.difficulty > 0.0 && o.difficulty <= 1.0)) throw ConfigError("gen_synthetic: difficulty must be in (0, 1]");
  const Rng root(o.seed);
  const auto protos = detail::class_prototypes(o, root);
  return {detail::sample_split(o, protos, o.per_class, root.child("train")),
          detail::sample_split(o, protos, o.test_per_class, root.child("test"))};
}

// --------------------------------------------------------------------------
// Conversion to network input.

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per-channel mean / standard deviation of pixel / 255.
inline Normalization compute_normalization(const Dataset& d) {
  validate(d);
  if (d.size() == 0) throw InputError("cannot normalize an empty dataset");
  Normalization n{std::vector<double>(d.channels), std::vector<double>(d.channels)};
  const std::size_t plane = d.height * d.width;
  const double count = static_cast<double>(d.size() * plane);
  for (std::size_t c = 0; c < d.channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) s += d.pixels[(i * d.channels + c) * plane + p] / 255.0;
    n.mean[c] = s / count;
    double ss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = d.pixels[(i * d.channels + c) * plane + p] / 255.0 - n.mean[c];
        ss += v * v;
      }
    n.std[c] = std::sqrt(std::max(ss / count, 1e-12));
  }
  return n;
}

inline Tensor to_tensor(const Dataset& d, std::span<const std::size_t> indices, const Normalization& norm) {
  if (norm.mean.size() != d.channels || norm.std.size() != d.channels)
    throw ConfigError("normalization needs one mean/std per channel");
  const std::size_t plane = d.height * d.width, ss = d.sample_size();
  Tensor x({indices.size(), d.channels, d.height, d.width});
  for (std::size_t b = 0; b < indices.size(); ++b)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        x[b * ss + c * plane + p] = (d.pixels[indices[b] * ss + c * plane + p] / 255.0 - norm.mean[c]) / norm.std[c];
  return x;
}

inline std::vector<int> labels_of(const Dataset& d, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(d.labels[i]);
  return out;
}

// --------------------------------------------------------------------------
// Training-time augmentation.

struct AugmentOptions {
  double hflip_prob = 0.5;
  std::size_t pad = 1;
};

/// Per-sample draws, for auditing.
struct AugmentRecord {
  std::vector<bool> flipped;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;  // (dy, dx) in [0, 2 pad]
};

/// Mirrors samples whose mask entry is set.
inline Tensor hflip(const Tensor& batch, const std::vector<bool>& mask) {
  Tensor out = batch;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (std::size_t b = 0; b < n; ++b) {
    if (!mask.at(b)) continue;
    for (std::size_t q = 0; q < c * h; ++q)
      for (std::size_t x = 0; x < w; ++x) out[(b * c * h + q) * w + x] = batch[(b * c * h + q) * w + (w - 1 - x)];
  }
  return out;
}

/// Horizontal flip with probability hflip_prob, then zero-pad by `pad` and
/// crop back to H x W at a uniform offset.
inline Tensor augment(const Tensor& batch, const AugmentOptions& opt, Rng& rng, AugmentRecord* record = nullptr) {
  if (batch.rank() != 4) throw DimensionError("augment: expected [N x C x H x W]");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (opt.pad > h || opt.pad > w) throw ConfigError("augment: padding larger than the image");
  std::vector<bool> mask(n);
  std::vector<std::pair<std::size_t, std::size_t>> offsets(n);
  for (std::size_t b = 0; b < n; ++b) {
    mask[b] = rng.uniform() < opt.hflip_prob;
    const std::size_t span = 2 * opt.pad + 1;
    offsets[b] = {static_cast<std::size_t>(rng.below(span)), static_cast<std::size_t>(rng.below(span))};
  }
  const Tensor flipped = hflip(batch, mask);
  Tensor out(batch.shape());
  const long pad = static_cast<long>(opt.pad);
  for (std::size_t b = 0; b < n; ++b) {
    const long oy = static_cast<long>(offsets[b].first) - pad, ox = static_cast<long>(offsets[b].second) - pad;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
          const long sy = y + oy, sx = x + ox;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
          out[((b * c + ch) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] =
              flipped[((b * c + ch) * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
        }
  }
  if (record) *record = {std::move(mask), std::move(offsets)};
  return out;
}

}  // namespace simkd
