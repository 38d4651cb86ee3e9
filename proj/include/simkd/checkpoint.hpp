#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "simkd/binary_io.hpp"
#include "simkd/network.hpp"

namespace simkd {

// Checkpoint layout (little-endian):
//   "SKDC" | u16 version | { u16 name_len, name, u8 rank, u32 extents[rank], f64 values[] }* | u64 FNV-1a
// Batch-norm running statistics travel as ordinary entries whose names end
// in ".running_mean" / ".running_var"; those suffixes are reserved.

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline bool is_buffer_name(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::size_t n = std::strlen(suffix);
    return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

inline std::vector<unsigned char> encode_checkpoint(const TensorMap& tensors) {
  ByteWriter w;
  w.put_bytes("SKDC", 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > 0xffff) throw UsageError("checkpoint: invalid tensor name length");
    if (t.rank() > 0xff) throw UsageError("checkpoint: rank too large");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) {
      if (e > 0xffffffffULL) throw UsageError("checkpoint: extent too large");
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    }
    w.put_bytes(t.data().data(), t.size() * sizeof(double));
  }
  w.seal();
  return w.bytes();
}

inline TensorMap decode_checkpoint(const std::vector<unsigned char>& bytes) {
  const std::size_t body = verify_sealed(bytes, "checkpoint");
  ByteReader r(bytes.data(), body);
  if (std::memcmp(r.take(4), "SKDC", 4) != 0) throw CorruptionError("checkpoint: bad magic");
  if (r.get<std::uint16_t>() != kCheckpointVersion) throw CorruptionError("checkpoint: unsupported version");
  TensorMap out;
  while (r.remaining() > 0) {
    const std::size_t len = r.get<std::uint16_t>();
    const unsigned char* np = r.take(len);
    std::string name(reinterpret_cast<const char*>(np), len);
    const std::size_t rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.get<std::uint32_t>();
      if (e == 0) throw CorruptionError("checkpoint: zero extent in '" + name + "'");
    }
    const std::size_t count = shape_size(shape);
    if (count > r.remaining() / sizeof(double)) throw CorruptionError("checkpoint: truncated payload for '" + name + "'");
    std::vector<double> values(count);
    std::memcpy(values.data(), r.take(count * sizeof(double)), count * sizeof(double));
    if (!out.emplace(name, Tensor(std::move(shape), std::move(values))).second)
      throw CorruptionError("checkpoint: duplicate tensor '" + name + "'");
  }
  return out;
}

/// Adds params and buffers of one component under `prefix`.
inline void collect(TensorMap& out, const ParamStore& params, const ParamStore& buffers, const std::string& prefix = "") {
  for (const auto& [name, t] : params) {
    if (is_buffer_name(name)) throw UsageError("parameter name '" + name + "' uses a reserved suffix");
    out[prefix + name] = t;
  }
  for (const auto& [name, t] : buffers) out[prefix + name] = t;
}

/// Replaces every tensor of (params, buffers) by the entry `prefix + name`
/// of `tensors`. All-or-nothing: the stores are only written after every
/// entry has been found with the expected shape.
inline void restore(const TensorMap& tensors, ParamStore& params, ParamStore& buffers, const std::string& prefix = "") {
  std::vector<std::pair<ParamStore*, std::pair<std::string, const Tensor*>>> plan;
  for (ParamStore* store : {&params, &buffers})
    for (const auto& [name, t] : *store) {
      auto it = tensors.find(prefix + name);
      if (it == tensors.end()) throw CorruptionError("checkpoint lacks tensor '" + prefix + name + "'");
      if (it->second.shape() != t.shape())
        throw CorruptionError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(it->second.shape()) +
                              ", expected " + shape_str(t.shape()));
      plan.push_back({store, {name, &it->second}});
    }
  for (auto& [store, entry] : plan) store->set(entry.first, *entry.second);
}

inline void write_checkpoint(const TensorMap& tensors, const std::string& path) {
  write_file_bytes(path, encode_checkpoint(tensors));
}

inline TensorMap read_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

inline void write_checkpoint(const Model& model, const std::string& path) {
  TensorMap t;
  collect(t, model.params, model.buffers);
  write_checkpoint(t, path);
}

/// Materializes `spec` and fills it from the checkpoint at `path`.
inline Model read_model(const NetworkSpec& spec, const std::string& path) {
  Model m = build(spec, Rng(0));
  const TensorMap t = read_checkpoint(path);
  restore(t, m.params, m.buffers);
  std::size_t expected = m.params.size() + m.buffers.size();
  if (t.size() != expected) throw CorruptionError("checkpoint holds tensors the network does not have");
  m.mode = Mode::Eval;
  return m;
}

}  // namespace simkd
