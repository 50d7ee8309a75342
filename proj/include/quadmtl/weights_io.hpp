#pragma once

// QMP1 weights file: magic "QMP1", u32 version, u8 kind, u32 input_dim,
// output_dim, hidden_width, num_tasks, f32 norm mean[34], std[34], then per
// layer (u32 rows, u32 cols, f32 row-major weights, f32 bias) in parameter
// order, then the CRC-32 of all preceding bytes. Little-endian.

#include <cstdint>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "quadmtl/binary_io.hpp"
#include "quadmtl/mtl_net.hpp"

namespace quadmtl {

inline constexpr char kWeightsMagic[4] = {'Q', 'M', 'P', '1'};
inline constexpr std::uint32_t kWeightsVersion = 1;

inline std::vector<std::uint8_t> encode_weights(const MtlNetwork& net) {
  const ArchSpec& a = net.arch();
  ByteWriter w;
  w.raw(kWeightsMagic, 4);
  w.u32(kWeightsVersion);
  w.u8(static_cast<std::uint8_t>(a.kind));
  w.u32(static_cast<std::uint32_t>(a.input_dim));
  w.u32(static_cast<std::uint32_t>(a.output_dim));
  w.u32(static_cast<std::uint32_t>(a.hidden));
  w.u32(static_cast<std::uint32_t>(a.num_tasks));
  for (int i = 0; i < kObsDim; ++i) w.f32(static_cast<float>(net.norm().mean[i]));
  for (int i = 0; i < kObsDim; ++i) w.f32(static_cast<float>(net.norm().std[i]));
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto W = net.weight(l);
    const auto b = net.bias(l);
    w.u32(static_cast<std::uint32_t>(W.rows()));
    w.u32(static_cast<std::uint32_t>(W.cols()));
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) w.f32(static_cast<float>(W(r, c)));
    for (Eigen::Index r = 0; r < b.size(); ++r) w.f32(static_cast<float>(b[r]));
  }
  w.seal();
  return w.bytes();
}

inline void save_weights(const MtlNetwork& net, const std::string& path) {
  write_file(path, encode_weights(net));
}

inline MtlNetwork decode_weights(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  char magic[4];
  if (r.size() < 4) throw TruncatedFile("file shorter than magic");
  r.raw(magic, 4);
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) throw BadMagic("not a QMP1 weights file");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    throw VersionMismatch("weights version " + std::to_string(version) + ", expected 1");

  const std::uint8_t kind = r.u8();
  const std::uint32_t in = r.u32(), out = r.u32(), hidden = r.u32(), tasks = r.u32();
  if (kind > 1) throw ShapeMismatch("unknown network kind " + std::to_string(kind));
  if (in != kObsDim || out != kActDim)
    throw ShapeMismatch("network dims " + std::to_string(in) + "->" + std::to_string(out) +
                        ", expected 34->12");
  if (hidden < 1 || hidden > (1u << 16)) throw ShapeMismatch("hidden width out of range");
  if (tasks < 1 || tasks > 1024) throw ShapeMismatch("task count out of range");
  if (kind == 1 && tasks != 1) throw ShapeMismatch("single-task network with several heads");

  ArchSpec a;
  a.kind = static_cast<ArchKind>(kind);
  a.hidden = static_cast<int>(hidden);
  a.num_tasks = static_cast<int>(tasks);
  const std::uint64_t layer_bytes =
      4 * (expected_param_count(a) + 2 * (2 + 2 * static_cast<std::uint64_t>(a.num_heads())));
  if (r.remaining() < 8 * kObsDim + layer_bytes + 4)
    throw TruncatedFile("file shorter than its header implies");
  MtlNetwork net(a);
  for (int i = 0; i < kObsDim; ++i) net.norm().mean[i] = r.f32();
  for (int i = 0; i < kObsDim; ++i) net.norm().std[i] = r.f32();

  for (int l = 0; l < net.num_layers(); ++l) {
    const LayerShape& s = net.layer(l);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != static_cast<std::uint32_t>(s.rows) || cols != static_cast<std::uint32_t>(s.cols))
      throw ShapeMismatch("layer " + std::to_string(l) + " is " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", header implies " + std::to_string(s.rows) +
                          "x" + std::to_string(s.cols));
    auto W = net.weight(l);
    auto b = net.bias(l);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = r.f32();
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = r.f32();
  }
  if (r.remaining() < 4) throw TruncatedFile("missing checksum");
  if (r.remaining() > 4)
    throw ShapeMismatch(std::to_string(r.remaining() - 4) + " unexpected trailing bytes");
  r.verify_crc();

  for (int i = 0; i < kObsDim; ++i)
    if (!(net.norm().std[i] > 0) || !std::isfinite(net.norm().mean[i]))
      throw ShapeMismatch("invalid normalisation statistics");
  return net;
}

inline MtlNetwork load_weights(const std::string& path) {
  return decode_weights(read_file(path));
}

}  // namespace quadmtl
