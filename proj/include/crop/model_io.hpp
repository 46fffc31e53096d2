// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/mask.hpp"
#include "crop/metrics.hpp"
#include "crop/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace crop {

/// Binary model container. Layout, all integers and floats little-endian:
///
///   "CROPMDL"            7 bytes magic
///   u32 version          currently 1
///   u32 n, u64 dims[n]   layer dims (input, hidden..., classes)
///   u8 metric            MetricKind
///   per layer            f64 weights[out*in] row-major, then f64 bias[out]
///   u8 has_mask          0 or 1
///   [u64 bits, u8[...]]  mask bits in (layer, row, col) order, LSB first
///   u64 len, u8[len]     metadata string
struct ModelFile {
  static constexpr char kMagic[8] = "CROPMDL";
  static constexpr std::uint32_t kVersion = 1;

  ModelParams model;
  MetricKind metric = MetricKind::accuracy;
  std::optional<Mask> mask;
  std::string metadata;

  friend bool operator==(const ModelFile& a, const ModelFile& b);
};

std::vector<std::uint8_t> encode_model(const ModelFile& file);
ModelFile decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelFile& file, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace crop
