// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/backbone.hpp"
#include "eihi/tensor.hpp"

namespace eihi {

// Container layout, all integers little-endian:
//   "EIHI" | u32 version | u32 json_len | json bytes (UTF-8)
//   then per tensor: u32 rank | u64 extents[rank] | f64 values[prod(extents)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json spec;
  std::vector<Tensor> tensors;
};

std::string encode_checkpoint(const nlohmann::json& spec, std::span<const Tensor> tensors);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& spec,
                     std::span<const Tensor> tensors);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_backbone(const std::filesystem::path& path, const BackboneParams& params);
BackboneParams load_backbone(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace eihi
