#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skelfuse/tensor.hpp"

namespace skelfuse {

/// Ordered name -> tensor bundle; the unit of persistence for models and stage artifacts.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian:
//   "SKFZ" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name bytes, u32 rank, u64 extents[rank], f32 values[] |
//   u64 FNV-1a checksum over every preceding byte.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// data-error when `name` is absent.
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);
bool has_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace skelfuse
