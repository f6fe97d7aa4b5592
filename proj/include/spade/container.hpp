#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spade/tensor.hpp"

namespace spade {

// Binary tensor container shared by checkpoints ("SPADECKP"), lens maps
// ("SPADELNS") and teacher caches ("SPADETCH"):
//
//   bytes 0-7    magic
//   bytes 8-11   u32 LE format version (1)
//   bytes 12-19  u64 LE JSON header length H
//   next H bytes UTF-8 JSON header
//   remainder    payload; each tensor is LE f32 row-major at a payload-relative
//                offset that is a multiple of 64
//
// The header's "tensors" array lists {"name","shape","offset","dtype"} in
// payload order. Other header keys belong to the file kind.

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Container {
  std::string magic;
  nlohmann::json header;  // without "tensors"
  NamedTensors tensors;

  const Tensor& get(std::string_view name) const;
};

/// Serializes to bytes. Keys are emitted sorted, so equal inputs give equal bytes.
std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes, std::string_view expected_magic);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, std::string_view expected_magic);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a, continued from `seed`.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace spade
