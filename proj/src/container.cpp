#include "spade/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "spade/error.hpp"

namespace spade {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

std::size_t align_up(std::size_t n) { return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment; }

}  // namespace

const Tensor& Container::get(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError(magic + " file has no tensor '" + std::string(name) + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  if (c.magic.size() != 8) throw FormatError("container magic must be 8 bytes");
  nlohmann::json header = c.header;
  auto table = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& [name, t] : c.tensors) {
    payload.resize(align_up(payload.size()), 0);
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}, {"dtype", "f32"}});
    for (float v : t.data()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
  }
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(20 + text.size() + payload.size());
  out.insert(out.end(), c.magic.begin(), c.magic.end());
  put_u32(out, kContainerVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes, std::string_view expected_magic) {
  if (bytes.size() < 20) throw FormatError("file too short for a container header");
  Container c;
  c.magic.assign(bytes.begin(), bytes.begin() + 8);
  if (c.magic != expected_magic) {
    throw FormatError("bad magic '" + c.magic + "', expected '" + std::string(expected_magic) + "'");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const std::uint64_t hlen = get_le(bytes, 12, 8);
  if (hlen > bytes.size() - 20) throw FormatError("header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  const auto payload = bytes.subspan(20 + hlen);
  if (!header.contains("tensors") || !header["tensors"].is_array()) throw FormatError("header lacks a tensors array");
  try {
    for (const auto& rec : header["tensors"]) {
      const auto name = rec.at("name").get<std::string>();
      if (rec.at("dtype").get<std::string>() != "f32") throw FormatError("tensor '" + name + "' is not f32");
      const auto shape = rec.at("shape").get<Shape>();
      const auto offset = rec.at("offset").get<std::uint64_t>();
      if (offset % kPayloadAlignment != 0) throw FormatError("tensor '" + name + "' offset is not 64-byte aligned");
      const std::size_t n = shape_numel(shape);
      if (offset > payload.size() || n * 4 > payload.size() - offset) {
        throw FormatError("tensor '" + name + "' extends past the payload");
      }
      std::vector<float> data(n);
      for (std::size_t i = 0; i < n; ++i) {
        data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload, offset + 4 * i, 4)));
      }
      c.tensors.emplace_back(name, Tensor(shape, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor table: ") + e.what());
  }
  header.erase("tensors");
  c.header = std::move(header);
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_bytes(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path, std::string_view expected_magic) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_container(bytes, expected_magic);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace spade
