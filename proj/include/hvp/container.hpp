// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvp/errors.hpp"

// Little-endian float32 I/O and the single-file "JSON manifest + raw blob"
// container shared by weight files and feature tables.
//
// Container layout:
//   bytes 0..7   magic "HVPCNTR1"
//   bytes 8..15  u64 little-endian length N of the manifest
//   next N bytes UTF-8 JSON manifest
//   remainder    little-endian float32 payload, concatenated in the order
//                the manifest lists its arrays
namespace hvp::io {

using json = nlohmann::json;

inline constexpr char kContainerMagic[8] = {'H', 'V', 'P', 'C', 'N', 'T', 'R', '1'};

inline void append_f32_le(std::string& out, std::span<const float> values) {
  static_assert(sizeof(float) == 4);
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  for (float v : values) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
}

inline std::vector<float> parse_f32_le(std::span<const char> bytes) {
  if (bytes.size() % 4 != 0) throw IoError("float32 payload size is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<float> read_f32_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return parse_f32_le(bytes);
}

inline void write_f32_file(const std::filesystem::path& path, std::span<const float> values) {
  std::string bytes;
  append_f32_le(bytes, values);
  write_file(path, bytes);
}

struct Container {
  json manifest;
  std::vector<float> payload;
};

inline std::string encode_container(const json& manifest, std::span<const float> payload) {
  const std::string text = manifest.dump(1);
  std::string bytes(kContainerMagic, sizeof(kContainerMagic));
  const std::uint64_t n = text.size();
  for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((n >> (8 * b)) & 0xFFu));
  bytes += text;
  append_f32_le(bytes, payload);
  return bytes;
}

inline Container decode_container(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
    throw IoError(origin + ": not an HVP container (bad magic)");
  std::uint64_t n = 0;
  for (int b = 0; b < 8; ++b)
    n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  if (n > bytes.size() - 16) throw IoError(origin + ": manifest length exceeds file size");
  Container c;
  try {
    c.manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(n));
  } catch (const json::exception& e) {
    throw IoError(origin + ": corrupt manifest: " + e.what());
  }
  c.payload = parse_f32_le(std::span<const char>(bytes).subspan(16 + n));
  return c;
}

inline void write_container(const std::filesystem::path& path, const json& manifest,
                            std::span<const float> payload) {
  write_file(path, encode_container(manifest, payload));
}

inline Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path), path.string());
}

/// FNV-1a 64-bit.
inline std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace hvp::io
