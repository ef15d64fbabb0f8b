// Copyright 2026 The EDIC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "edic/network.hpp"
#include "edic/tensor.hpp"

namespace edic {

inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::uint8_t kWeightFileVersion = 1;

/// Coded image. Serialized big-endian as
///   "EDIC" | version u8 | width u32 | height u32 | N u16 | M u16 | F u16 |
///   z_len u32 | z bytes | y_len u32 | y bytes | crc32 u32
/// where the CRC covers every preceding byte.
struct Bitstream {
  std::uint8_t version = kBitstreamVersion;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint16_t N = 0, M = 0, F = 0;
  std::vector<std::uint8_t> z_payload;
  std::vector<std::uint8_t> y_payload;

  std::size_t payload_bytes() const { return z_payload.size() + y_payload.size(); }
  bool operator==(const Bitstream&) const = default;
};

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& bs);
/// FormatError on bad magic, truncation, length or checksum mismatch;
/// VersionError on an unknown version.
Bitstream parse_bitstream(std::span<const std::uint8_t> bytes);

void write_bitstream(const std::filesystem::path& path, const Bitstream& bs);
Bitstream read_bitstream(const std::filesystem::path& path);

/// Named tensors in the weight container:
///   "EDWT" | version u8 | count u32 | per entry: name_len u32 | name |
///   rank u32 | extents u32... | float32 values
/// with every multi-byte field little-endian.
std::vector<std::uint8_t> serialize_tensors(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> parse_tensors(std::span<const std::uint8_t> bytes);

/// Parameters come back with requires_grad set; "meta." entries without.
void write_weights(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights read_weights(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Loads binary PPM (P6, maxval 255) or PNG into [1,3,H,W] with values v/255.
Tensor read_image(const std::filesystem::path& path);
/// Saves as PNG when the extension is .png, otherwise as P6 PPM; values are
/// clamped to [0,1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const Tensor& image);

/// 8-bit quantization as applied by write_image, returned in [0,1].
Tensor quantize_pixels(const Tensor& image);

}  // namespace edic
