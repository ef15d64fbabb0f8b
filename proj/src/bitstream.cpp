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

#include "edic/bitstream.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include "edic/error.hpp"

namespace edic {

namespace {

constexpr char kStreamMagic[4] = {'E', 'D', 'I', 'C'};
constexpr char kWeightMagic[4] = {'E', 'D', 'W', 'T'};

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
  void magic(const char (&m)[4]) {
    for (char c : m) out.push_back(static_cast<std::uint8_t>(c));
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void be(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const char* what) : buf_(b), what_(what) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > buf_.size() - pos_) {
      throw FormatError(std::string(what_) + ": truncated at byte " + std::to_string(pos_));
    }
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool magic(const char (&m)[4]) {
    auto s = take(4);
    return std::memcmp(s.data(), m, 4) == 0;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint64_t be(int n) {
    std::uint64_t v = 0;
    for (std::uint8_t b : take(static_cast<std::size_t>(n))) v = (v << 8) | b;
    return v;
  }
  std::uint64_t le(int n) {
    auto s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
  const char* what_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, b.data(), static_cast<uInt>(b.size())));
}

}  // namespace

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& bs) {
  Writer w;
  w.magic(kStreamMagic);
  w.u8(bs.version);
  w.be(bs.width, 4);
  w.be(bs.height, 4);
  w.be(bs.N, 2);
  w.be(bs.M, 2);
  w.be(bs.F, 2);
  w.be(bs.z_payload.size(), 4);
  w.bytes(bs.z_payload);
  w.be(bs.y_payload.size(), 4);
  w.bytes(bs.y_payload);
  w.be(crc32_of(w.out), 4);
  return std::move(w.out);
}

Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "bitstream");
  if (!r.magic(kStreamMagic)) throw FormatError("bitstream: bad magic");
  Bitstream bs;
  bs.version = r.u8();
  if (bs.version != kBitstreamVersion) {
    throw VersionError("bitstream: unsupported version " + std::to_string(bs.version));
  }
  bs.width = static_cast<std::uint32_t>(r.be(4));
  bs.height = static_cast<std::uint32_t>(r.be(4));
  bs.N = static_cast<std::uint16_t>(r.be(2));
  bs.M = static_cast<std::uint16_t>(r.be(2));
  bs.F = static_cast<std::uint16_t>(r.be(2));
  const auto z = r.take(r.be(4));
  bs.z_payload.assign(z.begin(), z.end());
  const auto y = r.take(r.be(4));
  bs.y_payload.assign(y.begin(), y.end());
  const std::size_t body = r.pos();
  const auto crc = static_cast<std::uint32_t>(r.be(4));
  if (r.remaining() != 0) throw FormatError("bitstream: trailing bytes");
  if (crc != crc32_of(bytes.first(body))) throw FormatError("bitstream: checksum mismatch");
  if (bs.width == 0 || bs.height == 0) throw FormatError("bitstream: empty image");
  return bs;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_bitstream(const std::filesystem::path& path, const Bitstream& bs) {
  write_file(path, serialize_bitstream(bs));
}

Bitstream read_bitstream(const std::filesystem::path& path) {
  return parse_bitstream(read_file(path));
}

std::vector<std::uint8_t> serialize_tensors(const std::map<std::string, Tensor>& tensors) {
  Writer w;
  w.magic(kWeightMagic);
  w.u8(kWeightFileVersion);
  w.le(tensors.size(), 4);
  for (const auto& [name, t] : tensors) {
    w.le(name.size(), 4);
    w.bytes({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
    w.le(t.rank(), 4);
    for (std::size_t e : t.shape()) w.le(e, 4);
    for (double v : t.data()) {
      w.le(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    }
  }
  return std::move(w.out);
}

std::map<std::string, Tensor> parse_tensors(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "weight file");
  if (!r.magic(kWeightMagic)) throw FormatError("weight file: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kWeightFileVersion) {
    throw VersionError("weight file: unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = r.le(4);
  std::map<std::string, Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_bytes = r.take(r.le(4));
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint64_t rank = r.le(4);
    if (rank > 8) throw FormatError("weight file: rank " + std::to_string(rank) + " for " + name);
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      e = r.le(4);
      numel *= e;
      if (numel > r.remaining()) throw FormatError("weight file: truncated entry " + name);
    }
    std::vector<double> values(numel);
    for (double& v : values) {
      v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4))));
    }
    if (!out.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw FormatError("weight file: duplicate entry " + name);
    }
  }
  if (r.remaining() != 0) throw FormatError("weight file: trailing bytes");
  return out;
}

void write_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  write_file(path, serialize_tensors(weights.entries()));
}

ModelWeights read_weights(const std::filesystem::path& path) {
  ModelWeights w;
  for (auto& [name, t] : parse_tensors(read_file(path))) {
    if (name.rfind("meta.", 0) != 0) t.set_requires_grad(true);
    w.set(name, std::move(t));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Images

namespace {

Tensor from_rgb8(const std::vector<std::uint8_t>& rgb, std::size_t h, std::size_t w) {
  std::vector<double> v(3 * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) v[c * h * w + i] = rgb[3 * i + c] / 255.0;
  }
  return Tensor({1, 3, h, w}, std::move(v));
}

std::vector<std::uint8_t> to_rgb8(const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ConfigError("image tensor must be [1,3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t plane = image.dim(2) * image.dim(3);
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image.data()[c * plane + i], 0.0, 1.0);
      rgb[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return rgb;
}

// PPM header tokens, skipping comments.
std::size_t ppm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t v = 0;
  std::size_t digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (++digits > 9) throw FormatError("ppm: header value too large");
  }
  if (digits == 0) throw FormatError("ppm: malformed header");
  return v;
}

Tensor read_ppm(const std::vector<std::uint8_t>& b) {
  std::size_t pos = 2;
  const std::size_t w = ppm_token(b, pos);
  const std::size_t h = ppm_token(b, pos);
  const std::size_t maxval = ppm_token(b, pos);
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  if (w == 0 || h == 0) throw FormatError("ppm: empty image");
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("ppm: malformed header");
  ++pos;
  if (b.size() - pos < 3 * w * h) throw FormatError("ppm: truncated pixel data");
  std::vector<std::uint8_t> rgb(b.begin() + static_cast<std::ptrdiff_t>(pos),
                                b.begin() + static_cast<std::ptrdiff_t>(pos + 3 * w * h));
  return from_rgb8(rgb, h, w);
}

Tensor read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("png: " + std::string(img.message));
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError("png: " + std::string(img.message));
  }
  return from_rgb8(rgb, img.height, img.width);
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> b = read_file(path);
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (b.size() >= 8 && std::equal(kPngSig, kPngSig + 8, b.begin())) return read_png(path);
  if (b.size() >= 2 && b[0] == 'P' && b[1] == '6') return read_ppm(b);
  throw FormatError(path.string() + ": not a P6 PPM or PNG image");
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  const std::vector<std::uint8_t> rgb = to_rgb8(image);
  const std::size_t h = image.dim(2), w = image.dim(3);
  if (path.extension() == ".png") {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
      throw IoError("png: " + std::string(img.message));
    }
    return;
  }
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), rgb.begin(), rgb.end());
  write_file(path, out);
}

Tensor quantize_pixels(const Tensor& image) {
  std::vector<double> v(image.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0) / 255.0;
  }
  return Tensor(image.shape(), std::move(v));
}

}  // namespace edic
