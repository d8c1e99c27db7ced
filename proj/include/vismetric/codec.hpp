#pragma once

// Byte-level helpers: SHA-256, CRC-32, base64, hex, and an 8-bit RGB PNG encoder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <zlib.h>

#include "vismetric/error.hpp"
#include "vismetric/imagination.hpp"

namespace vismetric::codec {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest d{};
  SHA256(data.data(), data.size(), d.data());
  return d;
}

inline Digest sha256(std::string_view s) {
  return sha256(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline std::uint32_t crc32(std::span<const std::uint8_t> data) {
  return static_cast<std::uint32_t>(::crc32(0L, data.data(), static_cast<uInt>(data.size())));
}

inline std::string to_hex(std::span<const std::uint8_t> data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ValidationError("base64: length not a multiple of 4");
  Bytes out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ValidationError("base64: invalid input");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

// Little/big-endian appenders used by the cache format and key canonicalization.
inline void put_le16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_le32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_be32(Bytes& b, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_be64(Bytes& b, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint16_t get_le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t get_le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// ---------------------------------------------------------------------------
// PNG

inline std::uint8_t to_pixel_byte(double value) {
  const double scaled = std::round(255.0 * value);
  if (!(scaled > 0.0)) return 0;  // also maps NaN to 0
  return static_cast<std::uint8_t>(std::min(scaled, 255.0));
}

/// Non-interlaced 8-bit RGB PNG, filter type 0 on every row.
inline Bytes encode_png_rgb8(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw ValidationError("png: pixel buffer size mismatch");
  Bytes raw;
  raw.reserve(height * (width * 3 + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(y * width * 3),
               rgb.begin() + static_cast<std::ptrdiff_t>((y + 1) * width * 3));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  Bytes z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw Error("png: zlib compression failed");
  z.resize(zlen);

  Bytes png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  auto chunk = [&png](const char* type, const Bytes& data) {
    put_be32(png, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = png.size();
    png.insert(png.end(), type, type + 4);
    png.insert(png.end(), data.begin(), data.end());
    put_be32(png, crc32(std::span<const std::uint8_t>(png.data() + start, png.size() - start)));
  };
  Bytes ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, RGB, deflate, filter 0, no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", {});
  return png;
}

/// pixel byte = clamp(round(255 * value), 0, 255)
inline Bytes encode_png(const GeneratedImage& img) {
  if (img.channels != 3) throw ValidationError("png: only RGB images are supported");
  Bytes rgb(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), rgb.begin(), to_pixel_byte);
  return encode_png_rgb8(img.width, img.height, rgb);
}

inline bool looks_like_png(std::span<const std::uint8_t> data) {
  static constexpr std::array<std::uint8_t, 8> kSig = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  return data.size() >= 8 && std::equal(kSig.begin(), kSig.end(), data.begin());
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

/// Decodes 8-bit non-interlaced RGB or RGBA PNGs into an RGB image with values in [0, 1].
inline GeneratedImage decode_png(std::span<const std::uint8_t> png) {
  if (!looks_like_png(png)) throw ValidationError("png: bad signature");
  std::size_t pos = 8;
  std::uint32_t width = 0, height = 0;
  std::uint8_t color_type = 0;
  Bytes idat;
  while (pos + 12 <= png.size()) {
    const std::uint32_t len = get_be32(png.data() + pos);
    if (pos + 12 + len > png.size()) throw ValidationError("png: truncated chunk");
    const std::string_view type(reinterpret_cast<const char*>(png.data() + pos + 4), 4);
    const std::uint8_t* data = png.data() + pos + 8;
    if (crc32(png.subspan(pos + 4, len + 4)) != get_be32(data + len)) throw ValidationError("png: chunk CRC mismatch");
    if (type == "IHDR") {
      if (len != 13) throw ValidationError("png: bad IHDR");
      width = get_be32(data);
      height = get_be32(data + 4);
      color_type = data[9];
      if (data[8] != 8 || (color_type != 2 && color_type != 6) || data[12] != 0)
        throw ValidationError("png: only 8-bit non-interlaced RGB/RGBA is supported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (width == 0 || height == 0) throw ValidationError("png: missing IHDR");
  const std::size_t bpp = color_type == 6 ? 4 : 3;
  const std::size_t stride = width * bpp;
  Bytes raw(height * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK || raw_len != raw.size())
    throw ValidationError("png: bad image data");

  Bytes cur(stride), prev(stride, 0);
  GeneratedImage img{height, width, 3, std::vector<double>(std::size_t{width} * height * 3)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* line = raw.data() + y * (stride + 1) + 1;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= bpp ? cur[x - bpp] : 0;
      const int b = prev[x];
      const int c = x >= bpp ? prev[x - bpp] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: {
          const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw ValidationError("png: unknown filter type");
      }
      cur[x] = static_cast<std::uint8_t>(line[x] + pred);
    }
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch)
        img.pixels[(y * width + x) * 3 + ch] = cur[x * bpp + ch] / 255.0;
    std::swap(cur, prev);
  }
  return img;
}

}  // namespace vismetric::codec
