/**
 * @file netpbm.hpp
 * @brief Binary PPM (P6) images and PGM (P5) masks, maxval 255.
 *
 * Images decode to (3, H, W) tensors with values byte/255. Masks decode to
 * class ids: byte >= 128 is class 1, otherwise 0; class 1 encodes as 255.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "odformer/error.hpp"
#include "odformer/tensor.hpp"

namespace odf {

/// Per-pixel class ids in row-major order.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> ids;

  std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

namespace detail {

struct PnmHeader {
  char kind = 0;  // '5' or '6'
  std::size_t width = 0, height = 0;
  std::size_t payload_offset = 0;
};

inline PnmHeader parse_pnm_header(const std::string& bytes, char expected, const std::string& what) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != expected)
    throw FormatError(what + ": bad magic, expected P" + std::string(1, expected));
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* field) {
    skip_space();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
      throw FormatError(what + ": malformed header field " + field);
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw FormatError(what + ": header field " + field + " too large");
      ++pos;
    }
    return v;
  };
  PnmHeader h;
  h.kind = expected;
  h.width = read_uint("width");
  h.height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (h.width == 0 || h.height == 0) throw FormatError(what + ": zero extent");
  if (maxval != 255) throw FormatError(what + ": maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !(bytes[pos] == ' ' || bytes[pos] == '\t' || bytes[pos] == '\n' || bytes[pos] == '\r'))
    throw FormatError(what + ": missing whitespace before payload");
  h.payload_offset = pos + 1;
  const std::size_t channels = expected == '6' ? 3 : 1;
  const std::size_t need = h.width * h.height * channels;
  if (bytes.size() - h.payload_offset < need)
    throw FormatError(what + ": truncated payload (" + std::to_string(bytes.size() - h.payload_offset) + " of " +
                      std::to_string(need) + " bytes)");
  return h;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path);
}

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::lround(c));
}

}  // namespace detail

inline Tensor decode_ppm(const std::string& bytes, const std::string& what = "ppm") {
  const auto h = detail::parse_pnm_header(bytes, '6', what);
  Tensor img({3, h.height, h.width});
  const std::size_t plane = h.height * h.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img[c * plane + i] = static_cast<double>(static_cast<unsigned char>(bytes[h.payload_offset + 3 * i + c])) / 255.0;
  return img;
}

/// Values are clamped to [0,1] and rounded to the nearest 1/255.
inline std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("encode_ppm: expected (3,H,W), got " + to_string(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2), plane = H * W;
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(detail::to_byte(image[c * plane + i])));
  return out;
}

inline Mask decode_pgm_mask(const std::string& bytes, const std::string& what = "pgm") {
  const auto h = detail::parse_pnm_header(bytes, '5', what);
  Mask m{h.height, h.width, std::vector<std::uint8_t>(h.height * h.width)};
  for (std::size_t i = 0; i < m.ids.size(); ++i)
    m.ids[i] = static_cast<unsigned char>(bytes[h.payload_offset + i]) >= 128 ? 1 : 0;
  return m;
}

inline std::string encode_pgm_mask(const Mask& mask) {
  if (mask.ids.size() != mask.height * mask.width || mask.ids.empty()) throw ShapeError("encode_pgm_mask: bad extents");
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (auto id : mask.ids) {
    if (id > 1) throw ShapeError("encode_pgm_mask: class id " + std::to_string(id) + " is not binary");
    out.push_back(static_cast<char>(id ? 255 : 0));
  }
  return out;
}

inline Tensor read_image(const std::string& path) { return decode_ppm(detail::read_file(path), path); }
inline Mask read_mask(const std::string& path) { return decode_pgm_mask(detail::read_file(path), path); }
inline void write_image(const std::string& path, const Tensor& image) { detail::write_file(path, encode_ppm(image)); }
inline void write_mask(const std::string& path, const Mask& mask) { detail::write_file(path, encode_pgm_mask(mask)); }

}  // namespace odf
