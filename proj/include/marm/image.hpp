#pragma once

// 8-bit RGB images: binary PPM (P6) always, PNG when built with libpng.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef MARM_HAVE_PNG
#include <png.h>
#endif

#include "marm/tensor.hpp"

namespace marm::image {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Interleaved RGB, row-major.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::size_t pixels() const { return width * height; }
  uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Planar [3,H,W] in [0,1].
template <typename T = Real>
Tensor<T> to_tensor(const Image& img) {
  Tensor<T> t(Shape{3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<T>(img.at(y, x, c)) / T(255);
  return t;
}

// Clamp to [0,1], scale by 255, round half away from zero.
template <typename T>
Image from_tensor(const Tensor<T>& t) {
  MARM_REQUIRE(t.rank() == 3 && t.shape()[0] == 3, "from_tensor: expected [3,H,W], got ", t.shape());
  Image img(t.shape()[2], t.shape()[1]);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = static_cast<double>(t.at(c, y, x));
        v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

inline Image crop(const Image& src, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  MARM_REQUIRE(y0 + h <= src.height && x0 + w <= src.width, "crop outside image");
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(&src.rgb[((y0 + y) * src.width + x0) * 3], w * 3, &out.rgb[y * w * 3]);
  return out;
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ImageError("short write to " + path);
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])) != suffix[i]) return false;
  return true;
}

}  // namespace detail

inline Image decode_ppm(const std::vector<uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 9) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw ImageError("ppm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ImageError("ppm: not a binary P6 file");
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw ImageError("ppm: only maxval 255 is supported");
  if (w == 0 || h == 0) throw ImageError("ppm: empty image");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageError("ppm: malformed header");
  ++pos;
  if ((bytes.size() - pos) / 3 / w < h) throw ImageError("ppm: truncated pixel data");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<long>(pos), w * h * 3, img.rgb.begin());
  return img;
}

inline std::vector<uint8_t> encode_ppm(const Image& img) {
  const std::string head = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline constexpr bool png_supported() {
#ifdef MARM_HAVE_PNG
  return true;
#else
  return false;
#endif
}

#ifdef MARM_HAVE_PNG
inline Image read_png(const std::string& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) throw ImageError("png: " + std::string(pi.message));
  pi.format = PNG_FORMAT_RGB;
  Image img(pi.width, pi.height);
  if (!png_image_finish_read(&pi, nullptr, img.rgb.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw ImageError("png: " + std::string(pi.message));
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.rgb.data(), 0, nullptr))
    throw ImageError("png: " + std::string(pi.message));
}
#endif

inline Image read_image(const std::string& path) {
  if (detail::ends_with(path, ".png")) {
#ifdef MARM_HAVE_PNG
    return read_png(path);
#else
    throw ImageError("PNG support not compiled in: " + path);
#endif
  }
  return decode_ppm(read_file(path));
}

inline void write_image(const std::string& path, const Image& img) {
  if (detail::ends_with(path, ".png")) {
#ifdef MARM_HAVE_PNG
    write_png(path, img);
    return;
#else
    throw ImageError("PNG support not compiled in: " + path);
#endif
  }
  write_file(path, encode_ppm(img));
}

}  // namespace marm::image
