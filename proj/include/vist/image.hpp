#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vist/errors.hpp"

namespace vist {

/// Channels-last H×W×C image, values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t ch) {
    return pixels[(y * width + x) * channels + ch];
  }
  float at(std::size_t y, std::size_t x, std::size_t ch) const {
    return pixels[(y * width + x) * channels + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr std::size_t kImagesPerStory = 5;

struct ImageSet {
  std::array<Image, kImagesPerStory> images;
  std::string album_id;
  std::string story_id;
};

inline Image resize_nearest(const Image& src, std::size_t height, std::size_t width) {
  if (src.height == height && src.width == width) return src;
  Image out(height, width, src.channels);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * src.height / height;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = x * src.width / width;
      for (std::size_t c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return out;
}

/// Maps [0,1] pixels to [-1,1] (mean 0.5, std 0.5 per channel) before patch
/// extraction.
inline Image normalize_pixels(Image img) {
  for (auto& v : img.pixels) v = 2.0f * v - 1.0f;
  return img;
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace detail

/// Reads a binary 8-bit PPM (P6) file; pixel values are divided by 255.
inline Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError("not a binary PPM (P6) image: " + path.string());
  std::size_t dims[3] = {0, 0, 0};
  for (auto& d : dims) {
    detail::skip_pnm_space(in);
    in >> d;
  }
  if (!in || dims[0] == 0 || dims[1] == 0 || dims[2] != 255) {
    throw DataError("unsupported PPM header in " + path.string());
  }
  in.get();
  Image img(dims[1], dims[0], 3);
  std::vector<unsigned char> raw(img.pixels.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DataError("truncated PPM image " + path.string());
  }
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

inline void save_ppm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw DataError("PPM output needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (float v : img.pixels) {
    float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    out.put(static_cast<char>(static_cast<unsigned char>(c * 255.0f + 0.5f)));
  }
}

}  // namespace vist
