#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bianet/errors.hpp"

namespace bianet {

// Binary PNM images (P5 grayscale / P6 color), 8- or 16-bit, the portable
// formats used for all image files in this project. 16-bit samples are
// big-endian per the format.
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (P5) or 3 (P6)
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // interleaved, row-major

  std::uint16_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

inline int pnm_token(std::istream& in, const std::string& what) {
  // skip whitespace and '#' comments
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) {
    throw IoError(IoCode::truncated, "pnm: missing " + what);
  }
  long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > 1 << 30) throw IoError("pnm: absurd " + what);
    ch = in.get();
  }
  return static_cast<int>(v);
}

}  // namespace detail

inline PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("pnm: cannot open " + path.string());
  char p = 0, kind = 0;
  f.get(p);
  f.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6')) {
    throw IoError(IoCode::bad_magic, "pnm: not a binary P5/P6 file: " + path.string());
  }
  PnmImage img;
  img.channels = kind == '6' ? 3 : 1;
  img.width = detail::pnm_token(f, "width");
  img.height = detail::pnm_token(f, "height");
  img.maxval = detail::pnm_token(f, "maxval");
  if (img.width < 1 || img.height < 1) {
    throw IoError("pnm: zero-extent image " + path.string());
  }
  if (img.maxval < 1 || img.maxval > 65535) {
    throw IoError("pnm: unsupported maxval " + std::to_string(img.maxval));
  }
  const std::size_t count =
      static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(count);
  const bool wide = img.maxval > 255;
  std::vector<unsigned char> raw(count * (wide ? 2 : 1));
  if (!f.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()))) {
    throw IoError(IoCode::truncated, "pnm: truncated pixel data " + path.string());
  }
  if (wide) {
    for (std::size_t i = 0; i < count; ++i) {
      img.pixels[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = raw[i];
  }
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("pnm: cannot write " + path.string());
  f << (img.channels == 3 ? "P6\n" : "P5\n")
    << img.width << ' ' << img.height << '\n'
    << img.maxval << '\n';
  const bool wide = img.maxval > 255;
  std::vector<unsigned char> raw;
  raw.reserve(img.pixels.size() * (wide ? 2 : 1));
  for (std::uint16_t v : img.pixels) {
    if (wide) raw.push_back(static_cast<unsigned char>(v >> 8));
    raw.push_back(static_cast<unsigned char>(v & 0xff));
  }
  if (!f.write(reinterpret_cast<const char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw IoError("pnm: short write " + path.string());
  }
}

inline PnmImage make_gray8(int width, int height) {
  PnmImage img;
  img.width = width;
  img.height = height;
  img.channels = 1;
  img.maxval = 255;
  img.pixels.assign(static_cast<std::size_t>(width) * height, 0);
  return img;
}

inline PnmImage make_rgb8(int width, int height) {
  PnmImage img = make_gray8(width, height);
  img.channels = 3;
  img.pixels.assign(img.pixels.size() * 3, 0);
  return img;
}

}  // namespace bianet
