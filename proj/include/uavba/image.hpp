#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "uavba/errors.hpp"

namespace uavba {

/// 8-bit grayscale raster.
struct ImageRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  ImageRaster() = default;
  ImageRaster(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
};

inline ImageRaster load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open PGM file: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("not a binary PGM (P5) file: " + path);
  auto next_token = [&in]() {
    std::string tok;
    for (;;) {
      if (!(in >> tok)) throw IoError("truncated PGM header");
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
  };
  ImageRaster img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw IoError("only 8-bit PGM supported: " + path);
  in.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw IoError("truncated PGM data: " + path);
  return img;
}

inline void save_pgm(const ImageRaster& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PGM file: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

}  // namespace uavba
