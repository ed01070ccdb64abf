#pragma once

#include <png.h>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "advgrid/image.hpp"

namespace advgrid::io {

struct Grid8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::string next_pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace detail

/// Binary (P5) PGM with maxval <= 255.
inline Grid8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (detail::next_pgm_token(in) != "P5")
    throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  Grid8 g;
  std::size_t maxval = 0;
  try {
    g.width = std::stoul(detail::next_pgm_token(in));
    g.height = std::stoul(detail::next_pgm_token(in));
    maxval = std::stoul(detail::next_pgm_token(in));
  } catch (const std::logic_error&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (g.width == 0 || g.height == 0 || maxval == 0 || maxval > 255)
    throw std::runtime_error(path.string() + ": unsupported PGM geometry/maxval");
  g.pixels.resize(g.width * g.height);
  in.read(reinterpret_cast<char*>(g.pixels.data()),
          static_cast<std::streamsize>(g.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(g.pixels.size()))
    throw std::runtime_error(path.string() + ": truncated PGM data");
  if (maxval != 255)
    for (auto& p : g.pixels)
      p = static_cast<std::uint8_t>((p * 255u + maxval / 2) / maxval);
  return g;
}

inline Grid8 read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  Grid8 g;
  g.width = image.width;
  g.height = image.height;
  g.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, g.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error(path.string() + ": " + msg);
  }
  return g;
}

inline Grid8 read_grayscale(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(c));
  if (ext == ".png") return read_png(path);
  return read_pgm(path);
}

inline std::string encode_pgm(const GrayImage& img) {
  std::ostringstream os(std::ios::binary);
  os << "P5\n" << kImageSide << ' ' << kImageSide << "\n255\n";
  for (std::size_t p = 0; p < kImagePixels; ++p)
    os.put(static_cast<char>(to_byte(img[p])));
  return os.str();
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << encode_pgm(img);
}

}  // namespace advgrid::io
