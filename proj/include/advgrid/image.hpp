#pragma once

// Malware images: raw executable bytes laid out as an 8-bit grayscale grid,
// box-resized to the classifier's 28 x 28 input, plus perturbation masks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "advgrid/tensor.hpp"

namespace advgrid {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kNumFamilies = 25;

/// Where an image came from before it was resized.
struct ImageSource {
  std::size_t byte_length = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// 28 x 28 single-channel image in [0,1], stored as a 28 x 28 x 1 tensor.
struct GrayImage {
  Tensor pixels{Shape{kImageSide, kImageSide, 1}};
  std::optional<std::size_t> label;
  std::optional<ImageSource> source;

  double operator[](std::size_t i) const { return pixels[i]; }
  double& operator[](std::size_t i) { return pixels[i]; }

  static GrayImage from_pixels(std::vector<double> values,
                               std::optional<std::size_t> label = {}) {
    if (values.size() != kImagePixels)
      throw ShapeError("GrayImage needs 784 pixels, got " +
                       std::to_string(values.size()));
    GrayImage img;
    img.pixels = Tensor({kImageSide, kImageSide, 1}, std::move(values));
    img.label = label;
    img.validate();
    return img;
  }

  void validate() const {
    if (pixels.shape() != Shape{kImageSide, kImageSide, 1})
      throw ShapeError("GrayImage shape " + to_string(pixels.shape()));
    for (double v : pixels.values())
      if (!(v >= 0.0 && v <= 1.0))
        throw std::domain_error("GrayImage pixel outside [0,1]");
  }
};

/// Area-averaging resize of a row-major single-channel grid. Each output pixel
/// is the coverage-weighted mean of the source pixels under its footprint.
inline std::vector<double> resize_area(std::span<const double> src,
                                       std::size_t src_h, std::size_t src_w,
                                       std::size_t dst_h, std::size_t dst_w) {
  if (src.size() != src_h * src_w || src_h == 0 || src_w == 0 || dst_h == 0 ||
      dst_w == 0)
    throw ShapeError("resize_area: bad geometry");

  // Per-axis coverage lists: for output index o, (source index, overlap).
  auto axis_weights = [](std::size_t n_src, std::size_t n_dst) {
    std::vector<std::vector<std::pair<std::size_t, double>>> w(n_dst);
    const double scale = static_cast<double>(n_src) / static_cast<double>(n_dst);
    for (std::size_t o = 0; o < n_dst; ++o) {
      const double lo = static_cast<double>(o) * scale;
      const double hi = static_cast<double>(o + 1) * scale;
      auto first = static_cast<std::size_t>(std::floor(lo));
      auto last = std::min(n_src, static_cast<std::size_t>(std::ceil(hi)));
      for (std::size_t s = first; s < last; ++s) {
        const double overlap = std::min(hi, static_cast<double>(s + 1)) -
                               std::max(lo, static_cast<double>(s));
        if (overlap > 0.0) w[o].emplace_back(s, overlap / scale);
      }
    }
    return w;
  };
  const auto wy = axis_weights(src_h, dst_h);
  const auto wx = axis_weights(src_w, dst_w);

  std::vector<double> out(dst_h * dst_w, 0.0);
  for (std::size_t oy = 0; oy < dst_h; ++oy) {
    for (std::size_t ox = 0; ox < dst_w; ++ox) {
      double acc = 0.0;
      for (auto [sy, fy] : wy[oy]) {
        double row = 0.0;
        for (auto [sx, fx] : wx[ox]) row += fx * src[sy * src_w + sx];
        acc += fy * row;
      }
      out[oy * dst_w + ox] = acc;
    }
  }
  return out;
}

/// Builds a GrayImage from an arbitrary 8-bit grid (used for PGM/PNG input).
inline GrayImage image_from_grid(std::span<const std::uint8_t> grid,
                                 std::size_t height, std::size_t width,
                                 std::optional<std::size_t> label = {}) {
  std::vector<double> src(grid.begin(), grid.end());
  auto resized = resize_area(src, height, width, kImageSide, kImageSide);
  for (double& v : resized) v = std::clamp(v / 255.0, 0.0, 1.0);
  auto img = GrayImage::from_pixels(std::move(resized), label);
  img.source = ImageSource{grid.size(), width, height};
  return img;
}

/// Row width for an n-byte binary: nearest power of two to sqrt(n), in [32, 1024].
inline std::size_t binary_width(std::size_t n) {
  const double exponent =
      std::round(std::log2(std::sqrt(static_cast<double>(n))));
  const double width = std::clamp(std::exp2(exponent), 32.0, 1024.0);
  return static_cast<std::size_t>(width);
}

/// Lays the bytes out row-major (final row zero-padded) and resizes to 28 x 28.
inline GrayImage binary_to_image(std::span<const std::uint8_t> bytes,
                                 std::size_t width = 0) {
  if (bytes.empty()) throw std::invalid_argument("binary_to_image: empty input");
  if (width == 0) width = binary_width(bytes.size());
  const std::size_t height = (bytes.size() + width - 1) / width;
  std::vector<std::uint8_t> grid(width * height, 0);
  std::copy(bytes.begin(), bytes.end(), grid.begin());
  auto img = image_from_grid(grid, height, width);
  img.source = ImageSource{bytes.size(), width, height};
  return img;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Pixel value quantized back to a byte, rounding half up. The resize leaves
/// exact halves a few ulps low, so anything within 1e-9 of a half counts as one.
inline std::uint8_t to_byte(double v) {
  const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::min(255.0, std::floor(scaled + 0.5 + 1e-9)));
}

// ---------------------------------------------------------------------------
// Perturbation masks

class PerturbMask {
 public:
  PerturbMask() = default;
  explicit PerturbMask(const std::array<bool, kImagePixels>& allowed)
      : allowed_(allowed),
        count_(static_cast<std::size_t>(
            std::count(allowed.begin(), allowed.end(), true))) {}

  bool allowed(std::size_t pixel) const { return allowed_[pixel]; }
  std::size_t allowed_count() const noexcept { return count_; }
  const std::array<bool, kImagePixels>& grid() const noexcept { return allowed_; }

  static PerturbMask full() {
    std::array<bool, kImagePixels> a;
    a.fill(true);
    return PerturbMask(a);
  }

 private:
  std::array<bool, kImagePixels> allowed_{};
  std::size_t count_ = 0;
};

struct ZeroRegion {};
struct TrailingFraction {
  double fraction = 0.25;
};
struct FullMask {};
using MaskPolicy = std::variant<ZeroRegion, TrailingFraction, FullMask>;

class EmptyMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline PerturbMask derive_mask(const GrayImage& img, const MaskPolicy& policy) {
  std::array<bool, kImagePixels> a{};
  if (std::holds_alternative<ZeroRegion>(policy)) {
    for (std::size_t p = 0; p < kImagePixels; ++p) a[p] = img[p] == 0.0;
  } else if (auto* tf = std::get_if<TrailingFraction>(&policy)) {
    if (!(tf->fraction > 0.0 && tf->fraction <= 1.0))
      throw std::invalid_argument("trailing fraction must be in (0,1]");
    auto rows = static_cast<std::size_t>(
        std::ceil(tf->fraction * static_cast<double>(kImageSide)));
    rows = std::min(rows, kImageSide);
    for (std::size_t p = (kImageSide - rows) * kImageSide; p < kImagePixels; ++p)
      a[p] = true;
  } else {
    a.fill(true);
  }
  PerturbMask mask(a);
  if (mask.allowed_count() == 0)
    throw EmptyMaskError("derive_mask: policy leaves no pixel perturbable");
  return mask;
}

inline std::string to_string(const MaskPolicy& policy) {
  if (std::holds_alternative<ZeroRegion>(policy)) return "zero-region";
  if (auto* tf = std::get_if<TrailingFraction>(&policy)) {
    std::ostringstream os;
    os << "trailing-fraction(" << tf->fraction << ')';
    return os.str();
  }
  return "full";
}

/// Accepts "zero-region", "full", "trailing-fraction(f)" or "trailing-fraction:f".
inline MaskPolicy parse_mask_policy(const std::string& text) {
  if (text == "zero-region") return ZeroRegion{};
  if (text == "full") return FullMask{};
  const std::string prefix = "trailing-fraction";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size() + 1) {
    std::string arg = text.substr(prefix.size() + 1);
    if (!arg.empty() && arg.back() == ')') arg.pop_back();
    std::size_t used = 0;
    double f = std::stod(arg, &used);
    if (used == arg.size()) return TrailingFraction{f};
  }
  throw std::invalid_argument("unknown mask policy '" + text + "'");
}

}  // namespace advgrid
