#pragma once

// Labeled image corpora: directory ingestion, export, the synthetic texture
// stand-in corpus, and stratified splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advgrid/image.hpp"
#include "advgrid/pgm.hpp"

namespace advgrid {

namespace fs = std::filesystem;

struct LabeledDataset {
  std::vector<GrayImage> examples;  // every example carries a label
  std::vector<std::string> class_names;
  std::uint64_t split_seed = 0;

  std::size_t size() const noexcept { return examples.size(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& e : examples) ++counts.at(*e.label);
    return counts;
  }
};

struct LoadReport {
  std::size_t loaded = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // path, reason
};

/// One subdirectory per class (sorted by name); PGM (P5) or PNG files within.
inline LabeledDataset load_image_dir(const fs::path& root,
                                     LoadReport* report = nullptr,
                                     std::ostream* log = &std::clog) {
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset directory not found: " + root.string());

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  LabeledDataset ds;
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      auto ext = entry.path().extension().string();
      for (auto& c : ext) c = static_cast<char>(std::tolower(c));
      if (ext == ".pgm" || ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<GrayImage> usable;
    for (const auto& file : files) {
      try {
        auto grid = io::read_grayscale(file);
        usable.push_back(image_from_grid(grid.pixels, grid.height, grid.width));
      } catch (const std::exception& e) {
        rep.skipped.emplace_back(file.string(), e.what());
        if (log) *log << "warning: skipping " << file.string() << ": " << e.what() << '\n';
      }
    }
    if (usable.empty()) continue;
    const std::size_t label = ds.class_names.size();
    ds.class_names.push_back(dir.filename().string());
    for (auto& img : usable) {
      img.label = label;
      ds.examples.push_back(std::move(img));
    }
  }
  rep.loaded = ds.examples.size();
  if (ds.class_names.empty())
    throw std::runtime_error("no usable classes under " + root.string());
  return ds;
}

/// Writes <class>/<index>.pgm files plus manifest.txt
/// ("relative-path class-index source-byte-length" per line).
inline void export_dataset(const LabeledDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& name : ds.class_names) fs::create_directories(dir / name);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  std::vector<std::size_t> next(ds.class_names.size(), 0);
  for (const auto& img : ds.examples) {
    const std::size_t c = *img.label;
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << next[c]++ << ".pgm";
    fs::path rel = fs::path(ds.class_names[c]) / name.str();
    io::write_pgm(dir / rel, img);
    manifest << rel.generic_string() << ' ' << c << ' '
             << (img.source ? img.source->byte_length : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct TextureFamily {
  double orientation;  // radians
  double frequency;    // cycles across the image
  std::size_t padding_rows;
};

/// Family c: one of five orientations crossed with one of five frequencies,
/// and a zero-padding band of 1..5 trailing rows.
inline TextureFamily texture_family(std::size_t c) {
  return TextureFamily{
      std::numbers::pi * static_cast<double>(c % 5) / 5.0,
      2.0 + 1.5 * static_cast<double>(c / 5),
      1 + (c * 3) % 5,
  };
}

// Dim, low-contrast textures: troughs clip to exact zeros, like the sparse
// uninitialized regions of real malware images.
inline constexpr double kSynthBase = 0.05;
inline constexpr double kSynthAmplitude = 0.15;
inline constexpr double kSynthNoise = 0.03;

inline LabeledDataset synth_corpus(std::uint64_t seed, std::size_t per_class) {
  if (per_class < 2) throw std::invalid_argument("synth_corpus: per_class must be >= 2");
  LabeledDataset ds;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, kSynthNoise);
  std::normal_distribution<double> jitter(0.0, 0.05);

  for (std::size_t c = 0; c < kNumFamilies; ++c) {
    std::ostringstream name;
    name << "family_" << std::setw(2) << std::setfill('0') << c;
    ds.class_names.push_back(name.str());
  }
  for (std::size_t c = 0; c < kNumFamilies; ++c) {
    const auto fam = texture_family(c);
    for (std::size_t n = 0; n < per_class; ++n) {
      const double phi = phase(rng);
      const double angle = fam.orientation + jitter(rng);
      const double kx = std::cos(angle) * fam.frequency / kImageSide;
      const double ky = std::sin(angle) * fam.frequency / kImageSide;
      std::vector<double> px(kImagePixels, 0.0);
      const std::size_t body_rows = kImageSide - fam.padding_rows;
      for (std::size_t y = 0; y < body_rows; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double wave = std::sin(2.0 * std::numbers::pi *
                                           (kx * static_cast<double>(x) +
                                            ky * static_cast<double>(y)) +
                                       phi);
          double v = kSynthBase + kSynthAmplitude * wave + noise(rng);
          v = std::clamp(v, 0.0, 1.0);
          // Stored at 8-bit resolution so a PGM round trip is exact.
          px[y * kImageSide + x] = std::round(v * 255.0) / 255.0;
        }
      }
      auto img = GrayImage::from_pixels(std::move(px), c);
      img.source = ImageSource{0, kImageSide, kImageSide};
      const auto zeros = static_cast<std::size_t>(
          std::count(img.pixels.values().begin(), img.pixels.values().end(), 0.0));
      if (zeros < kImageSide)
        throw std::logic_error("synth_corpus: padding band missing");
      ds.examples.push_back(std::move(img));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split

struct Split {
  LabeledDataset train;
  LabeledDataset test;
};

/// Stratified: each class contributes round(fraction * size) examples to train.
inline Split split(const LabeledDataset& ds, double train_fraction,
                   std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split: train fraction must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class.at(*ds.examples[i].label).push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<char> in_train(ds.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2)
      throw std::invalid_argument("split: class '" + ds.class_names[c] +
                                  "' has fewer than 2 examples");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(
        std::lround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n_train; ++k) in_train[idx[k]] = 1;
  }

  Split s;
  s.train.class_names = s.test.class_names = ds.class_names;
  s.train.split_seed = s.test.split_seed = seed;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (in_train[i] ? s.train : s.test).examples.push_back(ds.examples[i]);
  return s;
}

}  // namespace advgrid
