#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/image.hpp"
#include "topsal/random.hpp"

namespace topsal {

// Two-texture corpus: category 0 is an oriented diagonal grating, category 1
// a field of round blobs. Both sit inside one rectangle per image on a
// background of axis-aligned clutter, so the descriptors separate by
// orientation content.

struct SyntheticOptions {
  int size = 256;
  int train_per_category = 40;
  int test_per_category = 20;
  int background_train = 10;
  int background_test = 10;
  std::uint64_t seed = 7;
};

inline const std::vector<std::string>& synthetic_category_names() {
  static const std::vector<std::string> names{"stripes", "blobs"};
  return names;
}

struct SyntheticImage {
  std::string name;
  GrayImage image;
  GrayImage mask;           // 255 inside the object rectangle
  std::vector<int> labels;  // empty for background images
  bool train = true;
};

namespace detail {

inline std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

inline void paint_clutter(GrayImage& img, Rng& rng) {
  std::fill(img.pixels.begin(), img.pixels.end(), static_cast<std::uint8_t>(60 + rng.index(120)));
  const int count = 60 + static_cast<int>(rng.index(20));
  for (int i = 0; i < count; ++i) {
    const int w = 8 + static_cast<int>(rng.index(56));
    const int h = 8 + static_cast<int>(rng.index(56));
    const int x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(img.width)));
    const int y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(img.height)));
    const auto v = static_cast<std::uint8_t>(20 + rng.index(216));
    for (int y = y0; y < std::min(img.height, y0 + h); ++y)
      for (int x = x0; x < std::min(img.width, x0 + w); ++x) img.at(x, y) = v;
  }
}

inline void paint_stripes(GrayImage& img, int x0, int y0, int w, int h, Rng& rng) {
  const double theta = std::numbers::pi / 4.0 + rng.uniform(-0.15, 0.15);
  const double period = rng.uniform(6.0, 10.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mean = rng.uniform(100.0, 156.0);
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x)
      img.at(x, y) = clamp_u8(mean + 80.0 * std::sin(2.0 * std::numbers::pi * (x * c + y * s) / period + phase));
}

inline void paint_blobs(GrayImage& img, int x0, int y0, int w, int h, Rng& rng) {
  const double base = rng.uniform(100.0, 156.0);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) img.at(x, y) = clamp_u8(base);
  const int count = w * h / 60;
  for (int i = 0; i < count; ++i) {
    const double cx = x0 + rng.uniform(0.0, w);
    const double cy = y0 + rng.uniform(0.0, h);
    const double rad = rng.uniform(3.0, 7.0);
    const std::uint8_t v = clamp_u8(rng.uniform() < 0.5 ? base - 90.0 : base + 90.0);
    for (int y = std::max(y0, static_cast<int>(cy - rad)); y <= std::min(y0 + h - 1, static_cast<int>(cy + rad)); ++y)
      for (int x = std::max(x0, static_cast<int>(cx - rad)); x <= std::min(x0 + w - 1, static_cast<int>(cx + rad)); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad) img.at(x, y) = v;
  }
}

inline void add_noise(GrayImage& img, Rng& rng, double sigma) {
  for (auto& p : img.pixels) p = clamp_u8(p + sigma * rng.normal());
}

}  // namespace detail

/// Renders one image; `category` < 0 yields a background-only image.
inline SyntheticImage render_synthetic(int category, int size, Rng& rng) {
  if (size < 160) throw DimensionError("synthetic images need at least 160 pixels per side");
  SyntheticImage out;
  out.image = GrayImage(size, size);
  out.mask = GrayImage(size, size, 0);
  detail::paint_clutter(out.image, rng);
  if (category >= 0) {
    const int lo = size * 3 / 8, hi = size * 9 / 16;  // 96..144 at 256
    const int w = lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(hi - lo + 1)));
    const int h = lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(hi - lo + 1)));
    const int x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(size - w + 1)));
    const int y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(size - h + 1)));
    if (category == 0) detail::paint_stripes(out.image, x0, y0, w, h, rng);
    else detail::paint_blobs(out.image, x0, y0, w, h, rng);
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) out.mask.at(x, y) = 255;
    out.labels = {category};
  }
  detail::add_noise(out.image, rng, 3.0);
  return out;
}

/// Training images first (category 0, category 1, background), then test.
inline std::vector<SyntheticImage> make_synthetic_corpus(const SyntheticOptions& opt = {}) {
  Rng rng(opt.seed);
  std::vector<SyntheticImage> out;
  const auto add = [&](int category, int count, bool train, const std::string& stem) {
    for (int i = 0; i < count; ++i) {
      SyntheticImage s = render_synthetic(category, opt.size, rng);
      s.train = train;
      s.name = std::string(train ? "train_" : "test_") + stem + "_" + std::to_string(i);
      out.push_back(std::move(s));
    }
  };
  for (bool train : {true, false}) {
    const int per = train ? opt.train_per_category : opt.test_per_category;
    add(0, per, train, synthetic_category_names()[0]);
    add(1, per, train, synthetic_category_names()[1]);
    add(-1, train ? opt.background_train : opt.background_test, train, "background");
  }
  return out;
}

/// Writes images, masks and train.csv / test.csv manifests into `dir`.
inline void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticOptions& opt = {}) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  const auto corpus = make_synthetic_corpus(opt);
  std::ofstream train(dir / "train.csv"), test(dir / "test.csv");
  if (!train || !test) throw IoError("cannot write manifests in " + dir.string());
  for (auto* m : {&train, &test}) {
    *m << "# categories: " << synthetic_category_names()[0] << ";" << synthetic_category_names()[1] << "\n";
    *m << "image,mask,labels\n";
  }
  for (const auto& s : corpus) {
    const std::string img = "images/" + s.name + ".pgm";
    const std::string mask = "masks/" + s.name + ".pgm";
    write_pgm((dir / img).string(), s.image);
    write_pgm((dir / mask).string(), s.mask);
    std::string labels;
    for (int l : s.labels) labels += (labels.empty() ? "" : ";") + synthetic_category_names()[static_cast<std::size_t>(l)];
    (s.train ? train : test) << img << "," << mask << "," << labels << "\n";
  }
}

}  // namespace topsal
