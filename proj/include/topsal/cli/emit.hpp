#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/eval.hpp"
#include "topsal/image.hpp"
#include "topsal/pipeline.hpp"

namespace topsal::cli {

inline std::uint16_t quantize16(double s) {
  return static_cast<std::uint16_t>(std::lround(65535.0 * std::clamp(s, 0.0, 1.0)));
}

inline void write_pixel_map(const std::filesystem::path& path, const PixelMap& map) {
  std::vector<std::uint16_t> q(map.values.size());
  std::transform(map.values.begin(), map.values.end(), q.begin(), quantize16);
  write_pgm16(path.string(), map.width, map.height, q);
}

inline PixelMap read_pixel_map(const std::filesystem::path& path) {
  const PgmData pgm = read_pgm(path.string());
  PixelMap out{pgm.width, pgm.height, std::vector<double>(pgm.samples.size())};
  for (std::size_t i = 0; i < pgm.samples.size(); ++i) out.values[i] = pgm.samples[i] / static_cast<double>(pgm.maxval);
  return out;
}

inline void write_patch_csv(const std::filesystem::path& path, const SaliencyMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "row,col,saliency\n" << std::setprecision(17);
  for (int j = 0; j < map.grid.count(); ++j)
    out << j / map.grid.cols << ',' << j % map.grid.cols << ',' << map.values[static_cast<std::size_t>(j)] << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

/// Writes `<stem>.pgm` (pixel map) and `<stem>.csv` (patch map).
inline void emit_saliency(const std::filesystem::path& stem, const SaliencyMap& map, int width, int height) {
  write_pixel_map(stem.string() + ".pgm", patch_to_pixel(map.values, map.grid, width, height));
  write_patch_csv(stem.string() + ".csv", map);
}

/// Label image as 8-bit PGM: 0 background, n + 1 for category n.
inline void write_label_image(const std::filesystem::path& path, const LabelImage& img) {
  std::vector<std::uint8_t> px(img.labels.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(std::clamp(img.labels[i], 0, 255));
  write_pgm8(path.string(), img.width, img.height, px);
}

}  // namespace topsal::cli
