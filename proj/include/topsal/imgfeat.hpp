#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/image.hpp"

namespace topsal {

inline constexpr int kDescriptorCells = 4;
inline constexpr int kDescriptorBins = 8;
inline constexpr int kDescriptorDim = kDescriptorCells * kDescriptorCells * kDescriptorBins;

/// 128-d gradient-orientation histogram of one patch (4x4 cells x 8 bins).
/// Entry (cell_row * 4 + cell_col) * 8 + bin. Either all-zero or unit norm.
using Descriptor = Eigen::VectorXd;

/// Fixed-size square patches laid on a regular lattice. Patches that would
/// cross the image border are dropped, never padded.
struct PatchGrid {
  int patch_size = 64;
  int stride = 16;
  int rows = 0;
  int cols = 0;

  int count() const { return rows * cols; }
  int origin_x(int j) const { return (j % cols) * stride; }
  int origin_y(int j) const { return (j / cols) * stride; }
  int row_of(int j) const { return j / cols; }
  int col_of(int j) const { return j % cols; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

inline PatchGrid build_patch_grid(int width, int height, int patch_size = 64, int stride = 16) {
  if (patch_size < 1 || stride < 1) throw DimensionError("patch size and stride must be positive");
  if (patch_size < stride) throw DimensionError("patch size must be at least the stride");
  if (width < patch_size || height < patch_size) {
    throw DimensionError("image " + std::to_string(width) + "x" + std::to_string(height) +
                         " is smaller than patch size " + std::to_string(patch_size));
  }
  PatchGrid g;
  g.patch_size = patch_size;
  g.stride = stride;
  g.rows = (height - patch_size) / stride + 1;
  g.cols = (width - patch_size) / stride + 1;
  return g;
}

/// Simplified dense SIFT on the square patch at (x0, y0). Gradients are
/// central differences clamped to the patch, so the result depends only on
/// the patch's own pixels. Hard orientation binning, L2 normalisation,
/// clipping at 0.2, renormalisation.
inline Descriptor dense_descriptor(const GrayImage& img, int x0, int y0, int size) {
  if (size < kDescriptorCells || x0 < 0 || y0 < 0 || x0 + size > img.width || y0 + size > img.height) {
    throw DimensionError("patch out of image bounds");
  }
  Descriptor d = Descriptor::Zero(kDescriptorDim);
  const auto px = [&](int x, int y) {
    x = std::clamp(x, 0, size - 1);
    y = std::clamp(y, 0, size - 1);
    return static_cast<double>(img.at(x0 + x, y0 + y));
  };
  constexpr double kBinWidth = 2.0 * std::numbers::pi / kDescriptorBins;
  for (int y = 0; y < size; ++y) {
    const int cell_row = y * kDescriptorCells / size;
    for (int x = 0; x < size; ++x) {
      const double dx = 0.5 * (px(x + 1, y) - px(x - 1, y));
      const double dy = 0.5 * (px(x, y + 1) - px(x, y - 1));
      if (dx == 0.0 && dy == 0.0) continue;
      const double mag = std::hypot(dx, dy);
      // Bin b is centred on angle b * 45 degrees.
      const double theta = std::atan2(dy, dx);
      int bin = static_cast<int>(std::floor(theta / kBinWidth + 0.5));
      bin = ((bin % kDescriptorBins) + kDescriptorBins) % kDescriptorBins;
      const int cell_col = x * kDescriptorCells / size;
      d[(cell_row * kDescriptorCells + cell_col) * kDescriptorBins + bin] += mag;
    }
  }
  const double n0 = d.norm();
  if (n0 == 0.0) return d;
  d /= n0;
  d = d.cwiseMin(0.2);
  d /= d.norm();
  return d;
}

inline Descriptor dense_descriptor(const GrayImage& img, const PatchGrid& grid, int j) {
  return dense_descriptor(img, grid.origin_x(j), grid.origin_y(j), grid.patch_size);
}

/// All patch descriptors of an image as columns of a 128 x t matrix.
inline Eigen::MatrixXd extract_descriptors(const GrayImage& img, const PatchGrid& grid) {
  Eigen::MatrixXd out(kDescriptorDim, grid.count());
  for (int j = 0; j < grid.count(); ++j) out.col(j) = dense_descriptor(img, grid, j);
  return out;
}

/// Binary per-pixel object mask (nonzero = object).
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
};

/// Object mask from a decoded mask image: any nonzero pixel when `value` is
/// negative, otherwise pixels equal to `value`.
inline BinaryMask mask_from_image(const GrayImage& img, int value = -1) {
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    m.bits[i] = value < 0 ? (img.pixels[i] != 0) : (img.pixels[i] == value);
  return m;
}

/// Per-patch ground truth, +1 (object) or -1.
using PatchLabelMap = std::vector<int>;

/// +1 iff at least `frac` of the patch's pixels are object pixels.
inline PatchLabelMap label_patches(const PatchGrid& grid, const BinaryMask& mask, int width, int height,
                                   double frac = 0.25) {
  if (mask.width != width || mask.height != height) throw DimensionError("mask size does not match image");
  // Summed-area table for O(1) patch counts.
  std::vector<long> sat(static_cast<std::size_t>(width + 1) * (height + 1), 0);
  const auto S = [&](int x, int y) -> long& { return sat[static_cast<std::size_t>(y) * (width + 1) + x]; };
  for (int y = 0; y < height; ++y) {
    long row = 0;
    for (int x = 0; x < width; ++x) {
      row += mask.at(x, y) ? 1 : 0;
      S(x + 1, y + 1) = S(x + 1, y) + row;
    }
  }
  const long area = static_cast<long>(grid.patch_size) * grid.patch_size;
  PatchLabelMap labels(grid.count());
  for (int j = 0; j < grid.count(); ++j) {
    const int x0 = grid.origin_x(j), y0 = grid.origin_y(j), s = grid.patch_size;
    const long inside = S(x0 + s, y0 + s) - S(x0, y0 + s) - S(x0 + s, y0) + S(x0, y0);
    labels[j] = static_cast<double>(inside) >= frac * static_cast<double>(area) ? 1 : -1;
  }
  return labels;
}

inline PatchLabelMap label_patches(const PatchGrid& grid, const BinaryMask& mask, double frac = 0.25) {
  return label_patches(grid, mask, mask.width, mask.height, frac);
}

}  // namespace topsal
