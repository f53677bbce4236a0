#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/imgfeat.hpp"
#include "topsal/sparsecode.hpp"

namespace topsal {

inline constexpr int kPyramidLevels = 3;

constexpr int pyramid_block_count(int levels) {
  int n = 0;
  for (int l = 0; l < levels; ++l) n += (1 << l) * (1 << l);
  return n;
}

inline constexpr int kPyramidBlocks = pyramid_block_count(kPyramidLevels);  // 1 + 4 + 16

/// Spatial pyramid over the image: level l splits it into 2^l x 2^l equal
/// rectangles. Blocks are numbered level by level, row-major within a level.
struct PyramidLayout {
  int levels = kPyramidLevels;
  int width = 0;
  int height = 0;
  std::vector<std::vector<int>> block_patches;  // block -> patch indices (ascending)
  std::vector<std::vector<int>> patch_blocks;   // patch -> one block per level

  int block_count() const { return static_cast<int>(block_patches.size()); }
};

inline int pyramid_level_offset(int level) { return pyramid_block_count(level); }

/// Cell index along one axis for a patch centre; a centre exactly on a cell
/// boundary belongs to the lower-index cell.
inline int pyramid_cell(int centre, int extent, int cells) {
  const long v = (static_cast<long>(centre) * cells + extent - 1) / extent - 1;
  return static_cast<int>(std::clamp<long>(v, 0, cells - 1));
}

inline PyramidLayout assign_blocks(const PatchGrid& grid, int width, int height, int levels = kPyramidLevels) {
  if (grid.count() < 1) throw DimensionError("empty patch grid");
  if (levels < 1) throw DimensionError("pyramid needs at least one level");
  PyramidLayout layout;
  layout.levels = levels;
  layout.width = width;
  layout.height = height;
  layout.block_patches.resize(static_cast<std::size_t>(pyramid_block_count(levels)));
  layout.patch_blocks.resize(static_cast<std::size_t>(grid.count()));
  for (int j = 0; j < grid.count(); ++j) {
    const int cx = grid.origin_x(j) + grid.patch_size / 2;
    const int cy = grid.origin_y(j) + grid.patch_size / 2;
    for (int l = 0; l < levels; ++l) {
      const int cells = 1 << l;
      const int b = pyramid_level_offset(l) + pyramid_cell(cy, height, cells) * cells + pyramid_cell(cx, width, cells);
      layout.block_patches[static_cast<std::size_t>(b)].push_back(j);
      layout.patch_blocks[static_cast<std::size_t>(j)].push_back(b);
    }
  }
  return layout;
}

/// Per-block, per-atom maximum of |coefficient| over the block's patches.
inline std::vector<Eigen::VectorXd> max_pool(std::span<const SparseCode> codes, const PyramidLayout& layout) {
  if (codes.size() != layout.patch_blocks.size()) throw DimensionError("one code per patch required");
  const int r = codes.empty() ? 0 : codes.front().dict_size;
  std::vector<Eigen::VectorXd> pooled(static_cast<std::size_t>(layout.block_count()), Eigen::VectorXd::Zero(r));
  for (std::size_t j = 0; j < codes.size(); ++j) {
    if (codes[j].dict_size != r) throw DimensionError("codes disagree on dictionary size");
    for (int b : layout.patch_blocks[j]) {
      Eigen::VectorXd& x = pooled[static_cast<std::size_t>(b)];
      for (std::size_t p = 0; p < codes[j].support.size(); ++p) {
        const int m = codes[j].support[p];
        x[m] = std::max(x[m], std::abs(codes[j].coeffs[p]));
      }
    }
  }
  return pooled;
}

/// Vertical concatenation of the block vectors, L2-normalised (zero stays zero).
inline Eigen::VectorXd concat_normalize(std::span<const Eigen::VectorXd> pooled) {
  Eigen::Index total = 0;
  for (const auto& x : pooled) total += x.size();
  Eigen::VectorXd v(total);
  Eigen::Index at = 0;
  for (const auto& x : pooled) {
    v.segment(at, x.size()) = x;
    at += x.size();
  }
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

/// Mean of the `nu` largest values (all of them when fewer); 0 for none.
inline double top_nu_mean(std::vector<double> values, int nu) {
  if (values.empty() || nu < 1) return 0.0;
  const auto take = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(nu), values.size()));
  std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(take), values.end(), std::greater<>());
  double s = 0.0;
  for (std::size_t i = 0; i < take; ++i) s += values[i];
  return s / static_cast<double>(take);
}

struct BlockSaliency {
  std::vector<double> weights;  // one per block, sum over categories of top-nu means
  int nu = 2;
};

/// maps[n][j] is category n's saliency at patch j.
inline BlockSaliency block_saliency(std::span<const std::vector<double>> maps, const PyramidLayout& layout,
                                    int nu = 2) {
  BlockSaliency bs;
  bs.nu = nu;
  bs.weights.assign(static_cast<std::size_t>(layout.block_count()), 0.0);
  for (const auto& map : maps) {
    if (map.size() != layout.patch_blocks.size()) throw DimensionError("saliency map does not match grid");
    for (int b = 0; b < layout.block_count(); ++b) {
      std::vector<double> vals;
      for (int j : layout.block_patches[static_cast<std::size_t>(b)]) vals.push_back(map[static_cast<std::size_t>(j)]);
      bs.weights[static_cast<std::size_t>(b)] += top_nu_mean(std::move(vals), nu);
    }
  }
  return bs;
}

/// Scales every block vector by its block saliency.
inline std::vector<Eigen::VectorXd> saliency_weighted_pool(std::span<const Eigen::VectorXd> pooled,
                                                           const BlockSaliency& bs) {
  if (pooled.size() != bs.weights.size()) throw DimensionError("block count mismatch");
  std::vector<Eigen::VectorXd> out(pooled.begin(), pooled.end());
  for (std::size_t b = 0; b < out.size(); ++b) out[b] *= bs.weights[b];
  return out;
}

}  // namespace topsal
