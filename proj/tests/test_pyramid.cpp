#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>

#include "oracles.hpp"
#include "topsal/pyramid.hpp"
#include "topsal/random.hpp"

using namespace topsal;

namespace {

SparseCode code_of(std::vector<int> idx, std::vector<double> val, int r) { return SparseCode(idx, val, r); }

std::vector<SparseCode> random_codes(Rng& rng, int t, int r) {
  std::vector<SparseCode> out;
  for (int j = 0; j < t; ++j) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(r);
    for (int m = 0; m < r; ++m)
      if (rng.uniform() < 0.3) z[m] = rng.normal();
    out.push_back(SparseCode::from_dense(z));
  }
  return out;
}

}  // namespace

TEST(AssignBlocks, SinglePatchLandsInOneBlockPerLevel) {
  const PatchGrid g = build_patch_grid(64, 64);
  ASSERT_EQ(g.count(), 1);
  const PyramidLayout L = assign_blocks(g, 64, 64);
  EXPECT_EQ(L.block_count(), 21);
  ASSERT_EQ(L.patch_blocks[0].size(), 3u);
  EXPECT_EQ(L.patch_blocks[0][0], 0);
  EXPECT_GE(L.patch_blocks[0][1], 1);
  EXPECT_LE(L.patch_blocks[0][1], 4);
  EXPECT_GE(L.patch_blocks[0][2], 5);
  EXPECT_LE(L.patch_blocks[0][2], 20);
}

TEST(AssignBlocks, FourByFourGridFillsLevelTwo) {
  const PatchGrid g = build_patch_grid(64, 64, 16, 16);
  ASSERT_EQ(g.rows, 4);
  ASSERT_EQ(g.cols, 4);
  const PyramidLayout L = assign_blocks(g, 64, 64);
  for (int b = 5; b < 21; ++b) EXPECT_EQ(L.block_patches[static_cast<std::size_t>(b)].size(), 1u) << b;
  for (int b = 1; b < 5; ++b) EXPECT_EQ(L.block_patches[static_cast<std::size_t>(b)].size(), 4u) << b;
  EXPECT_EQ(L.block_patches[0].size(), 16u);
  // Patch j at (row, col) belongs to level-2 block 5 + row * 4 + col.
  for (int j = 0; j < 16; ++j) EXPECT_EQ(L.patch_blocks[static_cast<std::size_t>(j)][2], 5 + g.row_of(j) * 4 + g.col_of(j));
}

TEST(AssignBlocks, EveryPatchInExactlyOneBlockPerLevel) {
  for (auto [w, h] : {std::pair{256, 256}, std::pair{200, 120}, std::pair{97, 301}}) {
    const PatchGrid g = build_patch_grid(w, h);
    const PyramidLayout L = assign_blocks(g, w, h);
    std::size_t total = 0;
    for (const auto& b : L.block_patches) total += b.size();
    EXPECT_EQ(total, 3u * static_cast<std::size_t>(g.count()));
    for (int j = 0; j < g.count(); ++j) {
      const auto& pb = L.patch_blocks[static_cast<std::size_t>(j)];
      ASSERT_EQ(pb.size(), 3u);
      for (int l = 0; l < 3; ++l) {
        EXPECT_GE(pb[static_cast<std::size_t>(l)], pyramid_level_offset(l));
        EXPECT_LT(pb[static_cast<std::size_t>(l)], pyramid_level_offset(l + 1));
      }
      // Nested: the level-2 cell lies inside the level-1 cell.
      const int c1 = pb[1] - 1, c2 = pb[2] - 5;
      EXPECT_EQ((c2 / 4) / 2, c1 / 2);
      EXPECT_EQ((c2 % 4) / 2, c1 % 2);
    }
  }
}

TEST(AssignBlocks, BoundaryCentreGoesToLowerBlock) {
  EXPECT_EQ(pyramid_cell(128, 256, 2), 0);
  EXPECT_EQ(pyramid_cell(129, 256, 2), 1);
  EXPECT_EQ(pyramid_cell(64, 256, 4), 0);
  EXPECT_EQ(pyramid_cell(0, 256, 4), 0);
  EXPECT_EQ(pyramid_cell(256, 256, 4), 3);
}

TEST(MaxPool, AbsoluteValueMaximum) {
  const PatchGrid g = build_patch_grid(64, 80, 64, 16);
  ASSERT_EQ(g.count(), 2);
  const PyramidLayout L = assign_blocks(g, 64, 80);
  std::vector<SparseCode> codes{code_of({0}, {0.5}, 3), code_of({0}, {-0.9}, 3)};
  const auto pooled = max_pool(codes, L);
  EXPECT_DOUBLE_EQ(pooled[0][0], 0.9);
  EXPECT_DOUBLE_EQ(pooled[0][1], 0.0);
}

TEST(MaxPool, OnePatchPerBlockIsAbsCode) {
  Rng rng(4);
  const PatchGrid g = build_patch_grid(64, 64, 16, 16);
  const PyramidLayout L = assign_blocks(g, 64, 64);
  const auto codes = random_codes(rng, g.count(), 7);
  const auto pooled = max_pool(codes, L);
  for (int j = 0; j < g.count(); ++j) {
    const int b = L.patch_blocks[static_cast<std::size_t>(j)][2];
    EXPECT_EQ(pooled[static_cast<std::size_t>(b)], codes[static_cast<std::size_t>(j)].dense().cwiseAbs());
  }
}

TEST(MaxPool, PermutationInvariantAndMonotone) {
  Rng rng(9);
  const PatchGrid g = build_patch_grid(128, 128);
  const PyramidLayout L = assign_blocks(g, 128, 128);
  const int r = 6;
  auto codes = random_codes(rng, g.count(), r);
  const auto base = max_pool(codes, L);
  // Brute-force oracle: per block, per atom maximum over member patches.
  for (int b = 0; b < L.block_count(); ++b) {
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(r);
    for (int j : L.block_patches[static_cast<std::size_t>(b)])
      ref = ref.cwiseMax(codes[static_cast<std::size_t>(j)].dense().cwiseAbs());
    EXPECT_EQ(base[static_cast<std::size_t>(b)], ref);
    EXPECT_GE(base[static_cast<std::size_t>(b)].minCoeff(), 0.0);
  }
  // The root block holds every patch, so its pool ignores patch order.
  auto shuffled = codes;
  rng.shuffle(shuffled);
  EXPECT_EQ(max_pool(shuffled, L)[0], base[0]);
  // Enlarging a coefficient never decreases any pooled entry.
  auto bigger = codes;
  bigger[0] = SparseCode::from_dense(codes[0].dense() * 3.0 + Eigen::VectorXd::Constant(r, 0.1));
  const auto grown = max_pool(bigger, L);
  for (std::size_t b = 0; b < grown.size(); ++b)
    EXPECT_TRUE((grown[b].array() >= base[b].array()).all());
}

TEST(MaxPool, EmptyBlockAndSizeMismatch) {
  // A 1-patch grid leaves most level-1/2 blocks empty.
  const PatchGrid g = build_patch_grid(64, 64);
  const PyramidLayout L = assign_blocks(g, 64, 64);
  std::vector<SparseCode> codes{code_of({1}, {2.0}, 4)};
  const auto pooled = max_pool(codes, L);
  int empty = 0;
  for (const auto& x : pooled) empty += x.isZero(0.0) ? 1 : 0;
  EXPECT_EQ(empty, 18);
  const PatchGrid g2 = build_patch_grid(64, 80, 64, 16);
  const PyramidLayout L2 = assign_blocks(g2, 64, 80);
  std::vector<SparseCode> bad{code_of({0}, {1.0}, 4), code_of({0}, {1.0}, 5)};
  EXPECT_THROW(max_pool(bad, L2), DimensionError);
}

TEST(ConcatNormalize, Examples) {
  std::vector<Eigen::VectorXd> pooled(21, Eigen::VectorXd::Zero(3));
  EXPECT_TRUE(concat_normalize(pooled).isZero(0.0));
  EXPECT_EQ(concat_normalize(pooled).size(), 63);
  pooled[4][2] = 1.0;
  const Eigen::VectorXd v = concat_normalize(pooled);
  EXPECT_EQ(v[14], 1.0);
  EXPECT_DOUBLE_EQ(v.norm(), 1.0);
  Rng rng(2);
  for (auto& x : pooled) x = oracle::random_vector(rng, 3).cwiseAbs();
  EXPECT_NEAR(concat_normalize(pooled).norm(), 1.0, 1e-12);
}

TEST(BlockSaliency, TopNuMeanExamples) {
  EXPECT_DOUBLE_EQ(top_nu_mean({0.9, 0.8, 0.1}, 2), 0.85);
  EXPECT_DOUBLE_EQ(top_nu_mean({0.6}, 2), 0.6);
  EXPECT_DOUBLE_EQ(top_nu_mean({}, 2), 0.0);
}

TEST(BlockSaliency, TopNuMeanMatchesSortOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(12));
    const int nu = 1 + static_cast<int>(rng.index(4));
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform();
    std::vector<double> s = v;
    std::sort(s.begin(), s.end(), std::greater<>());
    const int k = std::min(nu, n);
    const double ref = std::accumulate(s.begin(), s.begin() + k, 0.0) / k;
    EXPECT_NEAR(top_nu_mean(v, nu), ref, 1e-15);
    rng.shuffle(v);
    EXPECT_NEAR(top_nu_mean(v, nu), ref, 1e-15);
  }
}

TEST(BlockSaliency, SumsOverCategories) {
  const PatchGrid g = build_patch_grid(64, 96, 64, 16);
  ASSERT_EQ(g.count(), 3);
  const PyramidLayout L = assign_blocks(g, 64, 96);
  std::vector<std::vector<double>> maps{{0.9, 0.8, 0.1}};
  auto bs = block_saliency(maps, L, 2);
  EXPECT_DOUBLE_EQ(bs.weights[0], 0.85);
  maps.push_back({0.2, 0.2, 0.1});
  bs = block_saliency(maps, L, 2);
  EXPECT_DOUBLE_EQ(bs.weights[0], 0.85 + 0.2);
  for (double w : bs.weights) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 2.0);
  }
  std::vector<std::vector<double>> bad{{0.1, 0.2}};
  EXPECT_THROW(block_saliency(bad, L, 2), DimensionError);
}

TEST(SaliencyWeightedPool, WeightRules) {
  Rng rng(5);
  std::vector<Eigen::VectorXd> pooled(21);
  for (auto& x : pooled) x = oracle::random_vector(rng, 4).cwiseAbs();
  BlockSaliency zero{std::vector<double>(21, 0.0), 2};
  EXPECT_TRUE(concat_normalize(saliency_weighted_pool(pooled, zero)).isZero(0.0));
  BlockSaliency one{std::vector<double>(21, 1.0), 2};
  EXPECT_EQ(concat_normalize(saliency_weighted_pool(pooled, one)), concat_normalize(pooled));
  BlockSaliency w{std::vector<double>(21), 2};
  for (auto& x : w.weights) x = rng.uniform();
  BlockSaliency w2 = w;
  for (auto& x : w2.weights) x *= 2.0;
  const Eigen::VectorXd a = concat_normalize(saliency_weighted_pool(pooled, w));
  const Eigen::VectorXd b = concat_normalize(saliency_weighted_pool(pooled, w2));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_GE(a.minCoeff(), 0.0);
  BlockSaliency wrong{std::vector<double>(20, 1.0), 2};
  EXPECT_THROW(saliency_weighted_pool(pooled, wrong), DimensionError);
}
