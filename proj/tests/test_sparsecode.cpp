#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "topsal/sparsecode.hpp"

namespace topsal {
namespace {

constexpr double kLambda = 0.15;

// Subgradient optimality of a lasso solution.
void expect_lasso_optimal(const Eigen::VectorXd& f, const Eigen::MatrixXd& D, const SparseCode& z, double lambda,
                          double tol) {
  const Eigen::VectorXd g = 2.0 * D.transpose() * (D * z.dense() - f);
  for (int m = 0; m < D.cols(); ++m) {
    const double c = z.at(m);
    if (c == 0.0) {
      EXPECT_LE(std::abs(g[m]), lambda + tol) << "inactive atom " << m;
    } else {
      EXPECT_NEAR(g[m], -lambda * (c > 0 ? 1.0 : -1.0), tol) << "active atom " << m;
    }
  }
}

TEST(SparseCode, FromDenseDropsZerosAndKeepsOrder) {
  Eigen::VectorXd v(5);
  v << 0.0, 1.5, 0.0, -2.0, 0.0;
  const SparseCode c = SparseCode::from_dense(v);
  EXPECT_EQ(c.support, (std::vector<int>{1, 3}));
  EXPECT_EQ(c.sparsity(), 2);
  EXPECT_EQ(c.dense(), v);
  EXPECT_DOUBLE_EQ(c.at(3), -2.0);
  EXPECT_DOUBLE_EQ(c.at(2), 0.0);
}

TEST(SparseCode, RejectsBrokenInvariants) {
  EXPECT_THROW(SparseCode({2, 1}, {1.0, 1.0}, 4), DimensionError);
  EXPECT_THROW(SparseCode({0}, {0.0}, 4), DimensionError);
  EXPECT_THROW(SparseCode({4}, {1.0}, 4), DimensionError);
}

TEST(CategoryDictionary, RequiresUnitAtoms) {
  Eigen::MatrixXd A(2, 2);
  A << 1, 0, 0, 2;
  EXPECT_THROW(CategoryDictionary(0, A), DimensionError);
  const auto D = CategoryDictionary::normalized(0, A);
  EXPECT_NEAR(D.atoms().col(1).norm(), 1.0, 1e-12);
  EXPECT_THROW(CategoryDictionary::normalized(0, Eigen::MatrixXd::Zero(2, 1)), DimensionError);
}

TEST(FeatureSign, ZeroFeatureGivesEmptyCode) {
  Rng rng(3);
  const auto D = CategoryDictionary(0, oracle::random_unit_atoms(rng, 8, 5));
  EXPECT_TRUE(feature_sign(Eigen::VectorXd::Zero(8), D, kLambda).empty());
}

TEST(FeatureSign, SingleAtomMatchesSoftThreshold) {
  Eigen::VectorXd f(3);
  f << 0.6, 0.0, 0.8;
  Eigen::MatrixXd D = f;
  const SparseCode z = feature_sign(f, D, kLambda);
  ASSERT_EQ(z.sparsity(), 1);
  EXPECT_EQ(z.support[0], 0);
  // Scalar oracle: argmin (1 - z)^2 + lambda |z| = soft_threshold(1, lambda / 2).
  EXPECT_NEAR(z.coeffs[0], oracle::soft_threshold(1.0, kLambda / 2.0), 1e-12);
  EXPECT_NEAR(z.coeffs[0], 0.925, 1e-12);
}

TEST(FeatureSign, DimensionMismatchThrows) {
  Rng rng(1);
  const auto D = CategoryDictionary(0, oracle::random_unit_atoms(rng, 8, 5));
  EXPECT_THROW(feature_sign(Eigen::VectorXd::Ones(7), D, kLambda), DimensionError);
}

TEST(FeatureSign, MatchesCoordinateDescentOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(8));
    const int r = 1 + static_cast<int>(rng.index(6));
    const Eigen::MatrixXd D = oracle::random_unit_atoms(rng, k, r);
    const Eigen::VectorXd f = oracle::random_vector(rng, k);
    const SparseCode z = feature_sign(f, D, kLambda);
    const Eigen::VectorXd ref = oracle::lasso_coordinate_descent(f, D, kLambda);
    EXPECT_LE(lasso_objective(f, D, z, kLambda), oracle::lasso_objective_dense(f, D, ref, kLambda) + 1e-6)
        << "trial " << trial;
    expect_lasso_optimal(f, D, z, kLambda, 1e-6);
  }
}

TEST(FeatureSign, HandlesDuplicateAtoms) {
  Rng rng(5);
  Eigen::MatrixXd D = oracle::random_unit_atoms(rng, 6, 4);
  Eigen::MatrixXd Dup(6, 8);
  Dup << D, D;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd f = oracle::random_vector(rng, 6);
    const SparseCode z = feature_sign(f, Dup, kLambda);
    const Eigen::VectorXd ref = oracle::lasso_coordinate_descent(f, Dup, kLambda);
    EXPECT_LE(lasso_objective(f, Dup, z, kLambda), oracle::lasso_objective_dense(f, Dup, ref, kLambda) + 1e-6);
    expect_lasso_optimal(f, Dup, z, kLambda, 1e-6);
  }
}

TEST(FeatureSign, DescriptorScaleProblem) {
  // Realistic size: nonnegative unit features against a 64-atom dictionary.
  Rng rng(11);
  Eigen::MatrixXd D = oracle::random_unit_atoms(rng, 128, 64).cwiseAbs();
  const auto dict = CategoryDictionary::normalized(0, D);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd f = oracle::random_vector(rng, 128).cwiseAbs();
    f.normalize();
    const SparseCode z = feature_sign(f, dict, kLambda);
    expect_lasso_optimal(f, dict.atoms(), z, kLambda, 1e-6);
  }
}

TEST(KMeans, IdenticalPointsGiveNormalisedPoint) {
  Eigen::VectorXd d(4);
  d << 1.0, 2.0, 0.0, 2.0;
  Eigen::MatrixXd pts = d.replicate(1, 7);
  const auto D = kmeans_init(pts, 1, 9, 10);
  ASSERT_EQ(D.size(), 1);
  EXPECT_TRUE(D.atoms().col(0).isApprox(d / d.norm(), 1e-12));
}

TEST(KMeans, SeparatedCloudsRecoverNormalisedMeans) {
  Rng rng(77);
  const int per = 40;
  Eigen::MatrixXd pts(3, 2 * per);
  Eigen::Vector3d ca(10, 0, 0), cb(0, 10, 1);
  for (int i = 0; i < per; ++i) {
    pts.col(i) = ca + 0.1 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    pts.col(per + i) = cb + 0.1 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  }
  // Direct per-cloud mean computation.
  const Eigen::Vector3d ma = pts.leftCols(per).rowwise().mean();
  const Eigen::Vector3d mb = pts.rightCols(per).rowwise().mean();
  const auto D = kmeans_init(pts, 2, 123, 50);
  const Eigen::Vector3d a0 = D.atoms().col(0), a1 = D.atoms().col(1);
  const bool first_is_a = (a0 - ma.normalized()).norm() < (a0 - mb.normalized()).norm();
  const Eigen::Vector3d atom_a = first_is_a ? a0 : a1;
  const Eigen::Vector3d atom_b = first_is_a ? a1 : a0;
  EXPECT_LT((atom_a - ma.normalized()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((atom_b - mb.normalized()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(KMeans, CapacityError) {
  EXPECT_THROW(kmeans_init(Eigen::MatrixXd::Ones(4, 5), 10, 1, 5), CapacityError);
}

TEST(KMeans, DeterministicAndUnitNorm) {
  Rng rng(8);
  const Eigen::MatrixXd pts = oracle::random_unit_atoms(rng, 16, 200).cwiseAbs();
  const auto a = kmeans_init(pts, 12, 42, 20);
  const auto b = kmeans_init(pts, 12, 42, 20);
  EXPECT_TRUE(a == b);
  for (int m = 0; m < a.size(); ++m) EXPECT_NEAR(a.atoms().col(m).norm(), 1.0, kAtomNormTolerance);
}

TEST(KMeans, ZeroPointsStillGiveUnitAtoms) {
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(4, 6);
  pts(0, 0) = 1.0;
  const auto D = kmeans_init(pts, 3, 1, 5);
  for (int m = 0; m < D.size(); ++m) EXPECT_NEAR(D.atoms().col(m).norm(), 1.0, kAtomNormTolerance);
}

class GlobalFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(99);
    for (int n = 0; n < 3; ++n) parts.emplace_back(n, oracle::random_unit_atoms(rng, 8, 4 + n));
    global = GlobalDictionary(parts);
  }
  std::vector<CategoryDictionary> parts;
  GlobalDictionary global;
};

TEST_F(GlobalFixture, OwnershipIsContiguous) {
  EXPECT_EQ(global.size(), 4 + 5 + 6);
  EXPECT_EQ(global.part_count(), 3);
  for (int m = 0; m < global.size(); ++m) {
    const int n = global.owner(m);
    EXPECT_GE(m, global.offset(n));
    EXPECT_LT(m, global.offset(n) + global.part_size(n));
    EXPECT_EQ(global.atoms().col(m), parts[static_cast<std::size_t>(n)].atoms().col(m - global.offset(n)));
  }
}

TEST_F(GlobalFixture, ConcatMapsLocalToGlobal) {
  std::vector<SparseCode> codes = {SparseCode({1}, {0.5}, 4), SparseCode(5), SparseCode({0, 5}, {-1.0, 2.0}, 6)};
  const SparseCode z = concat_codes(codes, global);
  EXPECT_EQ(z.dict_size, 15);
  EXPECT_EQ(z.support, (std::vector<int>{1, 9, 14}));
  EXPECT_EQ(z.sparsity(), 3);
  std::vector<SparseCode> empty = {SparseCode(4), SparseCode(5), SparseCode(6)};
  EXPECT_TRUE(concat_codes(empty, global).empty());
  std::vector<SparseCode> wrong = {SparseCode(3), SparseCode(5), SparseCode(6)};
  EXPECT_THROW(concat_codes(wrong, global), DimensionError);
  EXPECT_THROW(concat_codes(std::span(codes).first(2), global), DimensionError);
}

TEST(GlobalDictionary, SelectionMatrixIllustration) {
  // Six atoms; the category of interest owns the third and fourth.
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(6, 6);
  std::vector<CategoryDictionary> parts = {CategoryDictionary(0, I.leftCols(2)), CategoryDictionary(1, I.middleCols(2, 2)),
                                           CategoryDictionary(2, I.rightCols(2))};
  GlobalDictionary g(parts);
  std::vector<SparseCode> codes = {SparseCode(2), SparseCode({0, 1}, {0.3, -0.4}, 2), SparseCode(2)};
  const SparseCode z = concat_codes(codes, g);
  // 0-based global indices 2 and 3 are the third and fourth atoms.
  EXPECT_EQ(z.support, (std::vector<int>{2, 3}));
  EXPECT_EQ(z.coeffs, (std::vector<double>{0.3, -0.4}));
  EXPECT_EQ(g.owner(2), 1);
  EXPECT_EQ(g.owner(3), 1);
}

TEST_F(GlobalFixture, SubDictionaryPicksSupport) {
  const SparseCode z(std::vector<int>{3, 7}, std::vector<double>{1.0, -1.0}, 15);
  const SubDictionary sub = build_sub_dictionary(z, global);
  ASSERT_EQ(sub.size(), 2);
  EXPECT_EQ(sub.to_global, (std::vector<int>{3, 7}));
  EXPECT_EQ(sub.atoms.col(0), global.atoms().col(3));
  EXPECT_EQ(sub.atoms.col(1), global.atoms().col(7));
  EXPECT_EQ(build_sub_dictionary(SparseCode(15), global).size(), 0);
}

TEST(CodeAllCategories, OrthogonalDictionaryHitsTheRightAtom) {
  // Three categories plus background, all orthonormal blocks of the identity.
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(16, 16);
  std::vector<CategoryDictionary> dicts;
  for (int n = 0; n < 4; ++n) dicts.emplace_back(n, I.middleCols(4 * n, 4));
  const Eigen::VectorXd f = dicts[2].atoms().col(3);
  const auto codes = code_all_categories(f, dicts, kLambda);
  ASSERT_EQ(codes.size(), 4u);
  // Orthogonal closed form: coefficient = soft_threshold(<d, f>, lambda/2).
  EXPECT_EQ(codes[2].support, std::vector<int>{3});
  EXPECT_NEAR(codes[2].coeffs[0], 0.925, 1e-12);
  EXPECT_TRUE(codes[0].empty());
  EXPECT_TRUE(codes[1].empty());
  EXPECT_TRUE(codes[3].empty());
  for (const auto& c : code_all_categories(Eigen::VectorXd::Zero(16), dicts, kLambda)) EXPECT_TRUE(c.empty());
}

TEST(CodeAllCategories, OrderIndependent) {
  Rng rng(4);
  std::vector<CategoryDictionary> dicts;
  for (int n = 0; n < 3; ++n) dicts.emplace_back(n, oracle::random_unit_atoms(rng, 8, 5));
  const Eigen::VectorXd f = oracle::random_vector(rng, 8);
  const auto fwd = code_all_categories(f, dicts, kLambda);
  std::vector<CategoryDictionary> rev(dicts.rbegin(), dicts.rend());
  const auto bwd = code_all_categories(f, rev, kLambda);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(fwd[n], bwd[2 - n]);
}

TEST(CategoryAware, ZeroFeatureAndSingleAtom) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(6, 6);
  std::vector<CategoryDictionary> parts = {CategoryDictionary(0, I.leftCols(3)), CategoryDictionary(1, I.rightCols(3))};
  GlobalDictionary g(parts);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);
  auto codes = code_all_categories(zero, parts, kLambda);
  EXPECT_TRUE(category_aware_code(zero, g, codes, kLambda).empty());

  const Eigen::VectorXd f = I.col(4);
  codes = code_all_categories(f, parts, kLambda);
  const SparseCode z = category_aware_code(f, g, codes, kLambda);
  ASSERT_EQ(z.sparsity(), 1);
  EXPECT_EQ(z.support[0], 4);
  EXPECT_NEAR(z.coeffs[0], 0.925, 1e-12);
}

TEST(CategoryAware, ImprovesOnConcatenationAndStaysInSupport) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 4 + static_cast<int>(rng.index(8));
    std::vector<CategoryDictionary> parts;
    const int n_parts = 2 + static_cast<int>(rng.index(3));
    for (int n = 0; n < n_parts; ++n) parts.emplace_back(n, oracle::random_unit_atoms(rng, k, 2 + static_cast<int>(rng.index(5))));
    GlobalDictionary g(parts);
    const Eigen::VectorXd f = oracle::random_vector(rng, k);
    const auto codes = code_all_categories(f, parts, kLambda);
    const SparseCode zcon = concat_codes(codes, g);
    const SparseCode z = category_aware_code(f, g, codes, kLambda);
    EXPECT_LE(lasso_objective(f, g.atoms(), z, kLambda), lasso_objective(f, g.atoms(), zcon, kLambda) + 1e-9);
    const std::set<int> sc(zcon.support.begin(), zcon.support.end());
    for (int m : z.support) EXPECT_TRUE(sc.count(m)) << m;
    // Un-scattering through the index map reproduces the sub-problem code.
    const SubDictionary sub = build_sub_dictionary(zcon, g);
    const Eigen::VectorXd b = sub.atoms.transpose() * f;
    const Eigen::VectorXd zsub = feature_sign_gram(sub.gram, b, kLambda);
    for (int p = 0; p < sub.size(); ++p) EXPECT_EQ(z.at(sub.to_global[static_cast<std::size_t>(p)]), zsub[p]);
  }
}

TEST(CategoryAware, ObjectiveFunctionalOnSingleCategorySupport) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  std::vector<CategoryDictionary> parts = {CategoryDictionary(0, I.leftCols(2)), CategoryDictionary(1, I.rightCols(2))};
  GlobalDictionary g(parts);
  Eigen::VectorXd f = I.col(0);
  const SparseCode z({0}, {0.5}, 4);
  // Global term 0.25 + 0.075; category 0 term identical; category 1 term ||f||^2 = 1.
  EXPECT_NEAR(category_aware_objective(f, g, z, kLambda, 2), 2 * (0.25 + 0.075) + 1.0, 1e-12);
}

}  // namespace
}  // namespace topsal
