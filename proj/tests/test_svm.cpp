#include <gtest/gtest.h>

#include "oracles.hpp"
#include "topsal/random.hpp"
#include "topsal/svm.hpp"

using namespace topsal;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

struct Data {
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> l;
};

Data separable_2d(Rng& rng, int n) {
  Data d;
  for (int i = 0; i < n; ++i) {
    const int label = i % 2 == 0 ? 1 : -1;
    Eigen::VectorXd x(2);
    x[0] = label * (1.0 + rng.uniform()) + 0.3;
    x[1] = 2.0 * rng.uniform() - 1.0;
    d.xs.push_back(x);
    d.l.push_back(label);
  }
  return d;
}

Data overlapping(Rng& rng, int n, int dim) {
  Data d;
  for (int i = 0; i < n; ++i) {
    const int label = rng.uniform() < 0.5 ? 1 : -1;
    Eigen::VectorXd x = oracle::random_vector(rng, dim);
    x[0] += 0.7 * label;
    d.xs.push_back(x);
    d.l.push_back(label);
  }
  return d;
}

}  // namespace

TEST(SvmTrain, SymmetricPairIsMaxMargin) {
  std::vector<Eigen::VectorXd> xs{vec({1, 0}), vec({-1, 0})};
  std::vector<int> l{1, -1};
  const SvmModel m = svm_train(xs, l, 100.0);
  EXPECT_NEAR(m.v[0], 1.0, 1e-6);
  EXPECT_NEAR(m.v[1], 0.0, 1e-9);
  EXPECT_NEAR(m.b, 0.0, 1e-6);
  EXPECT_NEAR(svm_objective(m, xs, l), 1.0, 1e-5);
  EXPECT_NEAR(confidence(m, xs[0]), 1.0, 1e-6);
}

TEST(SvmTrain, DuplicatedSymmetricDataGivesSameModel) {
  std::vector<Eigen::VectorXd> xs{vec({1, 0}), vec({-1, 0})};
  std::vector<int> l{1, -1};
  std::vector<Eigen::VectorXd> xs2{vec({1, 0}), vec({-1, 0}), vec({1, 0}), vec({-1, 0})};
  std::vector<int> l2{1, -1, 1, -1};
  const SvmModel a = svm_train(xs, l, 100.0);
  const SvmModel b = svm_train(xs2, l2, 100.0);
  EXPECT_NEAR((a.v - b.v).norm(), 0.0, 1e-6);
  EXPECT_NEAR(a.b, b.b, 1e-6);
}

TEST(SvmTrain, SeparableDataClassifiedCorrectly) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Data d = separable_2d(rng, 30);
    const SvmModel m = svm_train(d.xs, d.l, 100.0);
    for (std::size_t i = 0; i < d.xs.size(); ++i) EXPECT_GT(d.l[i] * confidence(m, d.xs[i]), 0.0);
  }
}

TEST(SvmTrain, MatchesDualQpOracle) {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const Data d = overlapping(rng, 25, 3);
    const double C = trial % 2 == 0 ? 1.0 : 10.0;
    const SvmModel m = svm_train(d.xs, d.l, C);
    const Eigen::VectorXd ref = oracle::svm_dual_projected_gradient(d.xs, d.l, C);
    SvmModel r;
    r.v = ref.head(3);
    r.b = ref[3];
    r.cost = C;
    const double om = svm_objective(m, d.xs, d.l);
    const double orf = svm_objective(r, d.xs, d.l);
    EXPECT_LE(om, orf + 1e-6 * std::max(1.0, orf));
    EXPECT_NEAR(om, orf, 1e-4 * std::max(1.0, orf));
  }
}

TEST(SvmTrain, ObjectiveBelowZeroModelAndComplementarySlackness) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Data d = overlapping(rng, 40, 4);
    const double C = 1.0 + trial;
    const SvmTrainResult res = svm_train_detailed(d.xs, d.l, C);
    SvmModel zero{Eigen::VectorXd::Zero(4), 0.0, C};
    EXPECT_LE(svm_objective(res.model, d.xs, d.l), svm_objective(zero, d.xs, d.l));
    EXPECT_DOUBLE_EQ(svm_objective(zero, d.xs, d.l), C * 40);
    for (std::size_t i = 0; i < d.xs.size(); ++i) {
      const double a = res.alpha[static_cast<Eigen::Index>(i)];
      const double margin = d.l[i] * confidence(res.model, d.xs[i]);
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, C / 2);
      if (a > 1e-9 && a < C / 2 - 1e-9) { EXPECT_NEAR(margin, 1.0, 1e-6); }
      if (a <= 0.0) { EXPECT_GE(margin, 1.0 - 1e-6); }
      if (a >= C / 2) { EXPECT_LE(margin, 1.0 + 1e-6); }
    }
  }
}

TEST(SvmTrain, LabelFlipNegatesModel) {
  Rng rng(3);
  const Data d = overlapping(rng, 30, 3);
  std::vector<int> flipped = d.l;
  for (int& x : flipped) x = -x;
  const SvmModel a = svm_train(d.xs, d.l, 5.0);
  const SvmModel b = svm_train(d.xs, flipped, 5.0);
  EXPECT_LT((a.v + b.v).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(std::abs(a.b + b.b), 1e-12);
}

TEST(SvmTrain, Deterministic) {
  Rng rng(6);
  const Data d = overlapping(rng, 30, 3);
  EXPECT_EQ(svm_train(d.xs, d.l, 2.0), svm_train(d.xs, d.l, 2.0));
}

TEST(SvmTrain, Errors) {
  std::vector<Eigen::VectorXd> xs{vec({1, 0}), vec({2, 0})};
  std::vector<int> one_class{1, 1};
  EXPECT_THROW(svm_train(xs, one_class, 1.0), DegenerateDataError);
  std::vector<Eigen::VectorXd> ragged{vec({1, 0}), vec({2})};
  std::vector<int> l{1, -1};
  EXPECT_THROW(svm_train(ragged, l, 1.0), DimensionError);
  std::vector<int> short_labels{1};
  EXPECT_THROW(svm_train(xs, short_labels, 1.0), DimensionError);
}

TEST(Confidence, Examples) {
  SvmModel m{vec({1.0, -2.0, 0.5}), 0.25, 1.0};
  EXPECT_DOUBLE_EQ(confidence(m, vec({0, 0, 0})), 0.25);
  EXPECT_DOUBLE_EQ(confidence(m, vec({2, 1, 4})), 1.0 * 2 - 2.0 * 1 + 0.5 * 4 + 0.25);
  const Eigen::VectorXd x = vec({0.3, -1, 2}), y = vec({1, 1, -0.5});
  EXPECT_NEAR(confidence(m, 2 * x + 3 * y) - m.b, 2 * (confidence(m, x) - m.b) + 3 * (confidence(m, y) - m.b), 1e-12);
  EXPECT_THROW(confidence(m, vec({1, 2})), DimensionError);
}

TEST(OneVsRest, ReducesToSingleAndIsOrderIndependent) {
  Rng rng(17);
  const Data d = overlapping(rng, 30, 3);
  std::vector<std::vector<int>> one{d.l};
  const auto ms = one_vs_rest_train(d.xs, one, 3.0);
  ASSERT_EQ(ms.size(), 1u);
  EXPECT_EQ(ms[0], svm_train(d.xs, d.l, 3.0));
}

TEST(OneVsRest, DisjointClusters) {
  Rng rng(23);
  const std::vector<Eigen::VectorXd> centres{vec({5, 0}), vec({-2.5, 4.33}), vec({-2.5, -4.33})};
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> owner;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) {
      xs.push_back(centres[static_cast<std::size_t>(c)] + 0.5 * oracle::random_vector(rng, 2));
      owner.push_back(c);
    }
  std::vector<std::vector<int>> labels(3);
  for (int c = 0; c < 3; ++c)
    for (int o : owner) labels[static_cast<std::size_t>(c)].push_back(o == c ? 1 : -1);
  const auto ms = one_vs_rest_train(xs, labels, 10.0);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < xs.size(); ++i)
      EXPECT_EQ(confidence(ms[static_cast<std::size_t>(c)], xs[i]) > 0, owner[i] == c);
  std::vector<std::vector<int>> reversed(labels.rbegin(), labels.rend());
  const auto mr = one_vs_rest_train(xs, reversed, 10.0);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(ms[static_cast<std::size_t>(c)], mr[static_cast<std::size_t>(2 - c)]);
}
