#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "topsal/errors.hpp"

namespace topsal {

/// Linear classifier f(x) = v . x + b.
struct SvmModel {
  Eigen::VectorXd v;
  double b = 0.0;
  double cost = 1.0;

  friend bool operator==(const SvmModel& x, const SvmModel& y) {
    return x.b == y.b && x.cost == y.cost && x.v.size() == y.v.size() && x.v == y.v;
  }
};

struct SvmOptions {
  double rel_tolerance = 1e-8;
  double kkt_tolerance = 1e-7;
  int max_epochs = 1000;
};

struct SvmTrainResult {
  SvmModel model;
  Eigen::VectorXd alpha;  // dual variables, 0 <= alpha_i <= C / 2
  int epochs = 0;
};

inline double confidence(const SvmModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.v.size()) throw DimensionError("feature dimension does not match classifier");
  return model.v.dot(x) + model.b;
}

/// Primal objective ||v||^2 + b^2 + C sum max(0, 1 - l (v.x + b)); the bias is
/// an augmented constant feature and therefore regularised.
inline double svm_objective(const SvmModel& m, std::span<const Eigen::VectorXd> xs, std::span<const int> labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) loss += std::max(0.0, 1.0 - labels[i] * confidence(m, xs[i]));
  return m.v.squaredNorm() + m.b * m.b + m.cost * loss;
}

/// Dual coordinate descent for the L1-loss linear SVM in fixed example order.
/// ||v||^2 + C sum xi is twice the usual 1/2||v||^2 + (C/2) sum xi, so the
/// box constraint is alpha_i in [0, C/2].
inline SvmTrainResult svm_train_detailed(std::span<const Eigen::VectorXd> xs, std::span<const int> labels, double cost,
                                         const SvmOptions& opt = {}) {
  if (xs.empty() || xs.size() != labels.size()) throw DimensionError("need one label per example");
  const auto d = xs.front().size();
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != d) throw DimensionError("examples differ in dimension");
    if (labels[i] == 1) has_pos = true;
    else if (labels[i] == -1) has_neg = true;
    else throw DimensionError("labels must be +1 or -1");
  }
  if (!has_pos || !has_neg) throw DegenerateDataError("SVM training needs both positive and negative examples");
  if (!(cost > 0.0)) throw DimensionError("SVM cost must be positive");

  const double upper = 0.5 * cost;
  const std::size_t n = xs.size();
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> qdiag(n);
  for (std::size_t i = 0; i < n; ++i) qdiag[i] = xs[i].squaredNorm() + 1.0;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double wb = 0.0;

  // Dual objective (maximised): sum alpha - 1/2 ||w_aug||^2.
  const auto dual = [&] { return alpha.sum() - 0.5 * (w.squaredNorm() + wb * wb); };
  SvmTrainResult res;
  double prev = dual();
  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    double max_pg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double li = labels[i];
      const double g = li * (w.dot(xs[i]) + wb) - 1.0;
      const double ai = alpha[static_cast<Eigen::Index>(i)];
      double pg = g;
      if (ai <= 0.0) pg = std::min(g, 0.0);
      else if (ai >= upper) pg = std::max(g, 0.0);
      max_pg = std::max(max_pg, std::abs(pg));
      if (pg == 0.0) continue;
      const double na = std::clamp(ai - g / qdiag[i], 0.0, upper);
      const double delta = (na - ai) * li;
      if (delta != 0.0) {
        w += delta * xs[i];
        wb += delta;
        alpha[static_cast<Eigen::Index>(i)] = na;
      }
    }
    res.epochs = epoch + 1;
    const double cur = dual();
    const double rel = std::abs(cur - prev) / std::max(std::abs(cur), 1e-300);
    prev = cur;
    if (rel < opt.rel_tolerance && max_pg < opt.kkt_tolerance) break;
  }
  res.model.v = std::move(w);
  res.model.b = wb;
  res.model.cost = cost;
  res.alpha = std::move(alpha);
  return res;
}

inline SvmModel svm_train(std::span<const Eigen::VectorXd> xs, std::span<const int> labels, double cost,
                          const SvmOptions& opt = {}) {
  return svm_train_detailed(xs, labels, cost, opt).model;
}

/// One binary classifier per category on a shared feature set.
/// labels[n][i] is +1 when image i contains category n.
inline std::vector<SvmModel> one_vs_rest_train(std::span<const Eigen::VectorXd> xs,
                                               std::span<const std::vector<int>> labels, double cost,
                                               const SvmOptions& opt = {}) {
  std::vector<SvmModel> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(svm_train(xs, l, cost, opt));
  return out;
}

}  // namespace topsal
