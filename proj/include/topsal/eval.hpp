#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/imgfeat.hpp"
#include "topsal/random.hpp"
#include "topsal/sparsecode.hpp"

namespace topsal {

inline constexpr int kPrThresholds = 100;

/// Precision/recall at thresholds m/100, m = 1..100.
struct PrCurve {
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<long> predicted;  // TP + FP at each threshold
};

inline PrCurve pr_curve(std::span<const double> saliency, std::span<const int> gt) {
  if (saliency.size() != gt.size()) throw DimensionError("saliency and ground truth differ in length");
  long positives = 0;
  for (int g : gt) positives += g > 0 ? 1 : 0;
  if (positives == 0) throw DegenerateDataError("recall is undefined without positive samples");
  PrCurve c;
  for (int m = 1; m <= kPrThresholds; ++m) {
    const double tau = m / static_cast<double>(kPrThresholds);
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < saliency.size(); ++i) {
      if (saliency[i] >= tau) (gt[i] > 0 ? tp : fp) += 1;
    }
    c.thresholds.push_back(tau);
    c.precision.push_back(tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp));
    c.recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
    c.predicted.push_back(tp + fp);
  }
  return c;
}

/// Precision where precision equals recall. Thresholds at which nothing is
/// predicted carry the conventional precision of 1 and are left out of the
/// search; without any remaining threshold the result is 0.
inline double precision_at_eer(const PrCurve& c) {
  std::vector<std::size_t> idx;
  for (std::size_t m = 0; m < c.thresholds.size(); ++m)
    if (c.predicted.empty() || c.predicted[m] > 0) idx.push_back(m);
  if (idx.empty()) return 0.0;
  const auto diff = [&](std::size_t m) { return c.precision[m] - c.recall[m]; };
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t m = idx[i];
    if (diff(m) == 0.0) return c.precision[m];
    if (i + 1 < idx.size()) {
      const std::size_t n = idx[i + 1];
      if ((diff(m) < 0.0) != (diff(n) < 0.0) && diff(n) != 0.0) {
        const double t = diff(m) / (diff(m) - diff(n));
        return c.precision[m] + t * (c.precision[n] - c.precision[m]);
      }
    }
  }
  std::size_t best = idx.front();
  for (std::size_t m : idx)
    if (std::abs(diff(m)) < std::abs(diff(best))) best = m;
  return c.precision[best];
}

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.width != gt.width || pred.height != gt.height) throw DimensionError("mask sizes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0, g = gt.bits[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// TP / (TP + FP + FN); 1 when all three are zero.
inline double iou(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  const long denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Per-pixel class labels: 0 is background, n + 1 is category n.
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<int> labels;
};

struct PixelAccuracy {
  std::vector<double> per_class;  // index 0 = background; NaN if the class has no gt pixels
  double mean = 0.0;              // over classes that occur in the ground truth
};

inline PixelAccuracy pixel_accuracy(const LabelImage& pred, const LabelImage& gt, int classes) {
  if (pred.width != gt.width || pred.height != gt.height || pred.labels.size() != gt.labels.size()) {
    throw DimensionError("label image sizes differ");
  }
  std::vector<long> total(static_cast<std::size_t>(classes), 0), correct(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g < 0 || g >= classes) throw DimensionError("ground-truth label out of range");
    ++total[static_cast<std::size_t>(g)];
    if (pred.labels[i] == g) ++correct[static_cast<std::size_t>(g)];
  }
  PixelAccuracy out;
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < classes; ++k) {
    const auto u = static_cast<std::size_t>(k);
    if (total[u] == 0) {
      out.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.per_class.push_back(static_cast<double>(correct[u]) / static_cast<double>(total[u]));
    sum += out.per_class.back();
    ++present;
  }
  out.mean = present == 0 ? 0.0 : sum / present;
  return out;
}

struct CodingBenchmark {
  int categories = 0;
  int atoms_per_dictionary = 0;
  int dim = 0;
  int trials = 0;
  double global_seconds = 0.0;          // median per feature, feature-sign on all atoms
  double category_aware_seconds = 0.0;  // median per feature, slowest category solve + two-step solve
  double ratio = 0.0;                   // global / category-aware
  double global_sparsity = 0.0;         // mean |supp| of the global code
  double category_sparsity = 0.0;       // mean |supp| of one per-dictionary code
  double sub_dictionary_size = 0.0;     // mean |supp(z_con)|
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  if (v.size() % 2 == 1) return v[h];
  const double hi = v[h];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h)));
}

/// Times coding against N category dictionaries plus a background dictionary
/// of r atoms each in dimension k. Per-category solves are independent, so
/// the category-aware time counts only the slowest of them.
inline CodingBenchmark coding_benchmark(int categories, int r, int k, int trials, std::uint64_t seed,
                                        double lambda = 0.15) {
  if (categories < 1 || r < 1 || k < 1 || trials < 1) throw DimensionError("benchmark sizes must be positive");
  using clock = std::chrono::steady_clock;
  Rng rng(seed);
  std::vector<CategoryDictionary> dicts;
  for (int n = 0; n <= categories; ++n) {
    Eigen::MatrixXd D(k, r);
    for (int c = 0; c < r; ++c) {
      for (int i = 0; i < k; ++i) D(i, c) = rng.normal();
      D.col(c).normalize();
    }
    dicts.emplace_back(n, D);
  }
  const GlobalDictionary global(dicts);
  std::vector<double> tg, tc;
  CodingBenchmark rep;
  rep.categories = categories;
  rep.atoms_per_dictionary = r;
  rep.dim = k;
  rep.trials = trials;
  double sg = 0.0, sc = 0.0, ss = 0.0;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd f(k);
    for (int i = 0; i < k; ++i) f[i] = rng.normal();
    f.normalize();

    auto t0 = clock::now();
    const SparseCode zg = feature_sign(f, global, lambda);
    tg.push_back(std::chrono::duration<double>(clock::now() - t0).count());

    std::vector<SparseCode> codes;
    double slowest = 0.0;
    for (const auto& d : dicts) {
      t0 = clock::now();
      codes.push_back(feature_sign(f, d, lambda));
      slowest = std::max(slowest, std::chrono::duration<double>(clock::now() - t0).count());
    }
    t0 = clock::now();
    [[maybe_unused]] const SparseCode za = category_aware_code(f, global, codes, lambda);
    tc.push_back(slowest + std::chrono::duration<double>(clock::now() - t0).count());

    sg += zg.sparsity();
    for (const auto& c : codes) sc += c.sparsity();
    ss += concat_codes(codes, global).sparsity();
  }
  rep.global_seconds = median(tg);
  rep.category_aware_seconds = median(tc);
  rep.ratio = rep.category_aware_seconds > 0.0 ? rep.global_seconds / rep.category_aware_seconds : 0.0;
  rep.global_sparsity = sg / trials;
  rep.category_sparsity = sc / (static_cast<double>(trials) * (categories + 1));
  rep.sub_dictionary_size = ss / trials;
  return rep;
}

}  // namespace topsal
