#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "topsal/crf.hpp"
#include "topsal/errors.hpp"
#include "topsal/eval.hpp"
#include "topsal/imgfeat.hpp"
#include "topsal/parallel.hpp"
#include "topsal/pyramid.hpp"
#include "topsal/random.hpp"
#include "topsal/sparsecode.hpp"
#include "topsal/svm.hpp"

namespace topsal {

struct TrainingConfig {
  int initial_iters = 10;
  int feedback_rounds = 2;
  double rho0 = 1e-3;
  double lambda = 0.15;
  int atoms = 64;             // r, per category
  int background_atoms = 64;  // r_bg
  int nu = 2;
  double label_frac = 0.25;
  int patch_size = 64;
  int stride = 16;
  int kmeans_iters = 20;
  double patch_svm_cost = 1.0;
  double image_svm_cost = 10.0;
  double positive_split = 70.0 / 150.0;   // share of each category's images in Train1
  double background_split = 30.0 / 150.0; // share of unlabeled images in Train1
  double segment_threshold = 0.5;
  std::uint64_t seed = 1;
  int threads = 1;

  /// Canonical `key = value` text; also the model's config fingerprint.
  /// `threads` is excluded since it never changes results.
  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "initial_iters = " << initial_iters << "\n"
      << "feedback_rounds = " << feedback_rounds << "\n"
      << "rho0 = " << rho0 << "\n"
      << "lambda = " << lambda << "\n"
      << "atoms = " << atoms << "\n"
      << "background_atoms = " << background_atoms << "\n"
      << "nu = " << nu << "\n"
      << "label_frac = " << label_frac << "\n"
      << "patch_size = " << patch_size << "\n"
      << "stride = " << stride << "\n"
      << "kmeans_iters = " << kmeans_iters << "\n"
      << "patch_svm_cost = " << patch_svm_cost << "\n"
      << "image_svm_cost = " << image_svm_cost << "\n"
      << "positive_split = " << positive_split << "\n"
      << "background_split = " << background_split << "\n"
      << "segment_threshold = " << segment_threshold << "\n"
      << "seed = " << seed << "\n";
    return o.str();
  }

  void validate() const {
    const bool ok = initial_iters >= 0 && feedback_rounds >= 0 && rho0 > 0 && lambda > 0 && atoms > 0 &&
                    background_atoms > 0 && nu > 0 && label_frac > 0 && label_frac <= 1 && patch_size > 0 &&
                    stride > 0 && patch_size >= stride && kmeans_iters >= 0 && patch_svm_cost > 0 &&
                    image_svm_cost > 0 && positive_split > 0 && positive_split < 1 && background_split >= 0 &&
                    background_split < 1 && segment_threshold >= 0 && segment_threshold <= 1 && threads > 0;
    if (!ok) throw UsageError("configuration value out of range");
  }

  friend bool operator==(const TrainingConfig& a, const TrainingConfig& b) { return a.to_text() == b.to_text(); }
};

struct DatasetProfile {
  std::vector<std::string> categories;
  bool multi_label = false;
  int max_objects = 1;

  int size() const { return static_cast<int>(categories.size()); }
  friend bool operator==(const DatasetProfile&, const DatasetProfile&) = default;
};

/// Profile from the label sets of the training images.
inline DatasetProfile derive_profile(std::vector<std::string> categories, std::span<const std::vector<int>> label_sets) {
  DatasetProfile p;
  p.categories = std::move(categories);
  std::size_t most = 1;
  for (const auto& l : label_sets) most = std::max(most, l.size());
  p.max_objects = static_cast<int>(most);
  p.multi_label = most > 1;
  return p;
}

/// One image reduced to what the pipeline consumes: descriptors on its patch
/// grid plus optional ground truth.
struct Sample {
  std::string id;
  int width = 0;
  int height = 0;
  PatchGrid grid;
  Eigen::MatrixXd features;                 // 128 x t
  std::vector<int> labels;                  // categories present, ascending
  std::vector<PatchLabelMap> patch_labels;  // per category; empty when unknown
  std::vector<BinaryMask> masks;            // per category; empty when unknown

  bool has(int category) const { return std::binary_search(labels.begin(), labels.end(), category); }
  int label(int category) const { return has(category) ? 1 : -1; }
};

/// `masks[n]` is the object mask of category n for present categories; an
/// image with no labels needs no masks. Pass `masks` empty when ground truth
/// is unavailable.
inline Sample make_sample(std::string id, const GrayImage& img, std::vector<int> labels,
                          const std::vector<BinaryMask>& masks, int categories, const TrainingConfig& cfg) {
  Sample s;
  s.id = std::move(id);
  s.width = img.width;
  s.height = img.height;
  s.grid = build_patch_grid(img.width, img.height, cfg.patch_size, cfg.stride);
  s.features = extract_descriptors(img, s.grid);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  for (int l : labels)
    if (l < 0 || l >= categories) throw DimensionError("label index out of range");
  s.labels = std::move(labels);
  s.patch_labels.resize(static_cast<std::size_t>(categories));
  s.masks.resize(static_cast<std::size_t>(categories));
  const bool have_masks = !masks.empty() || s.labels.empty();
  if (!have_masks) return s;
  for (int n = 0; n < categories; ++n) {
    const auto u = static_cast<std::size_t>(n);
    if (s.has(n)) {
      if (u >= masks.size() || masks[u].bits.empty()) throw DimensionError("missing mask for a present category");
      s.masks[u] = masks[u];
    } else {
      s.masks[u] = BinaryMask(img.width, img.height);
    }
    s.patch_labels[u] = label_patches(s.grid, s.masks[u], img.width, img.height, cfg.label_frac);
  }
  return s;
}

struct Split {
  std::vector<int> first;   // Train1 / T2a
  std::vector<int> second;  // Train2 / T2b
};

/// Seeded split that keeps the composition of every label set: from each
/// group of images sharing a label set, round(fraction * size) go to the
/// first half. Unlabeled images use `background_fraction`.
inline Split split_dataset(std::span<const std::vector<int>> label_sets, int categories, std::uint64_t seed,
                           double fraction, double background_fraction) {
  if (label_sets.empty()) throw DegenerateDataError("empty dataset");
  std::vector<int> positives(static_cast<std::size_t>(categories), 0);
  std::map<std::vector<int>, std::vector<int>> groups;
  for (std::size_t i = 0; i < label_sets.size(); ++i) {
    std::vector<int> key = label_sets[i];
    std::sort(key.begin(), key.end());
    for (int l : key) ++positives[static_cast<std::size_t>(l)];
    groups[key].push_back(static_cast<int>(i));
  }
  for (int n = 0; n < categories; ++n)
    if (positives[static_cast<std::size_t>(n)] == 0)
      throw DegenerateDataError("category " + std::to_string(n) + " has no positive images");
  Rng rng(seed);
  Split s;
  for (auto& [key, members] : groups) {
    rng.shuffle(members);
    const double f = key.empty() ? background_fraction : fraction;
    const auto take = static_cast<std::size_t>(std::lround(f * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) (k < take ? s.first : s.second).push_back(members[k]);
  }
  std::sort(s.first.begin(), s.first.end());
  std::sort(s.second.begin(), s.second.end());
  return s;
}

/// Everything learned: per-category dictionaries and CRFs, the background
/// dictionary, the saliency-weighted classifiers and the configuration.
struct JointModel {
  DatasetProfile profile;
  TrainingConfig config;
  std::vector<CategoryDictionary> dictionaries;
  std::vector<CrfModel> crfs;
  CategoryDictionary background;
  std::vector<SvmModel> classifiers;
  GlobalDictionary global;

  int categories() const { return profile.size(); }

  /// Dictionary parts in global order: categories, then background.
  std::vector<CategoryDictionary> parts() const {
    std::vector<CategoryDictionary> p = dictionaries;
    p.push_back(background);
    return p;
  }

  void rebuild_global() { global = GlobalDictionary(parts()); }

  friend bool operator==(const JointModel& a, const JointModel& b) {
    return a.profile == b.profile && a.config == b.config && a.dictionaries == b.dictionaries && a.crfs == b.crfs &&
           a.background == b.background && a.classifiers == b.classifiers;
  }
};

/// Nearest float, as a double. The volatile store keeps GCC 11's SLP
/// vectoriser from folding the paired double->float->double conversions away.
inline double round_to_float(double x) {
  volatile float f = static_cast<float>(x);
  return f;
}

/// Rounds every learned parameter to single precision, the resolution of the
/// model file, so a saved model reloads bit-identically.
inline void snap_to_float(JointModel& m) {
  const auto snap_m = [](Eigen::MatrixXd x) { return x.cast<float>().cast<double>().eval(); };
  const auto snap_v = [](const Eigen::VectorXd& x) { return x.cast<float>().cast<double>().eval(); };
  for (auto& d : m.dictionaries) d = CategoryDictionary(d.category(), snap_m(d.atoms()));
  m.background = CategoryDictionary(m.background.category(), snap_m(m.background.atoms()));
  for (auto& c : m.crfs) {
    c.w = snap_v(c.w);
    c.gamma = round_to_float(c.gamma);
  }
  for (auto& c : m.classifiers) {
    c.v = snap_v(c.v);
    c.b = round_to_float(c.b);
    c.cost = round_to_float(c.cost);
  }
  m.rebuild_global();
}

inline std::vector<SparseCode> code_patches(const Eigen::MatrixXd& features, const CategoryDictionary& dict,
                                            double lambda) {
  std::vector<SparseCode> out;
  out.reserve(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index j = 0; j < features.cols(); ++j) out.push_back(feature_sign(features.col(j), dict, lambda));
  return out;
}

/// Per-part codes (categories then background) and category-aware codes.
struct ImageCodes {
  std::vector<std::vector<SparseCode>> parts;  // [part][patch]
  std::vector<SparseCode> aware;               // [patch]
};

inline ImageCodes compute_codes(const JointModel& m, const Eigen::MatrixXd& features) {
  const auto dicts = m.parts();
  const double lambda = m.config.lambda;
  ImageCodes c;
  c.parts.assign(dicts.size(), {});
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const Eigen::VectorXd f = features.col(j);
    const auto codes = code_all_categories(f, dicts, lambda);
    c.aware.push_back(category_aware_code(f, m.global, codes, lambda));
    for (std::size_t p = 0; p < codes.size(); ++p) c.parts[p].push_back(codes[p]);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Saliency training
// ---------------------------------------------------------------------------

/// Non-zero descriptors selected by `keep(sample, patch)` over `idx`, as columns.
template <class Keep>
Eigen::MatrixXd gather_descriptors(std::span<const Sample> samples, std::span<const int> idx, Keep keep) {
  std::vector<Eigen::Index> cols;
  std::vector<int> owners;
  for (int i : idx) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    for (int j = 0; j < s.grid.count(); ++j) {
      if (keep(s, j) && !s.features.col(j).isZero(0.0)) {
        owners.push_back(i);
        cols.push_back(j);
      }
    }
  }
  Eigen::MatrixXd out(kDescriptorDim, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    out.col(static_cast<Eigen::Index>(c)) = samples[static_cast<std::size_t>(owners[c])].features.col(cols[c]);
  return out;
}

inline void require_ground_truth(const Sample& s) {
  for (const auto& p : s.patch_labels)
    if (p.empty()) throw DimensionError("image " + s.id + " has no mask ground truth");
}

/// Dictionaries by k-means, CRF weights from a patch-level SVM on codes.
/// Equals train_initial with zero epochs.
inline JointModel initialize_model(std::span<const Sample> samples, std::span<const int> train1,
                                   const DatasetProfile& profile, const TrainingConfig& cfg) {
  cfg.validate();
  for (int i : train1) require_ground_truth(samples[static_cast<std::size_t>(i)]);
  const int N = profile.size();
  if (N < 1) throw DimensionError("no categories");
  JointModel m;
  m.profile = profile;
  m.config = cfg;
  m.dictionaries.resize(static_cast<std::size_t>(N));
  m.crfs.resize(static_cast<std::size_t>(N));
  parallel_for(static_cast<std::size_t>(N), cfg.threads, [&](std::size_t u) {
    const int n = static_cast<int>(u);
    const Eigen::MatrixXd pos = gather_descriptors(samples, train1, [&](const Sample& s, int j) {
      return s.patch_labels[u][static_cast<std::size_t>(j)] > 0;
    });
    m.dictionaries[u] = kmeans_init(pos, cfg.atoms, cfg.seed + 1000 * (u + 1), cfg.kmeans_iters, n);
    std::vector<Eigen::VectorXd> xs;
    std::vector<int> ls;
    for (int i : train1) {
      const Sample& s = samples[static_cast<std::size_t>(i)];
      const auto codes = code_patches(s.features, m.dictionaries[u], cfg.lambda);
      for (int j = 0; j < s.grid.count(); ++j) {
        xs.push_back(codes[static_cast<std::size_t>(j)].dense());
        ls.push_back(s.patch_labels[u][static_cast<std::size_t>(j)]);
      }
    }
    const SvmModel svm = svm_train(xs, ls, cfg.patch_svm_cost);
    CrfModel crf;
    crf.category = n;
    crf.w.resize(cfg.atoms + 1);
    crf.w.head(cfg.atoms) = svm.v;
    crf.w[cfg.atoms] = svm.b;
    m.crfs[u] = crf;
  });
  const Eigen::MatrixXd bg = gather_descriptors(samples, train1, [&](const Sample& s, int j) {
    for (const auto& p : s.patch_labels)
      if (p[static_cast<std::size_t>(j)] > 0) return false;
    return true;
  });
  m.background = kmeans_init(bg, cfg.background_atoms, cfg.seed, cfg.kmeans_iters, N);
  m.rebuild_global();
  return m;
}

/// One max-margin step for category n on one image; returns the loss before
/// the step. The global dictionary is left stale.
inline StructuredLoss update_on_image(JointModel& m, int n, const Sample& s) {
  require_ground_truth(s);
  const auto u = static_cast<std::size_t>(n);
  const auto codes = code_patches(s.features, m.dictionaries[u], m.config.lambda);
  const PatchLabelMap& gt = s.patch_labels[u];
  const LabelField y_hat = loss_augmented_map(codes, m.crfs[u], gt, s.grid);
  const StructuredLoss loss = structured_loss(y_hat, gt, codes, m.crfs[u], s.grid);
  const Eigen::VectorXd gw = grad_w(y_hat, gt, codes);
  const DictionaryGradient gD = grad_D(y_hat, gt, codes, m.crfs[u], m.dictionaries[u], s.features);
  auto [crf, dict] = apply_update(m.crfs[u], m.dictionaries[u], gw, gD.grad, m.config.rho0);
  m.crfs[u] = std::move(crf);
  m.dictionaries[u] = std::move(dict);
  return loss;
}

/// Mean structured hinge of category n over `idx` (loss-augmented labelling).
inline double mean_structured_hinge(const JointModel& m, int n, std::span<const Sample> samples,
                                    std::span<const int> idx) {
  if (idx.empty()) return 0.0;
  const auto u = static_cast<std::size_t>(n);
  double total = 0.0;
  for (int i : idx) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    const auto codes = code_patches(s.features, m.dictionaries[u], m.config.lambda);
    const LabelField y_hat = loss_augmented_map(codes, m.crfs[u], s.patch_labels[u], s.grid);
    total += structured_loss(y_hat, s.patch_labels[u], codes, m.crfs[u], s.grid).hinge;
  }
  return total / static_cast<double>(idx.size());
}

/// Initialisation followed by `initial_iters` epochs of per-image updates
/// over Train1 in order. Categories train independently.
inline JointModel train_initial(std::span<const Sample> samples, std::span<const int> train1,
                                const DatasetProfile& profile, const TrainingConfig& cfg) {
  JointModel m = initialize_model(samples, train1, profile, cfg);
  parallel_for(static_cast<std::size_t>(m.categories()), cfg.threads, [&](std::size_t u) {
    for (int e = 0; e < cfg.initial_iters; ++e)
      for (int i : train1) update_on_image(m, static_cast<int>(u), samples[static_cast<std::size_t>(i)]);
  });
  m.rebuild_global();
  return m;
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Plain pyramid max-pooled image vector of category-aware codes.
inline Eigen::VectorXd plain_image_vector(const Sample& s, const ImageCodes& codes) {
  const PyramidLayout layout = assign_blocks(s.grid, s.width, s.height);
  const auto pooled = max_pool(codes.aware, layout);
  return concat_normalize(pooled);
}

/// Per-patch saliency of category n from that category's codes.
inline std::vector<double> saliency_from_codes(const JointModel& m, int n, const Sample& s,
                                               std::span<const SparseCode> codes) {
  return infer_marginals(codes, m.crfs[static_cast<std::size_t>(n)], s.grid).saliency;
}

inline std::vector<std::vector<double>> all_saliency(const JointModel& m, const Sample& s, const ImageCodes& codes) {
  std::vector<std::vector<double>> maps;
  for (int n = 0; n < m.categories(); ++n)
    maps.push_back(saliency_from_codes(m, n, s, codes.parts[static_cast<std::size_t>(n)]));
  return maps;
}

/// Saliency-weighted pyramid vector.
inline Eigen::VectorXd weighted_image_vector(const JointModel& m, const Sample& s, const ImageCodes& codes,
                                             std::span<const std::vector<double>> maps) {
  const PyramidLayout layout = assign_blocks(s.grid, s.width, s.height);
  const auto pooled = max_pool(codes.aware, layout);
  const BlockSaliency bs = block_saliency(maps, layout, m.config.nu);
  return concat_normalize(saliency_weighted_pool(pooled, bs));
}

inline std::vector<std::vector<int>> category_labels(std::span<const Sample> samples, std::span<const int> idx,
                                                     int categories) {
  std::vector<std::vector<int>> l(static_cast<std::size_t>(categories));
  for (int n = 0; n < categories; ++n)
    for (int i : idx) l[static_cast<std::size_t>(n)].push_back(samples[static_cast<std::size_t>(i)].label(n));
  return l;
}

struct FeedbackRound {
  std::vector<std::pair<int, int>> updates;  // (sample index, category)
};

struct FeedbackReport {
  std::vector<FeedbackRound> rounds;
};

/// Rounds of: train unweighted classifiers on one half, predict the other,
/// and update category n on every image classifier n gets wrong. Halves
/// swap between rounds.
inline JointModel classifier_guided_update(JointModel m, std::span<const Sample> samples, std::span<const int> t2a,
                                           std::span<const int> t2b, FeedbackReport* report = nullptr) {
  const TrainingConfig& cfg = m.config;
  const int N = m.categories();
  for (int round = 0; round < cfg.feedback_rounds; ++round) {
    const auto train = round % 2 == 0 ? t2a : t2b;
    const auto val = round % 2 == 0 ? t2b : t2a;
    std::vector<Eigen::VectorXd> xt(train.size()), xv(val.size());
    parallel_for(train.size(), cfg.threads, [&](std::size_t k) {
      const Sample& s = samples[static_cast<std::size_t>(train[k])];
      xt[k] = plain_image_vector(s, compute_codes(m, s.features));
    });
    parallel_for(val.size(), cfg.threads, [&](std::size_t k) {
      const Sample& s = samples[static_cast<std::size_t>(val[k])];
      xv[k] = plain_image_vector(s, compute_codes(m, s.features));
    });
    const auto labels = category_labels(samples, train, N);
    const auto classifiers = one_vs_rest_train(xt, labels, cfg.image_svm_cost);
    FeedbackRound fr;
    for (std::size_t k = 0; k < val.size(); ++k) {
      const Sample& s = samples[static_cast<std::size_t>(val[k])];
      for (int n = 0; n < N; ++n) {
        const double f = confidence(classifiers[static_cast<std::size_t>(n)], xv[k]);
        if ((f > 0.0 ? 1 : -1) != s.label(n)) fr.updates.emplace_back(val[k], n);
      }
    }
    // Updates of different categories touch disjoint parameters.
    parallel_for(static_cast<std::size_t>(N), cfg.threads, [&](std::size_t u) {
      for (const auto& [i, n] : fr.updates)
        if (static_cast<std::size_t>(n) == u) update_on_image(m, n, samples[static_cast<std::size_t>(i)]);
    });
    m.rebuild_global();
    if (report) report->rounds.push_back(std::move(fr));
  }
  return m;
}

/// Saliency-weighted one-vs-rest classifiers on `idx`.
inline std::vector<SvmModel> train_weighted_classifier(const JointModel& m, std::span<const Sample> samples,
                                                       std::span<const int> idx) {
  std::vector<Eigen::VectorXd> xs(idx.size());
  parallel_for(idx.size(), m.config.threads, [&](std::size_t k) {
    const Sample& s = samples[static_cast<std::size_t>(idx[k])];
    const ImageCodes codes = compute_codes(m, s.features);
    xs[k] = weighted_image_vector(m, s, codes, all_saliency(m, s, codes));
  });
  if (std::all_of(xs.begin(), xs.end(), [](const Eigen::VectorXd& x) { return x.isZero(0.0); })) {
    throw DegenerateDataError("all saliency-weighted image vectors are zero");
  }
  return one_vs_rest_train(xs, category_labels(samples, idx, m.categories()), m.config.image_svm_cost);
}

struct TrainingReport {
  Split split;
  std::vector<double> hinge_before;  // per category, Train1 mean hinge at initialisation
  std::vector<double> hinge_after;   // per category, after the initial epochs
  FeedbackReport feedback;
};

/// Full training: split, initial saliency training on Train1, classifier
/// feedback between Train1 and Train2, saliency-weighted classifiers on both.
inline JointModel train_joint_model(std::span<const Sample> samples, const DatasetProfile& profile,
                                    const TrainingConfig& cfg, TrainingReport* report = nullptr) {
  std::vector<std::vector<int>> label_sets;
  for (const auto& s : samples) label_sets.push_back(s.labels);
  const Split split = split_dataset(label_sets, profile.size(), cfg.seed, cfg.positive_split, cfg.background_split);
  if (split.first.empty() || split.second.empty()) throw DegenerateDataError("split left one half empty");
  JointModel m;
  if (report) {
    report->split = split;
    m = initialize_model(samples, split.first, profile, cfg);
    for (int n = 0; n < profile.size(); ++n)
      report->hinge_before.push_back(mean_structured_hinge(m, n, samples, split.first));
  }
  m = train_initial(samples, split.first, profile, cfg);
  if (report)
    for (int n = 0; n < profile.size(); ++n)
      report->hinge_after.push_back(mean_structured_hinge(m, n, samples, split.first));
  m = classifier_guided_update(std::move(m), samples, split.first, split.second, report ? &report->feedback : nullptr);
  std::vector<int> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  // Classifiers are trained on the rounded saliency model they will run with.
  snap_to_float(m);
  m.classifiers = train_weighted_classifier(m, samples, all);
  snap_to_float(m);
  return m;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct SaliencyMap {
  int category = 0;
  PatchGrid grid;
  std::vector<double> values;  // per patch, in [0, 1]
  double weight = 1.0;         // refinement weight applied so far
};

inline SaliencyMap infer_saliency(const JointModel& m, const Sample& s, int category) {
  if (category < 0 || category >= m.categories()) throw DimensionError("category index out of range");
  const auto codes = code_patches(s.features, m.dictionaries[static_cast<std::size_t>(category)], m.config.lambda);
  return SaliencyMap{category, s.grid, saliency_from_codes(m, category, s, codes), 1.0};
}

/// Refinement weights from classifier confidences. Single-label: 1 for the
/// argmax (lowest index on ties), 0 elsewhere. Multi-label: by descending
/// rank, ranks 1-2 get 1, ranks beyond max_objects get 0, ranks in between
/// get their confidence min-max rescaled over that rank range.
inline std::vector<double> compute_W(std::span<const double> conf, const DatasetProfile& profile) {
  const std::size_t N = conf.size();
  std::vector<double> W(N, 0.0);
  if (N == 0) return W;
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
  if (!profile.multi_label) {
    W[order[0]] = 1.0;
    return W;
  }
  const std::size_t max_obj = static_cast<std::size_t>(std::max(1, profile.max_objects));
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t r = 2; r < std::min(N, max_obj); ++r) {
    const double c = conf[order[r]];
    lo = any ? std::min(lo, c) : c;
    hi = any ? std::max(hi, c) : c;
    any = true;
  }
  for (std::size_t r = 0; r < N; ++r) {
    const std::size_t n = order[r];
    if (r >= max_obj) W[n] = 0.0;
    else if (r < 2) W[n] = 1.0;
    else W[n] = hi > lo ? std::clamp((conf[n] - lo) / (hi - lo), 0.0, 1.0) : 1.0;
  }
  return W;
}

inline SaliencyMap refine(SaliencyMap map, double W) {
  if (!(W >= 0.0 && W <= 1.0)) throw DimensionError("refinement weight must lie in [0, 1]");
  for (double& v : map.values) v *= W;
  map.weight *= W;
  return map;
}

struct PixelMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Every pixel takes the mean saliency of the patches covering it. Pixels in
/// the uncovered right/bottom margin copy the nearest covered pixel.
inline PixelMap patch_to_pixel(std::span<const double> values, const PatchGrid& grid, int width, int height) {
  if (static_cast<int>(values.size()) != grid.count()) throw DimensionError("map does not match grid");
  const int cw = (grid.cols - 1) * grid.stride + grid.patch_size;
  const int ch = (grid.rows - 1) * grid.stride + grid.patch_size;
  if (cw > width || ch > height) throw DimensionError("grid exceeds image");
  // Patch indices along one axis whose extent contains coordinate p.
  const auto covering = [&](int p, int count) {
    const int hi = std::min(count - 1, p / grid.stride);
    const int lo = std::max(0, (p - grid.patch_size + grid.stride) / grid.stride);
    return std::pair{lo, hi};
  };
  PixelMap out{width, height, std::vector<double>(static_cast<std::size_t>(width) * height)};
  for (int y = 0; y < height; ++y) {
    const auto [r0, r1] = covering(std::min(y, ch - 1), grid.rows);
    for (int x = 0; x < width; ++x) {
      const auto [c0, c1] = covering(std::min(x, cw - 1), grid.cols);
      double sum = 0.0;
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) sum += values[static_cast<std::size_t>(r * grid.cols + c)];
      out.values[static_cast<std::size_t>(y) * width + x] = sum / ((r1 - r0 + 1) * (c1 - c0 + 1));
    }
  }
  return out;
}

/// Per pixel: 1 + argmax category if its value reaches `threshold`, else 0
/// (background). Ties go to the lowest category.
inline LabelImage segment(std::span<const PixelMap> maps, double threshold = 0.5) {
  if (maps.empty()) throw DimensionError("no saliency maps to segment");
  LabelImage out{maps.front().width, maps.front().height, {}};
  for (const auto& m : maps)
    if (m.width != out.width || m.height != out.height) throw DimensionError("saliency maps differ in size");
  out.labels.assign(maps.front().values.size(), 0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    int best = -1;
    double best_v = -1.0;
    for (std::size_t n = 0; n < maps.size(); ++n)
      if (maps[n].values[i] > best_v) best_v = maps[n].values[i], best = static_cast<int>(n);
    out.labels[i] = best_v >= threshold ? best + 1 : 0;
  }
  return out;
}

struct Classification {
  std::vector<double> confidence;  // per category
  std::vector<int> decision;       // per category, +1 / -1
};

inline Classification classify_from_maps(const JointModel& m, const Sample& s, const ImageCodes& codes,
                                         std::span<const std::vector<double>> maps) {
  if (static_cast<int>(m.classifiers.size()) != m.categories()) throw DimensionError("model has no image classifiers");
  const Eigen::VectorXd x = weighted_image_vector(m, s, codes, maps);
  Classification c;
  for (const auto& svm : m.classifiers) c.confidence.push_back(confidence(svm, x));
  c.decision.assign(c.confidence.size(), -1);
  if (m.profile.multi_label) {
    for (std::size_t n = 0; n < c.confidence.size(); ++n) c.decision[n] = c.confidence[n] > 0.0 ? 1 : -1;
  } else {
    const auto best = std::max_element(c.confidence.begin(), c.confidence.end()) - c.confidence.begin();
    c.decision[static_cast<std::size_t>(best)] = 1;
  }
  return c;
}

inline Classification classify_image(const JointModel& m, const Sample& s) {
  const ImageCodes codes = compute_codes(m, s.features);
  return classify_from_maps(m, s, codes, all_saliency(m, s, codes));
}

/// Saliency maps of every category, refined by the classifier's weights.
struct ImageAnalysis {
  std::vector<SaliencyMap> raw;
  std::vector<SaliencyMap> refined;
  Classification classification;
  std::vector<double> weights;
};

inline ImageAnalysis analyze_image(const JointModel& m, const Sample& s) {
  const ImageCodes codes = compute_codes(m, s.features);
  const auto maps = all_saliency(m, s, codes);
  ImageAnalysis a;
  a.classification = classify_from_maps(m, s, codes, maps);
  a.weights = compute_W(a.classification.confidence, m.profile);
  for (int n = 0; n < m.categories(); ++n) {
    a.raw.push_back(SaliencyMap{n, s.grid, maps[static_cast<std::size_t>(n)], 1.0});
    a.refined.push_back(refine(a.raw.back(), a.weights[static_cast<std::size_t>(n)]));
  }
  return a;
}

}  // namespace topsal
