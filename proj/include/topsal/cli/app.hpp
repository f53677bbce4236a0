#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "topsal/cli/config.hpp"
#include "topsal/cli/emit.hpp"
#include "topsal/cli/manifest.hpp"
#include "topsal/cli/model_io.hpp"
#include "topsal/errors.hpp"
#include "topsal/eval.hpp"
#include "topsal/parallel.hpp"
#include "topsal/pipeline.hpp"

namespace topsal::cli {

struct Command {
  std::string name;  // train, infer, classify, segment, eval, bench; "help" after --help
  std::string config;
  std::string manifest;
  std::string model;
  std::string out;
  std::string category;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string help;  // usage text when name == "help"
};

inline Command parse_args(int argc, const char* const* argv) {
  Command cmd;
  CLI::App app{"Top-down saliency and image classification", "topsal"};
  app.require_subcommand(1);
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", cmd.config, "training configuration (key = value)");
    sub->add_option("--seed", cmd.seed, "random seed, overrides the configuration");
    sub->add_option("--threads", cmd.threads, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* train = app.add_subcommand("train", "train a joint model from a manifest");
  train->add_option("--manifest", cmd.manifest, "training manifest")->required();
  train->add_option("--out", cmd.out, "output directory")->required();
  common(train);
  for (const char* name : {"infer", "classify", "segment", "eval"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--model", cmd.model, "model file")->required();
    sub->add_option("--manifest", cmd.manifest, "image manifest")->required();
    sub->add_option("--out", cmd.out, "output directory")->required();
    if (std::string(name) == "infer") sub->add_option("--category", cmd.category, "single category to map");
    common(sub);
  }
  app.get_subcommand("infer")->description("write per-category saliency maps");
  app.get_subcommand("classify")->description("write per-category classifier confidences");
  app.get_subcommand("segment")->description("write refined maps and label images");
  app.get_subcommand("eval")->description("score maps, segmentation and classification against masks");
  auto* bench = app.add_subcommand("bench", "time global against category-aware coding");
  bench->add_option("--out", cmd.out, "output directory for bench.csv");
  common(bench);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    cmd.name = "help";
    cmd.help = app.help();
    return cmd;
  } catch (const CLI::CallForAllHelp&) {
    cmd.name = "help";
    cmd.help = app.help("", CLI::AppFormatMode::All);
    return cmd;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  cmd.name = app.get_subcommands().front()->get_name();
  return cmd;
}

namespace detail {

inline TrainingConfig command_config(const Command& cmd) {
  TrainingConfig cfg = cmd.config.empty() ? TrainingConfig{} : load_config(cmd.config);
  if (cmd.seed) cfg.seed = *cmd.seed;
  if (cmd.threads) cfg.threads = *cmd.threads;
  return cfg;
}

inline std::filesystem::path prepare_out(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) throw IoError("cannot create output directory " + out);
  return out;
}

/// Loads the model and maps the manifest's categories onto the model's.
struct Inference {
  JointModel model;
  Manifest manifest;
  std::vector<Sample> samples;
};

inline Inference load_inference(const Command& cmd) {
  Inference inf;
  inf.model = load_model(cmd.model);
  if (cmd.threads) inf.model.config.threads = *cmd.threads;
  inf.manifest = load_manifest(cmd.manifest);
  const auto& model_cats = inf.model.profile.categories;
  for (const auto& c : inf.manifest.categories)
    if (std::find(model_cats.begin(), model_cats.end(), c) == model_cats.end())
      throw ParseError("manifest category '" + c + "' is unknown to the model");
  inf.manifest.categories = model_cats;
  inf.samples = load_samples(inf.manifest, inf.model.config);
  return inf;
}

inline std::string map_stem(const Sample& s, const std::string& category) { return s.id + "_" + category; }

inline PixelMap pixel_map(const SaliencyMap& m, const Sample& s) {
  return patch_to_pixel(m.values, m.grid, s.width, s.height);
}

inline bool has_ground_truth(const Sample& s) {
  return !s.patch_labels.empty() && !s.patch_labels.front().empty();
}

inline LabelImage ground_truth_labels(const Sample& s) {
  LabelImage gt{s.width, s.height, std::vector<int>(static_cast<std::size_t>(s.width) * s.height, 0)};
  for (std::size_t i = 0; i < gt.labels.size(); ++i)
    for (std::size_t n = 0; n < s.masks.size(); ++n)
      if (s.masks[n].bits[i]) {
        gt.labels[i] = static_cast<int>(n) + 1;
        break;
      }
  return gt;
}

inline BinaryMask threshold_mask(const PixelMap& m, double threshold) {
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) out.bits[i] = m.values[i] >= threshold ? 1 : 0;
  return out;
}

inline double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline int run_train(const Command& cmd, std::ostream& out) {
  const TrainingConfig cfg = detail::command_config(cmd);
  const auto dir = detail::prepare_out(cmd.out);
  const Manifest manifest = load_manifest(cmd.manifest);
  const auto samples = load_samples(manifest, cfg);
  std::vector<std::vector<int>> label_sets;
  for (const auto& s : samples) label_sets.push_back(s.labels);
  const DatasetProfile profile = derive_profile(manifest.categories, label_sets);
  TrainingReport report;
  const JointModel m = train_joint_model(samples, profile, cfg, &report);
  save_model(dir / "model.tdsm", m);
  out << "trained " << profile.size() << " categories on " << samples.size() << " images ("
      << report.split.first.size() << " with saliency ground truth)\n";
  for (int n = 0; n < profile.size(); ++n) {
    out << "  " << profile.categories[static_cast<std::size_t>(n)] << ": structured hinge "
        << report.hinge_before[static_cast<std::size_t>(n)] << " -> " << report.hinge_after[static_cast<std::size_t>(n)]
        << '\n';
  }
  out << "model written to " << (dir / "model.tdsm").string() << '\n';
  return 0;
}

inline int run_infer(const Command& cmd, std::ostream& out) {
  const auto dir = detail::prepare_out(cmd.out);
  const auto inf = detail::load_inference(cmd);
  const auto& cats = inf.model.profile.categories;
  std::vector<int> which;
  if (cmd.category.empty()) {
    for (int n = 0; n < inf.model.categories(); ++n) which.push_back(n);
  } else {
    const auto it = std::find(cats.begin(), cats.end(), cmd.category);
    if (it == cats.end()) throw UsageError("unknown category '" + cmd.category + "'");
    which.push_back(static_cast<int>(it - cats.begin()));
  }
  parallel_for(inf.samples.size(), inf.model.config.threads, [&](std::size_t i) {
    const Sample& s = inf.samples[i];
    for (int n : which) {
      const SaliencyMap map = infer_saliency(inf.model, s, n);
      emit_saliency(dir / detail::map_stem(s, cats[static_cast<std::size_t>(n)]), map, s.width, s.height);
    }
  });
  out << "wrote " << inf.samples.size() * which.size() << " saliency maps to " << dir.string() << '\n';
  return 0;
}

inline int run_classify(const Command& cmd, std::ostream& out) {
  const auto dir = detail::prepare_out(cmd.out);
  const auto inf = detail::load_inference(cmd);
  std::vector<Classification> res(inf.samples.size());
  parallel_for(inf.samples.size(), inf.model.config.threads,
               [&](std::size_t i) { res[i] = classify_image(inf.model, inf.samples[i]); });
  std::ofstream csv(dir / "classification.csv");
  if (!csv) throw IoError("cannot write classification.csv");
  csv << "image,category,confidence,decision\n" << std::setprecision(17);
  for (std::size_t i = 0; i < res.size(); ++i)
    for (int n = 0; n < inf.model.categories(); ++n)
      csv << inf.samples[i].id << ',' << inf.model.profile.categories[static_cast<std::size_t>(n)] << ','
          << res[i].confidence[static_cast<std::size_t>(n)] << ',' << res[i].decision[static_cast<std::size_t>(n)]
          << '\n';
  out << "classified " << res.size() << " images\n";
  return 0;
}

inline int run_segment(const Command& cmd, std::ostream& out) {
  const auto dir = detail::prepare_out(cmd.out);
  const auto inf = detail::load_inference(cmd);
  const auto& cats = inf.model.profile.categories;
  parallel_for(inf.samples.size(), inf.model.config.threads, [&](std::size_t i) {
    const Sample& s = inf.samples[i];
    const ImageAnalysis a = analyze_image(inf.model, s);
    std::vector<PixelMap> maps;
    for (std::size_t n = 0; n < a.refined.size(); ++n) {
      emit_saliency(dir / (detail::map_stem(s, cats[n]) + "_refined"), a.refined[n], s.width, s.height);
      maps.push_back(detail::pixel_map(a.refined[n], s));
    }
    write_label_image(dir / (s.id + "_labels.pgm"), segment(maps, inf.model.config.segment_threshold));
  });
  out << "segmented " << inf.samples.size() << " images\n";
  return 0;
}

struct CategoryMetrics {
  double eer_raw = 0.0;        // pooled over all patches
  double eer_refined = 0.0;
  double eer_raw_per_image = 0.0;  // mean over images containing the category
  double eer_refined_per_image = 0.0;
  double iou = 0.0;            // mean over images containing the category
  double classification_accuracy = 0.0;
};

struct EvalReport {
  std::vector<CategoryMetrics> categories;
  double pixel_accuracy = 0.0;  // mean over images of the class-averaged accuracy
};

inline EvalReport evaluate(const JointModel& m, std::span<const Sample> samples) {
  for (const auto& s : samples)
    if (!detail::has_ground_truth(s)) throw DimensionError("eval needs a mask for every labelled image: " + s.id);
  const int N = m.categories();
  const double thr = m.config.segment_threshold;
  std::vector<ImageAnalysis> an(samples.size());
  parallel_for(samples.size(), m.config.threads, [&](std::size_t i) { an[i] = analyze_image(m, samples[i]); });
  EvalReport rep;
  for (int n = 0; n < N; ++n) {
    const auto u = static_cast<std::size_t>(n);
    std::vector<double> raw, ref;
    std::vector<int> gt;
    std::vector<double> per_raw, per_ref, ious;
    long correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      const auto& g = s.patch_labels[u];
      raw.insert(raw.end(), an[i].raw[u].values.begin(), an[i].raw[u].values.end());
      ref.insert(ref.end(), an[i].refined[u].values.begin(), an[i].refined[u].values.end());
      gt.insert(gt.end(), g.begin(), g.end());
      if (std::find(g.begin(), g.end(), 1) != g.end()) {
        per_raw.push_back(precision_at_eer(pr_curve(an[i].raw[u].values, g)));
        per_ref.push_back(precision_at_eer(pr_curve(an[i].refined[u].values, g)));
      }
      if (s.has(n)) ious.push_back(iou(detail::threshold_mask(detail::pixel_map(an[i].refined[u], s), thr), s.masks[u]));
      if ((an[i].classification.decision[u] > 0) == s.has(n)) ++correct;
    }
    CategoryMetrics cm;
    const bool any = std::find(gt.begin(), gt.end(), 1) != gt.end();
    cm.eer_raw = any ? precision_at_eer(pr_curve(raw, gt)) : std::numeric_limits<double>::quiet_NaN();
    cm.eer_refined = any ? precision_at_eer(pr_curve(ref, gt)) : std::numeric_limits<double>::quiet_NaN();
    cm.eer_raw_per_image = detail::mean_or_nan(per_raw);
    cm.eer_refined_per_image = detail::mean_or_nan(per_ref);
    cm.iou = detail::mean_or_nan(ious);
    cm.classification_accuracy = samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size());
    rep.categories.push_back(cm);
  }
  std::vector<double> acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<PixelMap> maps;
    for (const auto& r : an[i].refined) maps.push_back(detail::pixel_map(r, samples[i]));
    acc.push_back(pixel_accuracy(segment(maps, thr), detail::ground_truth_labels(samples[i]), N + 1).mean);
  }
  rep.pixel_accuracy = detail::mean_or_nan(acc);
  return rep;
}

inline int run_eval(const Command& cmd, std::ostream& out) {
  const auto dir = detail::prepare_out(cmd.out);
  const auto inf = detail::load_inference(cmd);
  const EvalReport rep = evaluate(inf.model, inf.samples);
  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw IoError("cannot write metrics.csv");
  csv << "category,metric,value\n" << std::setprecision(17);
  out << std::fixed << std::setprecision(4);
  for (std::size_t n = 0; n < rep.categories.size(); ++n) {
    const auto& name = inf.model.profile.categories[n];
    const auto& c = rep.categories[n];
    const std::pair<const char*, double> rows[] = {
        {"eer_precision_raw", c.eer_raw},
        {"eer_precision_refined", c.eer_refined},
        {"eer_precision_raw_per_image", c.eer_raw_per_image},
        {"eer_precision_refined_per_image", c.eer_refined_per_image},
        {"iou", c.iou},
        {"classification_accuracy", c.classification_accuracy},
    };
    for (const auto& [metric, value] : rows) {
      csv << name << ',' << metric << ',' << value << '\n';
      out << name << ' ' << metric << ' ' << value << '\n';
    }
  }
  csv << "all,pixel_accuracy," << rep.pixel_accuracy << '\n';
  out << "all pixel_accuracy " << rep.pixel_accuracy << '\n';
  return 0;
}

inline int run_bench(const Command& cmd, std::ostream& out) {
  const std::uint64_t seed = cmd.seed.value_or(1);
  const CodingBenchmark b = coding_benchmark(3, 64, 128, 1000, seed);
  out << "global feature-sign      " << b.global_seconds * 1e6 << " us/feature\n"
      << "category-aware (max+2nd) " << b.category_aware_seconds * 1e6 << " us/feature\n"
      << "speed-up                 " << b.ratio << "x\n";
  if (!cmd.out.empty()) {
    const auto dir = detail::prepare_out(cmd.out);
    std::ofstream csv(dir / "bench.csv");
    if (!csv) throw IoError("cannot write bench.csv");
    csv << "global_seconds,category_aware_seconds,ratio,global_sparsity,category_sparsity,sub_dictionary_size\n"
        << std::setprecision(17) << b.global_seconds << ',' << b.category_aware_seconds << ',' << b.ratio << ','
        << b.global_sparsity << ',' << b.category_sparsity << ',' << b.sub_dictionary_size << '\n';
  }
  return 0;
}

inline int run(const Command& cmd, std::ostream& out) {
  if (cmd.name == "help") {
    out << cmd.help;
    return 0;
  }
  if (cmd.name == "train") return run_train(cmd, out);
  if (cmd.name == "infer") return run_infer(cmd, out);
  if (cmd.name == "classify") return run_classify(cmd, out);
  if (cmd.name == "segment") return run_segment(cmd, out);
  if (cmd.name == "eval") return run_eval(cmd, out);
  if (cmd.name == "bench") return run_bench(cmd, out);
  throw UsageError("unknown command '" + cmd.name + "'");
}

/// Full entry point: parses, runs and maps errors to exit codes.
inline int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    return run(parse_args(argc, argv), out);
  } catch (const Error& e) {
    err << "topsal: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::bad_alloc&) {
    err << "topsal: out of memory\n";
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "topsal: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
}

}  // namespace topsal::cli
