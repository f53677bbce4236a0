#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "topsal/cli/config.hpp"
#include "topsal/errors.hpp"
#include "topsal/image.hpp"
#include "topsal/parallel.hpp"
#include "topsal/pipeline.hpp"

namespace topsal::cli {

struct ManifestRow {
  std::filesystem::path image;
  std::filesystem::path mask;  // empty when the row has "-"
  std::vector<std::string> labels;
};

/// CSV rows `image,mask,labels` (labels separated by ';'). Relative paths
/// resolve against the manifest's directory. An optional
/// `# categories: a;b;c` line fixes the category order; otherwise it is the
/// sorted set of labels seen. In a multi-label row, mask pixel value i
/// (1-based) marks the i-th listed label; a single label takes every
/// nonzero pixel.
struct Manifest {
  std::vector<std::string> categories;
  std::vector<ManifestRow> rows;

  int category_index(const std::string& name) const {
    const auto it = std::find(categories.begin(), categories.end(), name);
    return it == categories.end() ? -1 : static_cast<int>(it - categories.begin());
  }

  std::vector<int> label_indices(const ManifestRow& row) const {
    std::vector<int> out;
    for (const auto& l : row.labels) out.push_back(category_index(l));
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base, const std::string& origin,
                               bool check_paths = true) {
  Manifest m;
  bool declared = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view s = detail::trim(line);
    if (s.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (s.front() == '#') {
      const std::string_view body = detail::trim(s.substr(1));
      constexpr std::string_view kKey = "categories:";
      if (body.substr(0, kKey.size()) == kKey) {
        for (auto& c : detail::split(body.substr(kKey.size()), ';'))
          if (!c.empty()) m.categories.push_back(c);
        declared = true;
      }
      continue;
    }
    if (s == "image,mask,labels") continue;
    const auto fields = detail::split(s, ',');
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw ParseError(where + ": expected 'image,mask,labels'");
    }
    ManifestRow row;
    row.image = base / fields[0];
    if (fields[1] != "-") row.mask = base / fields[1];
    if (!fields[2].empty())
      for (auto& l : detail::split(fields[2], ';')) {
        if (l.empty()) throw ParseError(where + ": empty label");
        row.labels.push_back(l);
      }
    if (check_paths) {
      if (!std::filesystem::exists(row.image)) throw IoError(where + ": missing image " + row.image.string());
      if (!row.mask.empty() && !std::filesystem::exists(row.mask))
        throw IoError(where + ": missing mask " + row.mask.string());
    }
    m.rows.push_back(std::move(row));
  }
  if (!declared) {
    std::set<std::string> seen;
    for (const auto& r : m.rows) seen.insert(r.labels.begin(), r.labels.end());
    m.categories.assign(seen.begin(), seen.end());
  }
  for (const auto& r : m.rows)
    for (const auto& l : r.labels)
      if (m.category_index(l) < 0) throw ParseError(origin + ": label '" + l + "' is not a declared category");
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), path.string());
}

/// Per-category object masks of one row, in category order (empty for
/// absent categories); empty vector when the row has no mask.
inline std::vector<BinaryMask> load_row_masks(const Manifest& m, const ManifestRow& row, int width, int height) {
  if (row.mask.empty()) return {};
  const GrayImage img = load_gray_image(row.mask.string());
  if (img.width != width || img.height != height) throw DimensionError(row.mask.string() + ": mask size differs from image");
  std::vector<BinaryMask> masks(m.categories.size());
  for (std::size_t i = 0; i < row.labels.size(); ++i) {
    const int value = row.labels.size() == 1 ? -1 : static_cast<int>(i + 1);
    masks[static_cast<std::size_t>(m.category_index(row.labels[i]))] = mask_from_image(img, value);
  }
  return masks;
}

inline Sample load_sample(const Manifest& m, const ManifestRow& row, const TrainingConfig& cfg) {
  const GrayImage img = load_gray_image(row.image.string());
  const auto masks = load_row_masks(m, row, img.width, img.height);
  return make_sample(row.image.stem().string(), img, m.label_indices(row), masks,
                     static_cast<int>(m.categories.size()), cfg);
}

inline std::vector<Sample> load_samples(const Manifest& m, const TrainingConfig& cfg) {
  std::vector<Sample> out(m.rows.size());
  parallel_for(m.rows.size(), cfg.threads, [&](std::size_t i) { out[i] = load_sample(m, m.rows[i], cfg); });
  return out;
}

}  // namespace topsal::cli
