#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "topsal/errors.hpp"
#include "topsal/pipeline.hpp"

namespace topsal::cli {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view text, const std::string& key) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError("config key '" + key + "': '" + std::string(text) + "' is not a valid number");
  }
  return v;
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and
/// malformed lines are errors; absent keys keep their defaults.
inline TrainingConfig parse_config_text(std::string_view text, const std::string& origin = "config") {
  TrainingConfig c;
  using Setter = std::function<void(std::string_view, const std::string&)>;
  const auto i = [](int& f) { return Setter([&f](std::string_view v, const std::string& k) { f = detail::parse_number<int>(v, k); }); };
  const auto d = [](double& f) { return Setter([&f](std::string_view v, const std::string& k) { f = detail::parse_number<double>(v, k); }); };
  const std::map<std::string, Setter, std::less<>> setters{
      {"initial_iters", i(c.initial_iters)},
      {"feedback_rounds", i(c.feedback_rounds)},
      {"rho0", d(c.rho0)},
      {"lambda", d(c.lambda)},
      {"atoms", i(c.atoms)},
      {"background_atoms", i(c.background_atoms)},
      {"nu", i(c.nu)},
      {"label_frac", d(c.label_frac)},
      {"patch_size", i(c.patch_size)},
      {"stride", i(c.stride)},
      {"kmeans_iters", i(c.kmeans_iters)},
      {"patch_svm_cost", d(c.patch_svm_cost)},
      {"image_svm_cost", d(c.image_svm_cost)},
      {"positive_split", d(c.positive_split)},
      {"background_split", d(c.background_split)},
      {"segment_threshold", d(c.segment_threshold)},
      {"seed", Setter([&c](std::string_view v, const std::string& k) { c.seed = detail::parse_number<std::uint64_t>(v, k); })},
      {"threads", i(c.threads)},
  };
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto h = s.find('#'); h != std::string_view::npos) s = s.substr(0, h);
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key(detail::trim(s.substr(0, eq)));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ParseError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(detail::trim(s.substr(eq + 1)), key);
  }
  try {
    c.validate();
  } catch (const UsageError& e) {
    throw ParseError(origin + ": " + e.what());
  }
  return c;
}

inline TrainingConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace topsal::cli
