#pragma once

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "topsal/cli/config.hpp"
#include "topsal/errors.hpp"
#include "topsal/pipeline.hpp"

namespace topsal::cli {

inline constexpr char kModelMagic[4] = {'T', 'D', 'S', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

namespace detail {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_floats(const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put(static_cast<float>(data[i]));
  }

  std::vector<char> bytes;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_ + at_, n);
    at_ += n;
    return s;
  }
  void get_floats(double* out, std::size_t n) {
    need(n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) out[i] = get<float>();
  }
  bool done() const { return at_ == size_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - at_) throw FormatError("model payload is truncated");
  }

  const char* data_;
  std::size_t size_;
  std::size_t at_ = 0;
};

inline void put_matrix(Writer& w, const Eigen::MatrixXd& m) {
  // Row-major order.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  w.put_floats(rm.data(), static_cast<std::size_t>(rm.size()));
}

inline Eigen::MatrixXd get_matrix(Reader& r, int rows, int cols) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  r.get_floats(rm.data(), static_cast<std::size_t>(rm.size()));
  return rm;
}

inline void check_count(std::uint32_t v, std::uint32_t limit, const char* what) {
  if (v == 0 || v > limit) throw FormatError(std::string("model has an implausible ") + what);
}

inline CategoryDictionary make_dictionary(int category, Eigen::MatrixXd atoms) {
  try {
    return CategoryDictionary(category, std::move(atoms));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model dictionary is invalid: ") + e.what());
  }
}

}  // namespace detail

/// Throws NumericError if any learned parameter is NaN or infinite.
inline void require_finite(const JointModel& m) {
  bool ok = m.background.atoms().allFinite();
  for (const auto& d : m.dictionaries) ok = ok && d.atoms().allFinite();
  for (const auto& c : m.crfs) ok = ok && c.w.allFinite() && std::isfinite(c.gamma);
  for (const auto& c : m.classifiers) ok = ok && c.v.allFinite() && std::isfinite(c.b);
  if (!ok) throw NumericError("model contains non-finite parameters");
}

inline std::vector<char> encode_payload(const JointModel& m) {
  detail::Writer w;
  const auto N = static_cast<std::uint32_t>(m.categories());
  if (m.dictionaries.size() != N || m.crfs.size() != N) throw DimensionError("model is incomplete");
  w.put(N);
  for (const auto& c : m.profile.categories) w.put_string(c);
  w.put(static_cast<std::uint8_t>(m.profile.multi_label));
  w.put(static_cast<std::int32_t>(m.profile.max_objects));
  w.put_string(m.config.to_text());
  const int dim = m.background.dim();
  w.put(static_cast<std::uint32_t>(dim));
  for (const auto& d : m.dictionaries) {
    if (d.dim() != dim) throw DimensionError("dictionaries differ in dimension");
    w.put(static_cast<std::uint32_t>(d.size()));
  }
  w.put(static_cast<std::uint32_t>(m.background.size()));
  for (std::uint32_t n = 0; n < N; ++n) {
    detail::put_matrix(w, m.dictionaries[n].atoms());
    const auto& crf = m.crfs[n];
    if (crf.w.size() != m.dictionaries[n].size() + 1) throw DimensionError("CRF weights do not match dictionary");
    w.put_floats(crf.w.data(), static_cast<std::size_t>(crf.w.size()));
    w.put(static_cast<float>(crf.gamma));
  }
  detail::put_matrix(w, m.background.atoms());
  w.put(static_cast<std::uint32_t>(m.classifiers.size()));
  for (const auto& c : m.classifiers) {
    w.put(static_cast<std::uint32_t>(c.v.size()));
    w.put_floats(c.v.data(), static_cast<std::size_t>(c.v.size()));
    w.put(static_cast<float>(c.b));
    w.put(static_cast<float>(c.cost));
  }
  return std::move(w.bytes);
}

inline JointModel decode_payload(const char* data, std::size_t size) {
  detail::Reader r(data, size);
  JointModel m;
  const auto N = r.get<std::uint32_t>();
  detail::check_count(N, 1u << 16, "category count");
  for (std::uint32_t n = 0; n < N; ++n) m.profile.categories.push_back(r.get_string());
  m.profile.multi_label = r.get<std::uint8_t>() != 0;
  m.profile.max_objects = r.get<std::int32_t>();
  try {
    m.config = parse_config_text(r.get_string(), "model config");
  } catch (const ParseError& e) {
    throw FormatError(e.what());
  }
  const auto dim = r.get<std::uint32_t>();
  detail::check_count(dim, 1u << 16, "descriptor dimension");
  std::vector<std::uint32_t> sizes(N);
  for (auto& s : sizes) {
    s = r.get<std::uint32_t>();
    detail::check_count(s, 1u << 16, "dictionary size");
  }
  const auto bg = r.get<std::uint32_t>();
  detail::check_count(bg, 1u << 16, "dictionary size");
  for (std::uint32_t n = 0; n < N; ++n) {
    m.dictionaries.push_back(detail::make_dictionary(static_cast<int>(n), detail::get_matrix(r, static_cast<int>(dim), static_cast<int>(sizes[n]))));
    CrfModel crf;
    crf.category = static_cast<int>(n);
    crf.w.resize(static_cast<Eigen::Index>(sizes[n]) + 1);
    r.get_floats(crf.w.data(), static_cast<std::size_t>(crf.w.size()));
    crf.gamma = r.get<float>();
    m.crfs.push_back(std::move(crf));
  }
  m.background = detail::make_dictionary(static_cast<int>(N), detail::get_matrix(r, static_cast<int>(dim), static_cast<int>(bg)));
  const auto nc = r.get<std::uint32_t>();
  if (nc != 0 && nc != N) throw FormatError("classifier count does not match categories");
  for (std::uint32_t n = 0; n < nc; ++n) {
    SvmModel c;
    const auto d = r.get<std::uint32_t>();
    detail::check_count(d, 1u << 24, "classifier dimension");
    c.v.resize(static_cast<Eigen::Index>(d));
    r.get_floats(c.v.data(), d);
    c.b = r.get<float>();
    c.cost = r.get<float>();
    m.classifiers.push_back(std::move(c));
  }
  if (!r.done()) throw FormatError("trailing bytes in model payload");
  m.rebuild_global();
  return m;
}

/// File layout: magic, u32 version, u64 payload length, payload, u32 CRC-32
/// of the payload. All integers little-endian.
inline std::vector<char> encode_model(const JointModel& m) {
  require_finite(m);
  const std::vector<char> payload = encode_payload(m);
  detail::Writer w;
  w.bytes.assign(std::begin(kModelMagic), std::end(kModelMagic));
  w.put(kModelVersion);
  w.put(static_cast<std::uint64_t>(payload.size()));
  w.bytes.insert(w.bytes.end(), payload.begin(), payload.end());
  w.put(static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()))));
  return std::move(w.bytes);
}

inline JointModel decode_model(const std::vector<char>& file) {
  if (file.size() < 4 || std::memcmp(file.data(), kModelMagic, 4) != 0) throw BadMagicError("not a TDSM model file");
  detail::Reader head(file.data() + 4, file.size() - 4);
  const auto version = head.get<std::uint32_t>();
  if (version != kModelVersion) throw VersionError("unsupported model version " + std::to_string(version));
  const auto length = head.get<std::uint64_t>();
  constexpr std::size_t kHeader = 4 + 4 + 8;
  if (length > file.size() - kHeader || file.size() - kHeader - length < 4) throw FormatError("model file is truncated");
  if (file.size() - kHeader - length != 4) throw FormatError("model file has trailing bytes");
  const char* payload = file.data() + kHeader;
  std::uint32_t stored;
  std::memcpy(&stored, payload + length, 4);
  const auto actual = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload), static_cast<uInt>(length)));
  if (stored != actual) throw CrcError("model checksum mismatch");
  return decode_payload(payload, static_cast<std::size_t>(length));
}

inline void save_model(const std::filesystem::path& path, const JointModel& m) {
  const auto bytes = encode_model(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline JointModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace topsal::cli
