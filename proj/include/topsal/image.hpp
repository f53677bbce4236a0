#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <string>
#include <vector>

#include "topsal/errors.hpp"

namespace topsal {

/// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
    if (w < 0 || h < 0) throw DimensionError("negative image size");
  }

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Integer BT.601 luma with rounding.
inline std::uint8_t luma_bt601(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

/// Raw decoded PGM: sample values plus the declared maxval (255 or up to 65535).
struct PgmData {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> samples;
};

namespace detail {

inline std::string read_pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

inline int parse_pnm_int(const std::string& tok, const std::string& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError("malformed PGM header in " + path);
  }
}

}  // namespace detail

inline PgmData read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (detail::read_pnm_token(in) != "P5") throw FormatError(path + ": not a binary PGM (P5)");
  PgmData out;
  out.width = detail::parse_pnm_int(detail::read_pnm_token(in), path);
  out.height = detail::parse_pnm_int(detail::read_pnm_token(in), path);
  out.maxval = detail::parse_pnm_int(detail::read_pnm_token(in), path);
  if (out.maxval < 1 || out.maxval > 65535) throw FormatError(path + ": bad PGM maxval");
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height;
  const std::size_t bytes_per = out.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw FormatError(path + ": truncated PGM");
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = bytes_per == 1 ? raw[i]
                                    : static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
  return out;
}

inline void write_pgm8(const std::string& path, int width, int height,
                       const std::vector<std::uint8_t>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(samples.size()));
  if (!out) throw IoError("write failed: " + path);
}

// 16-bit PGM samples are big-endian.
inline void write_pgm16(const std::string& path, int width, int height,
                        const std::vector<std::uint16_t>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << width << ' ' << height << "\n65535\n";
  std::vector<unsigned char> raw(samples.size() * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    raw[2 * i] = static_cast<unsigned char>(samples[i] >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(samples[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  write_pgm8(path, img.width, img.height, img.pixels);
}

/// Reads an 8-bit PNG; RGB(A) input is reduced to gray with BT.601 luma.
inline GrayImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError(path + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(path + ": " + msg);
  }
  GrayImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (color) {
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      out.pixels[i] = luma_bt601(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
    }
  } else {
    std::copy(buffer.begin(), buffer.end(), out.pixels.begin());
  }
  return out;
}

inline void write_png(const std::string& path, const GrayImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError(path + ": " + image.message);
  }
}

/// Loads an 8-bit grayscale image from PGM (P5) or PNG, chosen by file signature.
inline GrayImage load_gray_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path);
  char sig[2] = {0, 0};
  probe.read(sig, 2);
  if (sig[0] == 'P' && sig[1] == '5') {
    PgmData pgm = read_pgm(path);
    if (pgm.maxval > 255) throw FormatError(path + ": expected 8-bit PGM input");
    GrayImage out(pgm.width, pgm.height);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = static_cast<std::uint8_t>(pgm.samples[i]);
    return out;
  }
  if (static_cast<unsigned char>(sig[0]) == 0x89 && sig[1] == 'P') return read_png(path);
  throw FormatError(path + ": unsupported image format (expected PGM P5 or PNG)");
}

}  // namespace topsal
