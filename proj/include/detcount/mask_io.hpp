// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file mask_io.hpp
 * @brief Binary mask input: run-length encoding and 8-bit grayscale files.
 *
 * RLE: alternating background/foreground run lengths over row-major pixels,
 * starting with a (possibly zero-length) background run. Runs must cover
 * exactly width * height pixels.
 *
 * Image files: binary or plain PGM (P5/P2) and 8-bit grayscale PNG. Any
 * nonzero pixel is foreground.
 */

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "detcount/metrics.hpp"

namespace detcount {

struct MaskIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline BinaryMask decode_rle(std::size_t width, std::size_t height, const std::vector<std::uint64_t>& counts) {
  BinaryMask mask(width, height, 0);
  std::uint64_t pos = 0;
  const std::uint64_t total = static_cast<std::uint64_t>(width) * height;
  bool fg = false;
  for (std::uint64_t run : counts) {
    if (run > total - pos) throw MaskIoError("RLE runs exceed the mask size");
    if (fg) std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(pos), run, std::uint8_t{1});
    pos += run;
    fg = !fg;
  }
  if (pos != total) throw MaskIoError("RLE runs do not cover the mask");
  return mask;
}

inline std::vector<std::uint64_t> encode_rle(const BinaryMask& mask) {
  std::vector<std::uint64_t> counts;
  bool fg = false;
  std::uint64_t run = 0;
  for (std::uint8_t v : mask.data) {
    if ((v != 0) != fg) {
      counts.push_back(run);
      run = 0;
      fg = !fg;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  if (tok.empty()) throw MaskIoError("truncated PGM header");
  return tok;
}

inline std::size_t pnm_number(std::istream& in) {
  const std::string tok = next_pnm_token(in);
  try {
    return static_cast<std::size_t>(std::stoul(tok));
  } catch (const std::exception&) {
    throw MaskIoError("bad PGM header value '" + tok + "'");
  }
}

inline BinaryMask read_pgm(std::istream& in) {
  const std::string magic = next_pnm_token(in);
  if (magic != "P5" && magic != "P2") throw MaskIoError("not a PGM file");
  const std::size_t w = pnm_number(in);
  const std::size_t h = pnm_number(in);
  const std::size_t maxval = pnm_number(in);
  if (maxval == 0 || maxval > 255) throw MaskIoError("only 8-bit PGM masks are supported");
  BinaryMask mask(w, h, 0);
  if (magic == "P5") {
    std::vector<char> raw(w * h);
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) throw MaskIoError("truncated PGM data");
    for (std::size_t i = 0; i < raw.size(); ++i) mask.data[i] = raw[i] != 0 ? 1 : 0;
  } else {
    for (std::size_t i = 0; i < w * h; ++i) mask.data[i] = pnm_number(in) != 0 ? 1 : 0;
  }
  return mask;
}

// Any PNG is converted to 8-bit gray by libpng before thresholding.
inline BinaryMask read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw MaskIoError("failed to read PNG mask '" + path + "': " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw MaskIoError("failed to decode PNG mask '" + path + "': " + msg);
  }
  BinaryMask mask(image.width, image.height, 0);
  for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = buffer[i] != 0 ? 1 : 0;
  return mask;
}

}  // namespace detail

inline BinaryMask read_mask_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MaskIoError("cannot open mask file '" + path + "'");
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), sizeof(sig));
  if (in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return detail::read_png(path);
  in.clear();
  in.seekg(0);
  return detail::read_pgm(in);
}

inline void write_pgm(const std::string& path, const BinaryMask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MaskIoError("cannot write mask file '" + path + "'");
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (std::uint8_t v : mask.data) out.put(static_cast<char>(v ? 255 : 0));
}

inline void write_png(const std::string& path, const BinaryMask& mask) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(mask.width);
  image.height = static_cast<png_uint_32>(mask.height);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(mask.data.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = mask.data[i] ? 255 : 0;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw MaskIoError("failed to write PNG mask '" + path + "': " + image.message);
  }
}

}  // namespace detcount
