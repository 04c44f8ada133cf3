// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file response.hpp
 * @brief Detect-to-count response format.
 *
 * A response carries three tagged blocks, in any order, each exactly once:
 *
 *   <think>free text</think>
 *   <detection>[{"bbox_2d": [x1, y1, x2, y2], "point_2d": [x, y], "label": "fish"}, ...]</detection>
 *   <fish_count>N</fish_count>
 *
 * Tags are case-sensitive. Text around and between the blocks is ignored. A
 * block body runs verbatim up to the first matching closing tag, so a think
 * body may contain '<' or even other opening tags, but never its own
 * closing tag.
 */

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "detcount/geometry.hpp"

namespace detcount {

inline constexpr std::string_view kFishLabel = "fish";

struct Detection {
  Box bbox;
  Point point;
  std::string label{kFishLabel};

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct ParsedResponse {
  std::string think;
  std::vector<Detection> detections;
  std::size_t fish_count = 0;

  friend bool operator==(const ParsedResponse&, const ParsedResponse&) = default;
};

struct FormatReport {
  bool structure_ok = false;  ///< all three tags present, each exactly once
  std::size_t entries_total = 0;
  std::size_t entries_well_formed = 0;

  friend bool operator==(const FormatReport&, const FormatReport&) = default;
};

struct ParseResult {
  std::optional<ParsedResponse> response;  ///< set iff structure_ok and fish_count is an integer
  FormatReport format;
};

namespace detail {

struct TagSpan {
  std::string_view body;
  std::size_t occurrences = 0;
  bool closed = true;
};

struct TaggedBlocks {
  TagSpan think;
  TagSpan detection;
  TagSpan fish_count;
};

inline constexpr std::string_view kTagNames[] = {"think", "detection", "fish_count"};

inline TagSpan& block_for(TaggedBlocks& blocks, std::size_t tag) {
  switch (tag) {
    case 0: return blocks.think;
    case 1: return blocks.detection;
    default: return blocks.fish_count;
  }
}

// Left-to-right scan: take the earliest opening tag, consume through its
// first closing tag, repeat. An opening tag without a closing tag ends the scan.
inline TaggedBlocks scan_tags(std::string_view text) {
  TaggedBlocks blocks;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best = std::string_view::npos;
    std::size_t best_tag = 0;
    for (std::size_t t = 0; t < 3; ++t) {
      const std::string open = "<" + std::string(kTagNames[t]) + ">";
      const std::size_t at = text.find(open, pos);
      if (at < best) {
        best = at;
        best_tag = t;
      }
    }
    if (best == std::string_view::npos) break;

    const std::string open = "<" + std::string(kTagNames[best_tag]) + ">";
    const std::string close = "</" + std::string(kTagNames[best_tag]) + ">";
    TagSpan& span = block_for(blocks, best_tag);
    const std::size_t body_begin = best + open.size();
    const std::size_t end = text.find(close, body_begin);
    ++span.occurrences;
    if (end == std::string_view::npos) {
      span.closed = false;
      break;
    }
    if (span.occurrences == 1) span.body = text.substr(body_begin, end - body_begin);
    pos = end + close.size();
  }
  return blocks;
}

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::optional<std::size_t> parse_count(std::string_view body) {
  body = trim(body);
  if (body.empty()) return std::nullopt;
  for (char c : body) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (ec != std::errc{} || ptr != body.data() + body.size()) return std::nullopt;
  if (value > std::numeric_limits<std::size_t>::max()) return std::nullopt;
  return static_cast<std::size_t>(value);
}

template <std::size_t N>
bool read_numbers(const nlohmann::json& j, double (&out)[N]) {
  if (!j.is_array() || j.size() != N) return false;
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number()) return false;
    out[i] = j[i].get<double>();
    if (!std::isfinite(out[i])) return false;
  }
  return true;
}

inline std::optional<Detection> read_entry(const nlohmann::json& entry) {
  if (!entry.is_object() || entry.size() != 3) return std::nullopt;
  const auto bbox = entry.find("bbox_2d");
  const auto point = entry.find("point_2d");
  const auto label = entry.find("label");
  if (bbox == entry.end() || point == entry.end() || label == entry.end()) return std::nullopt;
  if (!label->is_string() || label->get_ref<const std::string&>() != kFishLabel) return std::nullopt;

  double b[4];
  double p[2];
  if (!read_numbers(*bbox, b) || !read_numbers(*point, p)) return std::nullopt;

  Detection d;
  d.bbox = Box{b[0], b[1], b[2], b[3]}.normalized();
  d.point = Point{p[0], p[1]};
  d.label = label->get<std::string>();
  return d;
}

// A body that is not a JSON array counts as one malformed entry; a blank
// body is an empty list.
inline void parse_detection_block(std::string_view body, std::vector<Detection>& out,
                                  FormatReport& report) {
  if (trim(body).empty()) return;
  const nlohmann::json parsed = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded() || !parsed.is_array()) {
    report.entries_total = 1;
    return;
  }
  report.entries_total = parsed.size();
  for (const auto& entry : parsed) {
    if (auto det = read_entry(entry)) {
      out.push_back(std::move(*det));
      ++report.entries_well_formed;
    }
  }
}

inline nlohmann::json number_json(double v) {
  constexpr double kExactIntLimit = 9007199254740992.0;  // 2^53
  if (std::floor(v) == v && std::fabs(v) < kExactIntLimit) {
    return nlohmann::json(static_cast<std::int64_t>(v));
  }
  return nlohmann::json(v);
}

}  // namespace detail

/// Never throws on malformed text; all malformation lands in the FormatReport.
inline ParseResult parse_response(std::string_view text) {
  ParseResult result;
  const detail::TaggedBlocks blocks = detail::scan_tags(text);

  auto exactly_once = [](const detail::TagSpan& s) { return s.occurrences == 1 && s.closed; };
  result.format.structure_ok = exactly_once(blocks.think) && exactly_once(blocks.detection) &&
                               exactly_once(blocks.fish_count);

  std::vector<Detection> detections;
  if (blocks.detection.occurrences > 0) {
    detail::parse_detection_block(blocks.detection.body, detections, result.format);
  }

  if (!result.format.structure_ok) return result;
  const auto count = detail::parse_count(blocks.fish_count.body);
  if (!count) return result;

  result.response = ParsedResponse{std::string(blocks.think.body), std::move(detections), *count};
  return result;
}

/// Renders the detection list in the entry schema, keys in schema order.
inline std::string serialize_detections(const std::vector<Detection>& detections) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& d : detections) {
    nlohmann::ordered_json entry;
    entry["bbox_2d"] = {detail::number_json(d.bbox.x1), detail::number_json(d.bbox.y1),
                        detail::number_json(d.bbox.x2), detail::number_json(d.bbox.y2)};
    entry["point_2d"] = {detail::number_json(d.point.x), detail::number_json(d.point.y)};
    entry["label"] = d.label;
    arr.push_back(std::move(entry));
  }
  return arr.dump();
}

/// Throws std::invalid_argument when the think body contains "</think>" or a
/// coordinate is not finite; neither could be read back unambiguously.
inline std::string serialize_response(const ParsedResponse& r) {
  if (r.think.find("</think>") != std::string::npos) {
    throw std::invalid_argument("think text contains the closing think tag");
  }
  for (const auto& d : r.detections) {
    for (double v : {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.point.x, d.point.y}) {
      if (!std::isfinite(v)) throw std::invalid_argument("detection coordinate is not finite");
    }
  }
  std::string out;
  out.reserve(r.think.size() + 64 + 96 * r.detections.size());
  out += "<think>";
  out += r.think;
  out += "</think>\n<detection>";
  out += serialize_detections(r.detections);
  out += "</detection>\n<fish_count>";
  out += std::to_string(r.fish_count);
  out += "</fish_count>";
  return out;
}

}  // namespace detcount
