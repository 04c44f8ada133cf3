// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file dataset_io.hpp
 * @brief Ground-truth and prediction files, and JSON/CSV report emission.
 *
 * Ground truth (one JSON document):
 *
 *   {"images": [{"image_id": "a", "width": 256, "height": 256,
 *                "points": [[x, y], ...],
 *                "boxes": [[x1, y1, x2, y2], ...],     optional
 *                "mask_file": "masks/a.png",           optional, relative to the file
 *                "mask_rle": [bg, fg, bg, ...]}]}      optional, exclusive with mask_file
 *
 * Predictions (JSON lines, one per image):
 *
 *   {"image_id": "a", "response_text": "<think>..."}
 *   {"image_id": "a", "detections": [{"bbox_2d": ..., "point_2d": ..., "label": "fish"}],
 *    "fish_count": 3}
 *
 * with the same optional mask_file / mask_rle keys. Score inputs are JSON
 * lines {"id": ..., "image_id": ..., "response_text": ...}; image_id
 * defaults to id.
 */

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detcount/mask_io.hpp"
#include "detcount/metrics.hpp"
#include "detcount/response.hpp"
#include "detcount/reward.hpp"
#include "detcount/toy.hpp"

namespace detcount {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline const json& require(const json& obj, const char* key, const std::string& ctx) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(ctx + ": missing '" + key + "'");
  return *it;
}

inline double finite_number(const json& j, const std::string& ctx) {
  if (!j.is_number()) throw SchemaError(ctx + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw SchemaError(ctx + ": number is not finite");
  return v;
}

inline std::size_t count_number(const json& j, const std::string& ctx) {
  if (!j.is_number_unsigned()) throw SchemaError(ctx + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

inline std::string string_field(const json& j, const std::string& ctx) {
  if (!j.is_string()) throw SchemaError(ctx + ": expected a string");
  return j.get<std::string>();
}

template <std::size_t N>
std::array<double, N> number_tuple(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != N) throw SchemaError(ctx + ": expected " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = finite_number(j[i], ctx);
  return out;
}

inline std::optional<BinaryMask> read_mask_fields(const json& obj, const ImageSize& size,
                                                  const std::filesystem::path& base_dir, const std::string& ctx) {
  const bool has_file = obj.contains("mask_file");
  const bool has_rle = obj.contains("mask_rle");
  if (has_file && has_rle) throw SchemaError(ctx + ": mask_file and mask_rle are mutually exclusive");
  std::optional<BinaryMask> mask;
  try {
    if (has_file) {
      std::filesystem::path p = string_field(obj["mask_file"], ctx + ".mask_file");
      if (p.is_relative()) p = base_dir / p;
      mask = read_mask_file(p.string());
    } else if (has_rle) {
      const json& rle = obj["mask_rle"];
      if (!rle.is_array()) throw SchemaError(ctx + ".mask_rle: expected an array");
      std::vector<std::uint64_t> counts;
      for (const auto& c : rle) counts.push_back(count_number(c, ctx + ".mask_rle"));
      mask = decode_rle(size.width, size.height, counts);
    }
  } catch (const MaskIoError& e) {
    throw SchemaError(ctx + ": " + e.what());
  }
  if (mask && (mask->width != size.width || mask->height != size.height)) {
    throw SchemaError(ctx + ": mask is " + std::to_string(mask->width) + "x" + std::to_string(mask->height) +
                      ", image is " + std::to_string(size.width) + "x" + std::to_string(size.height));
  }
  return mask;
}

inline std::string read_whole_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Calls fn(line_number, parsed_object) for each non-blank line.
template <class Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    const std::string ctx = path.filename().string() + ":" + std::to_string(lineno);
    if (j.is_discarded() || !j.is_object()) throw SchemaError(ctx + ": not a JSON object");
    fn(ctx, j);
  }
}

inline ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Ground truth

inline std::vector<GroundTruthRecord> parse_ground_truth(const nlohmann::json& doc,
                                                         const std::filesystem::path& base_dir = ".") {
  if (!doc.is_object()) throw SchemaError("ground truth: expected a JSON object");
  const auto& images = detail::require(doc, "images", "ground truth");
  if (!images.is_array()) throw SchemaError("ground truth: 'images' must be an array");

  std::vector<GroundTruthRecord> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    std::string ctx = "images[" + std::to_string(i) + "]";
    if (!img.is_object()) throw SchemaError(ctx + ": expected an object");
    GroundTruthRecord rec;
    rec.image_id = detail::string_field(detail::require(img, "image_id", ctx), ctx + ".image_id");
    ctx += " (" + rec.image_id + ")";
    if (!seen.insert(rec.image_id).second) throw SchemaError(ctx + ": duplicate image_id");
    rec.image_size.width = detail::count_number(detail::require(img, "width", ctx), ctx + ".width");
    rec.image_size.height = detail::count_number(detail::require(img, "height", ctx), ctx + ".height");
    if (rec.image_size.width == 0 || rec.image_size.height == 0) throw SchemaError(ctx + ": empty image");

    const auto& pts = detail::require(img, "points", ctx);
    if (!pts.is_array()) throw SchemaError(ctx + ".points: expected an array");
    for (const auto& p : pts) {
      const auto xy = detail::number_tuple<2>(p, ctx + ".points");
      const Point pt{xy[0], xy[1]};
      if (!rec.image_size.contains(pt)) throw SchemaError(ctx + ".points: point outside the image");
      rec.points.push_back(pt);
    }
    if (const auto it = img.find("boxes"); it != img.end()) {
      if (!it->is_array()) throw SchemaError(ctx + ".boxes: expected an array");
      rec.boxes.emplace();
      for (const auto& b : *it) {
        const auto v = detail::number_tuple<4>(b, ctx + ".boxes");
        rec.boxes->push_back(Box{v[0], v[1], v[2], v[3]}.normalized());
      }
    }
    rec.mask = detail::read_mask_fields(img, rec.image_size, base_dir, ctx);
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<GroundTruthRecord> read_ground_truth_file(const std::filesystem::path& path) {
  const nlohmann::json doc = nlohmann::json::parse(detail::read_whole_file(path), nullptr, false);
  if (doc.is_discarded()) throw SchemaError(path.string() + ": not valid JSON");
  try {
    return parse_ground_truth(doc, path.parent_path());
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

/// Masks are stored inline as RLE so the document is self-contained.
inline nlohmann::ordered_json ground_truth_json(const std::vector<GroundTruthRecord>& records) {
  detail::ojson images = detail::ojson::array();
  for (const auto& r : records) {
    detail::ojson img;
    img["image_id"] = r.image_id;
    img["width"] = r.image_size.width;
    img["height"] = r.image_size.height;
    img["points"] = detail::ojson::array();
    for (const auto& p : r.points) img["points"].push_back({p.x, p.y});
    if (r.boxes) {
      img["boxes"] = detail::ojson::array();
      for (const auto& b : *r.boxes) img["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
    }
    if (r.mask) img["mask_rle"] = encode_rle(*r.mask);
    images.push_back(std::move(img));
  }
  detail::ojson doc;
  doc["images"] = std::move(images);
  return doc;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline void write_ground_truth_file(const std::filesystem::path& path, const std::vector<GroundTruthRecord>& records) {
  write_text_file(path, ground_truth_json(records).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Predictions and score inputs

inline PredictionRecord parse_prediction(const nlohmann::json& obj, const std::map<std::string, ImageSize>& sizes,
                                         const std::filesystem::path& base_dir, const std::string& ctx) {
  PredictionRecord rec;
  rec.image_id = detail::string_field(detail::require(obj, "image_id", ctx), ctx + ".image_id");
  const auto size = sizes.find(rec.image_id);
  if (size == sizes.end()) throw SchemaError(ctx + ": unknown image_id '" + rec.image_id + "'");

  const bool has_text = obj.contains("response_text");
  const bool has_structured = obj.contains("detections") || obj.contains("fish_count");
  if (has_text == has_structured) {
    throw SchemaError(ctx + ": give either response_text or detections + fish_count");
  }
  if (has_text) {
    const ParseResult pr = parse_response(detail::string_field(obj["response_text"], ctx + ".response_text"));
    rec.parse_ok = pr.response.has_value();
    if (pr.response) rec.parsed = *pr.response;
  } else {
    const auto& dets = detail::require(obj, "detections", ctx);
    if (!dets.is_array()) throw SchemaError(ctx + ".detections: expected an array");
    for (const auto& e : dets) {
      auto d = detail::read_entry(e);
      if (!d) throw SchemaError(ctx + ".detections: malformed entry " + e.dump());
      rec.parsed.detections.push_back(std::move(*d));
    }
    rec.parsed.fish_count = detail::count_number(detail::require(obj, "fish_count", ctx), ctx + ".fish_count");
  }
  rec.mask = detail::read_mask_fields(obj, size->second, base_dir, ctx);
  return rec;
}

inline std::vector<PredictionRecord> read_predictions_file(const std::filesystem::path& path,
                                                           const std::vector<GroundTruthRecord>& gts) {
  std::map<std::string, ImageSize> sizes;
  for (const auto& g : gts) sizes.emplace(g.image_id, g.image_size);
  std::vector<PredictionRecord> out;
  detail::for_each_json_line(path, [&](const std::string& ctx, const nlohmann::json& j) {
    out.push_back(parse_prediction(j, sizes, path.parent_path(), ctx));
  });
  return out;
}

struct ScoreInput {
  std::string id;
  std::string image_id;
  std::string response_text;
};

inline std::vector<ScoreInput> read_score_inputs(const std::filesystem::path& path) {
  std::vector<ScoreInput> out;
  detail::for_each_json_line(path, [&](const std::string& ctx, const nlohmann::json& j) {
    ScoreInput in;
    in.id = detail::string_field(detail::require(j, "id", ctx), ctx + ".id");
    in.image_id = j.contains("image_id") ? detail::string_field(j["image_id"], ctx + ".image_id") : in.id;
    in.response_text = detail::string_field(detail::require(j, "response_text", ctx), ctx + ".response_text");
    out.push_back(std::move(in));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::ordered_json to_json(const RewardBreakdown& b) {
  detail::ojson j;
  j["format"] = b.format;
  j["accuracy"] = b.accuracy;
  j["match"] = b.match;
  j["detect"] = b.detect;
  j["count"] = b.count;
  j["non_repeat"] = b.non_repeat;
  j["total"] = b.total;
  return j;
}

inline nlohmann::ordered_json to_json(const RewardContext& c) {
  detail::ojson j;
  j["n_gt"] = c.n_gt;
  j["n_pred"] = c.n_pred;
  j["n_count"] = c.n_count;
  j["n_valid"] = c.n_valid;
  return j;
}

inline nlohmann::ordered_json to_json(const FormatReport& f) {
  detail::ojson j;
  j["structure_ok"] = f.structure_ok;
  j["entries_total"] = f.entries_total;
  j["entries_well_formed"] = f.entries_well_formed;
  return j;
}

/// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string csv_cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  detail::ojson j;
  j["ap_50_95"] = detail::optional_number(r.ap_50_95);
  j["ar_50_95"] = detail::optional_number(r.ar_50_95);
  j["fg_iou"] = detail::optional_number(r.fg_iou);
  j["bg_iou"] = detail::optional_number(r.bg_iou);
  j["miou"] = detail::optional_number(r.miou);
  j["mae"] = r.mae;
  j["match_rate"] = r.match_rate;
  j["game"] = r.game;
  j["game_per_level"] = r.game_per_level;
  j["alignment_rate"] = detail::optional_number(r.alignment_rate);
  j["n_images"] = r.n_images;
  j["n_unparsed"] = r.n_unparsed;
  return j;
}

/// Header plus one row; absent metrics are empty cells.
inline std::string metrics_csv(const MetricsReport& r) {
  std::string out =
      "ap_50_95,ar_50_95,fg_iou,bg_iou,miou,mae,match_rate,game,game_l1,game_l2,game_l3,game_l4,"
      "alignment_rate,n_images,n_unparsed\n";
  out += csv_cell(r.ap_50_95) + "," + csv_cell(r.ar_50_95) + "," + csv_cell(r.fg_iou) + "," + csv_cell(r.bg_iou) +
         "," + csv_cell(r.miou) + "," + format_number(r.mae) + "," + format_number(r.match_rate) + "," +
         format_number(r.game);
  for (double g : r.game_per_level) out += "," + format_number(g);
  out += "," + csv_cell(r.alignment_rate) + "," + std::to_string(r.n_images) + "," + std::to_string(r.n_unparsed) +
         "\n";
  return out;
}

inline nlohmann::ordered_json to_json(const toy::ToyPolicy& p) {
  detail::ojson j;
  j["p_fish"] = p.emit[0];
  j["p_distractor"] = p.emit[1];
  j["p_background"] = p.emit[2];
  j["p_consistent"] = p.p_consistent;
  return j;
}

inline nlohmann::ordered_json to_json(const toy::TrainRecord& r) {
  detail::ojson j;
  j["epoch"] = r.epoch;
  j["mean_total_reward"] = r.mean_total_reward;
  j["mean_format"] = r.mean_format;
  j["mean_detect"] = r.mean_detect;
  j["mean_count"] = r.mean_count;
  j["mean_non_repeat"] = r.mean_non_repeat;
  j["alignment_rate"] = r.alignment_rate;
  j["heldout_game"] = r.heldout_game;
  j["objective"] = r.objective;
  j["kl_to_ref"] = r.kl_to_ref;
  j["projected"] = r.projected;
  j["policy"] = to_json(r.policy);
  return j;
}

inline std::string train_records_csv(const std::string& setting, const std::vector<toy::TrainRecord>& records) {
  std::string out =
      "setting,epoch,mean_total_reward,mean_format,mean_detect,mean_count,mean_non_repeat,alignment_rate,"
      "heldout_game,objective,kl_to_ref,projected,p_fish,p_distractor,p_background,p_consistent\n";
  for (const auto& r : records) {
    out += setting + "," + std::to_string(r.epoch);
    for (double v : {r.mean_total_reward, r.mean_format, r.mean_detect, r.mean_count, r.mean_non_repeat,
                     r.alignment_rate, r.heldout_game, r.objective, r.kl_to_ref}) {
      out += "," + format_number(v);
    }
    out += r.projected ? ",1" : ",0";
    for (double v : {r.policy.emit[0], r.policy.emit[1], r.policy.emit[2], r.policy.p_consistent}) {
      out += "," + format_number(v);
    }
    out += "\n";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const toy::AblationResult& a) {
  detail::ojson rows = detail::ojson::array();
  for (const auto& r : a.rows) {
    detail::ojson j;
    j["setting"] = r.name;
    j["alignment_rate"] = r.final_eval.alignment_rate;
    j["mae"] = r.final_eval.mae;
    j["match_rate"] = r.final_eval.match_rate;
    j["game"] = r.final_eval.game;
    j["matched_fraction"] = r.final_eval.matched_fraction;
    j["mean_total_reward"] = r.final_eval.mean_total_reward;
    j["policy"] = to_json(r.policy);
    rows.push_back(std::move(j));
  }
  detail::ojson doc;
  doc["rows"] = std::move(rows);
  return doc;
}

inline std::string ablation_csv(const toy::AblationResult& a) {
  std::string out =
      "setting,alignment_rate,mae,match_rate,game,matched_fraction,mean_total_reward,"
      "p_fish,p_distractor,p_background,p_consistent\n";
  for (const auto& r : a.rows) {
    const auto& e = r.final_eval;
    out += r.name;
    for (double v : {e.alignment_rate, e.mae, e.match_rate, e.game, e.matched_fraction, e.mean_total_reward,
                     r.policy.emit[0], r.policy.emit[1], r.policy.emit[2], r.policy.p_consistent}) {
      out += "," + format_number(v);
    }
    out += "\n";
  }
  return out;
}

}  // namespace detcount
