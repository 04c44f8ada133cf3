// SPDX-License-Identifier: Apache-2.0
// detcount: score responses, evaluate predictions, train the toy policy, serve rewards.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detcount/detcount.hpp"

namespace fs = std::filesystem;
using namespace detcount;

namespace {

// Exit codes: 0 ok, 1 some records failed, 2 bad input or configuration.
constexpr int kExitRecordErrors = 1;
constexpr int kExitBadInput = 2;

struct CommonOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> threshold;
  std::string out_dir = ".";
};

Config load(const CommonOptions& opt) {
  Config cfg = resolve_config(opt.config_path);
  if (opt.seed) cfg.toy.seed = *opt.seed;
  if (opt.threshold) {
    cfg.reward.match_threshold = MatchThreshold::parse(*opt.threshold);
    cfg.toy.scene.match_threshold = cfg.reward.match_threshold;
  }
  cfg.validate();
  return cfg;
}

fs::path output_dir(const CommonOptions& opt) {
  fs::path dir(opt.out_dir);
  fs::create_directories(dir);
  return dir;
}

int cmd_score(const CommonOptions& opt, const std::string& input, const std::string& gt_path) {
  const Config cfg = load(opt);
  const auto gts = read_ground_truth_file(gt_path);
  const auto inputs = read_score_inputs(input);
  if (inputs.empty()) {
    std::cerr << "score: " << input << ": no records\n";
    return kExitBadInput;
  }
  std::map<std::string, const GroundTruthRecord*> by_id;
  for (const auto& g : gts) by_id.emplace(g.image_id, &g);

  std::string lines;
  std::size_t errors = 0, scored = 0;
  RewardBreakdown sum;
  std::vector<ParsedResponse> parsed;
  for (const auto& in : inputs) {
    nlohmann::ordered_json j;
    j["id"] = in.id;
    j["image_id"] = in.image_id;
    const auto it = by_id.find(in.image_id);
    if (it == by_id.end()) {
      j["error"] = "unknown image_id '" + in.image_id + "'";
      ++errors;
    } else {
      const ParseResult pr = parse_response(in.response_text);
      const ScoredResponse s = score_parsed(pr, it->second->points, it->second->image_size, cfg.reward);
      if (pr.response) parsed.push_back(*pr.response);
      j["rewards"] = to_json(s.rewards);
      j["context"] = to_json(s.context);
      j["format"] = to_json(s.format);
      sum.format += s.rewards.format;
      sum.detect += s.rewards.detect;
      sum.count += s.rewards.count;
      sum.non_repeat += s.rewards.non_repeat;
      sum.total += s.rewards.total;
      ++scored;
    }
    lines += j.dump() + "\n";
  }

  nlohmann::ordered_json summary;
  summary["n_records"] = inputs.size();
  summary["n_scored"] = scored;
  summary["n_errors"] = errors;
  if (scored > 0) {
    const auto n = static_cast<double>(scored);
    summary["mean_total"] = sum.total / n;
    summary["mean_format"] = sum.format / n;
    summary["mean_detect"] = sum.detect / n;
    summary["mean_count"] = sum.count / n;
    summary["mean_non_repeat"] = sum.non_repeat / n;
  } else {
    for (const char* k : {"mean_total", "mean_format", "mean_detect", "mean_count", "mean_non_repeat"}) summary[k] = nullptr;
  }
  summary["alignment_rate"] = parsed.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(alignment_rate(parsed));
  summary["match_threshold"] = cfg.reward.match_threshold.to_string();

  const fs::path dir = output_dir(opt);
  write_text_file(dir / "scores.jsonl", lines);
  write_text_file(dir / "score_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  if (errors) std::cerr << "score: " << errors << " record(s) failed, see scores.jsonl\n";
  return errors ? kExitRecordErrors : 0;
}

int cmd_eval(const CommonOptions& opt, const std::string& pred_path, const std::string& gt_path) {
  const auto gts = read_ground_truth_file(gt_path);
  const auto preds = read_predictions_file(pred_path, gts);
  MetricsReport report;
  try {
    report = evaluate(preds, gts);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  const fs::path dir = output_dir(opt);
  const std::string json = to_json(report).dump(2) + "\n";
  write_text_file(dir / "metrics.json", json);
  write_text_file(dir / "metrics.csv", metrics_csv(report));
  std::cout << json;
  return 0;
}

int cmd_train_toy(const CommonOptions& opt) {
  const Config cfg = load(opt);
  std::vector<toy::AblationSetting> settings;
  for (const auto& name : cfg.ablation) settings.push_back(toy::ablation_preset(name, cfg.reward));
  const toy::AblationResult result = toy::run_ablation(settings, cfg.grpo, cfg.toy);

  const fs::path dir = output_dir(opt);
  nlohmann::ordered_json curves;
  std::string csv;
  for (std::size_t i = 0; i < settings.size(); ++i) {
    nlohmann::ordered_json records = nlohmann::ordered_json::array();
    for (const auto& r : result.curves[i]) records.push_back(to_json(r));
    curves[settings[i].name] = std::move(records);
    const std::string part = train_records_csv(settings[i].name, result.curves[i]);
    csv += i == 0 ? part : part.substr(part.find('\n') + 1);
  }
  write_text_file(dir / "train_records.json", curves.dump(2) + "\n");
  write_text_file(dir / "train_records.csv", csv);
  write_text_file(dir / "ablation.json", to_json(result).dump(2) + "\n");
  write_text_file(dir / "ablation.csv", ablation_csv(result));
  std::cout << ablation_csv(result);
  return 0;
}

int cmd_serve(const CommonOptions& opt, const std::optional<std::string>& tcp, std::size_t threads) {
  const Config cfg = load(opt);
  if (!tcp) {
    std::ios::sync_with_stdio(false);
    serve_stream(std::cin, std::cout, cfg.reward, threads);
    return 0;
  }
  const auto colon = tcp->rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("--tcp expects host:port");
  const std::string host = tcp->substr(0, colon);
  const auto port = static_cast<std::uint16_t>(std::stoul(tcp->substr(colon + 1)));
  TcpServer server(cfg.reward, host, port, threads);

  boost::asio::io_context signals_io;
  boost::asio::signal_set signals(signals_io, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int) { server.stop(); });
  std::thread signal_thread([&] { signals_io.run(); });

  std::cerr << "listening on " << host << ":" << server.port() << std::endl;
  server.run();
  signals_io.stop();
  signal_thread.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rewards and metrics for detect-to-count responses"};
  app.require_subcommand(1);
  CommonOptions opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, std::string("INI config file (default: $") + kConfigEnvVar + ")");
    sub->add_option("--seed", opt.seed, "toy environment seed");
    sub->add_option("--threshold", opt.threshold, "match threshold: 12px, 0.05frac or 5%");
    sub->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
  };

  std::string input, gt, pred;
  auto* score = app.add_subcommand("score", "score response texts against ground-truth points");
  score->add_option("--input", input, "JSONL of {id, image_id, response_text}")->required();
  score->add_option("--gt", gt, "ground-truth JSON")->required();
  add_common(score);

  auto* eval = app.add_subcommand("eval", "compute detection, segmentation and counting metrics");
  eval->add_option("--pred", pred, "prediction JSONL")->required();
  eval->add_option("--gt", gt, "ground-truth JSON")->required();
  add_common(eval);

  auto* train = app.add_subcommand("train-toy", "train toy policies under each reward setting");
  add_common(train);

  std::optional<std::string> tcp;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  auto* serve = app.add_subcommand("serve", "line-delimited JSON scoring service (stdio unless --tcp)");
  serve->add_option("--tcp", tcp, "listen address host:port (port 0 picks one)");
  serve->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  add_common(serve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (score->parsed()) return cmd_score(opt, input, gt);
    if (eval->parsed()) return cmd_eval(opt, pred, gt);
    if (train->parsed()) return cmd_train_toy(opt);
    return cmd_serve(opt, tcp, threads);
  } catch (const std::exception& e) {
    std::cerr << app.get_subcommands().front()->get_name() << ": " << e.what() << "\n";
    return kExitBadInput;
  }
}
