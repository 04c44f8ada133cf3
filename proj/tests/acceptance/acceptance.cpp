// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "detcount/detcount.hpp"
#include "oracles.hpp"

using namespace detcount;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const char* name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  if (!o.pass) ++failures;
  std::printf("%s %s%s%s\n", o.pass ? "PASS" : "FAIL", name, o.detail.empty() ? "" : " -- ", o.detail.c_str());
  std::fflush(stdout);
}

Outcome hungarian_oracle() {
  Outcome o;
  std::mt19937_64 rng(20240501);
  std::uniform_int_distribution<int> dim(1, 6), cost(0, 50);
  const auto t0 = Clock::now();
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto rows = static_cast<std::size_t>(dim(rng)), cols = static_cast<std::size_t>(dim(rng));
    oracle::Matrix m(rows, std::vector<double>(cols));
    CostMatrix c(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < cols; ++k) c(r, k) = m[r][k] = cost(rng);
    const Assignment a = hungarian_min_cost(c);
    if (assignment_cost(c, a) != oracle::brute_force_assignment(m, cols).cost) ++mismatches;
  }
  const double secs = seconds_since(t0);
  o.check(mismatches == 0, std::to_string(mismatches) + " cost mismatches");
  o.check(secs < 5.0, "took " + std::to_string(secs) + " s");
  o.detail = o.pass ? "500 matrices, " + std::to_string(secs) + " s" : o.detail;
  return o;
}

Outcome reward_arithmetic() {
  Outcome o;
  const RewardConfig cfg;
  auto det = [](double x, double y) { return Detection{{x - 5, y - 5, x + 5, y + 5}, {x, y}, "fish"}; };
  const std::vector<Point> gt{{10, 10}, {50, 50}, {100, 100}, {150, 150}};
  ParsedResponse half;
  half.detections = {det(11, 10), det(50, 51), det(200, 10), det(10, 200)};
  half.fish_count = 4;
  const DetectionReward d = detection_reward(half, gt, 5.0, cfg);
  o.check(d.accuracy == 2.0, "accuracy for 2/4 valid");
  o.check(d.match == 0.0, "match when n_pred == n_count");

  ParsedResponse mism = half;
  mism.fish_count = 3;
  o.check(detection_reward(mism, gt, 5.0, cfg).match == -1.0, "match penalty");
  o.check(count_reward(half, 4) == 1.0 && count_reward(mism, 4) == -1.0, "count +-1");

  const std::string perfect =
      R"(<think>one fish</think><detection>[{"bbox_2d":[10,20,50,60],"point_2d":[30,40],"label":"fish"}]</detection><fish_count>1</fish_count>)";
  const std::vector<Point> one{{31, 40}};
  o.check(score_text(perfect, one, {256, 256}).rewards.total == 9.0, "perfect total 9");
  o.check(score_text("no tags at all", one, {256, 256}).rewards.total == -2.0, "parse failure total -2");
  return o;
}

Outcome grpo_math() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> reward(-3.0, 9.0);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(8);
    for (auto& v : r) v = reward(rng);
    const auto a = group_advantages(r);
    double mean = 0.0, var = 0.0;
    for (double v : a) mean += v;
    mean /= 8.0;
    for (double v : a) var += (v - mean) * (v - mean);
    if (std::fabs(mean) > 1e-9 || std::fabs(std::sqrt(var / 8.0) - 1.0) > 1e-6) ++bad;
  }
  o.check(bad == 0, std::to_string(bad) + " groups off moments");
  o.check(group_advantages(std::vector<double>(8, 4.0)) == std::vector<double>(8, 0.0), "degenerate group");
  o.check(group_advantages(std::vector<double>{1, 1 + 1e-12, 1, 1}) == std::vector<double>(4, 0.0),
          "near-degenerate group");
  o.check(std::fabs(clipped_surrogate_term(1.0, 0.7, 0.2) - 0.7) <= 1e-12, "surrogate (1.0, 0.7)");
  o.check(std::fabs(clipped_surrogate_term(1.5, 1.0, 0.2) - 1.2) <= 1e-12, "surrogate (1.5, 1.0)");
  o.check(std::fabs(clipped_surrogate_term(0.5, -1.0, 0.2) + 0.8) <= 1e-12, "surrogate (0.5, -1.0)");
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  const std::vector<std::vector<Box>> gt{{{0, 0, 100, 100}}}, pred{{{0, 0, 100, 75}}};
  const auto pr = average_precision_recall(pred, gt);
  o.check(pr && pr->ap == 60.0 && pr->ar == 60.0, "IoU 0.75 AP/AR 60");

  const std::vector<ImageSize> size{{256, 256}};
  const std::vector<std::vector<Point>> g{{{10, 10}}}, far{{{200, 200}}}, near{{{11, 10}}};
  o.check(game(far, g, size).game == 2.0, "GAME fixture 2");
  o.check(game(near, g, size).game == 0.0, "GAME same-cell fixture 0");

  const std::vector<CountPair> exact{{3, 3}, {2, 2}}, off{{2, 3}, {3, 3}};
  o.check(mae_and_match_rate(exact).mae == 0.0 && mae_and_match_rate(exact).match_rate == 1.0, "exact counts");
  o.check(mae_and_match_rate(off).mae == 0.5 && mae_and_match_rate(off).match_rate == 0.5, "half counts");

  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n(0, 12);
  int non_monotone = 0, oracle_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ImageSize s{256, 256};
    std::uniform_real_distribution<double> c(0.0, 256.0);
    std::vector<Point> p(static_cast<std::size_t>(n(rng))), q(static_cast<std::size_t>(n(rng)));
    for (auto& v : p) v = {c(rng), c(rng)};
    for (auto& v : q) v = {c(rng), c(rng)};
    const std::vector<std::vector<Point>> ps{p}, qs{q};
    const GameResult r = game(ps, qs, std::vector<ImageSize>{s});
    for (std::size_t l = 1; l < kGameLevels; ++l)
      if (r.per_level[l - 1] > r.per_level[l]) ++non_monotone;
    for (int l = 1; l <= 4; ++l)
      if (r.per_level[static_cast<std::size_t>(l - 1)] != oracle::game_level(p, q, 256, 256, l)) ++oracle_mismatch;
  }
  o.check(non_monotone == 0, std::to_string(non_monotone) + " non-monotone GAME sets");
  o.check(oracle_mismatch == 0, std::to_string(oracle_mismatch) + " GAME oracle mismatches");
  return o;
}

Outcome parser_round_trip() {
  Outcome o;
  std::mt19937_64 rng(2024);
  int lost = 0, unflipped = 0;
  for (int i = 0; i < 1000; ++i) {
    const ParsedResponse r = oracle::random_response(rng);
    const std::string text = serialize_response(r);
    const ParseResult back = parse_response(text);
    if (!back.response || !(*back.response == r) || !back.format.structure_ok) ++lost;
    for (const std::string tag : {"<think>", "</think>", "<detection>", "</detection>", "<fish_count>", "</fish_count>"}) {
      std::string broken = text;
      broken.erase(tag == "<think>" ? broken.find(tag) : broken.rfind(tag), tag.size());
      if (parse_response(broken).format.structure_ok) ++unflipped;
    }
  }
  o.check(lost == 0, std::to_string(lost) + " responses changed in round trip");
  o.check(unflipped == 0, std::to_string(unflipped) + " deletions kept structure_ok");
  return o;
}

struct AblationRuns {
  std::vector<toy::AblationResult> per_seed;
  double seconds = 0.0;
};

const toy::PolicyEval& row(const toy::AblationResult& r, const std::string& name) {
  for (const auto& x : r.rows)
    if (x.name == name) return x.final_eval;
  throw std::runtime_error("missing ablation row " + name);
}

AblationRuns run_ablations() {
  AblationRuns runs;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    toy::ToyConfig cfg;
    cfg.seed = seed;
    std::vector<toy::AblationSetting> settings;
    for (const char* name : {"count", "detect", "both"}) settings.push_back(toy::ablation_preset(name));
    runs.per_seed.push_back(toy::run_ablation(settings, {}, cfg));
    const auto& r = runs.per_seed.back();
    std::printf("  seed %llu: GAME count=%.3f both=%.3f | match_rate count=%.3f detect=%.3f | alignment detect=%.4f both=%.4f\n",
                static_cast<unsigned long long>(seed), row(r, "count").game, row(r, "both").game,
                row(r, "count").match_rate, row(r, "detect").match_rate, row(r, "detect").alignment_rate,
                row(r, "both").alignment_rate);
    std::fflush(stdout);
  }
  runs.seconds = seconds_since(t0);
  return runs;
}

Outcome ablation_direction(const AblationRuns& runs) {
  Outcome o;
  int game_wins = 0, count_wins = 0;
  for (const auto& r : runs.per_seed) {
    if (row(r, "both").game < row(r, "count").game) ++game_wins;
    if (row(r, "count").match_rate >= row(r, "detect").match_rate) ++count_wins;
  }
  o.check(game_wins >= 4, "combined GAME lower in only " + std::to_string(game_wins) + "/5");
  o.check(count_wins >= 3, "count-only accuracy >= detect-only in only " + std::to_string(count_wins) + "/5");
  o.check(runs.seconds < 300.0, "took " + std::to_string(runs.seconds) + " s");
  if (o.pass) {
    o.detail = "GAME " + std::to_string(game_wins) + "/5, count accuracy " + std::to_string(count_wins) + "/5, " +
               std::to_string(runs.seconds) + " s";
  }
  return o;
}

Outcome alignment_trend(const AblationRuns& runs) {
  Outcome o;
  for (const char* name : {"detect", "both"}) {
    int ok = 0;
    for (const auto& r : runs.per_seed)
      if (row(r, name).alignment_rate >= 0.99) ++ok;
    o.check(ok >= 4, std::string(name) + " reached 0.99 in only " + std::to_string(ok) + "/5");
  }

  toy::ToyPolicy half;
  half.p_consistent = 0.5;
  RewardConfig no_match;
  no_match.w_detect = 0.0;
  toy::Rng rng(99);
  std::vector<ParsedResponse> parsed;
  const toy::SceneParams params;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const toy::SyntheticScene scene = toy::generate_scene(i, params);
    const ParseResult pr = parse_response(toy::sample_response(half, scene, rng));
    if (!pr.response) throw std::runtime_error("unparseable toy sample");
    (void)score_parsed(pr, scene.gt_points, scene.image_size, no_match);
    parsed.push_back(*pr.response);
  }
  const double rate = alignment_rate(parsed);
  o.check(std::fabs(rate - 0.5) <= 0.02, "p_consistent 0.5 measured " + std::to_string(rate));
  if (o.pass) o.detail = "p_consistent 0.5 measured " + std::to_string(rate);
  return o;
}

std::string wire_request(int i) {
  static const char* texts[] = {
      R"(<think>a</think><detection>[{"bbox_2d":[40,40,60,60],"point_2d":[50,50],"label":"fish"}]</detection><fish_count>1</fish_count>)",
      R"(<think>b</think><detection>[]</detection><fish_count>3</fish_count>)",
      "nothing useful",
  };
  nlohmann::json j;
  j["id"] = "req-" + std::to_string(i);
  j["response_text"] = texts[i % 3];
  j["gt_points"] = nlohmann::json::array({nlohmann::json::array({50, 50}), nlohmann::json::array({10 + i % 80, 20})});
  j["image_size"] = nlohmann::json::array({100, 100});
  return j.dump();
}

Outcome service_contract() {
  Outcome o;
  constexpr int kClients = 8, kTotal = 1000;
  TcpServer server({}, "127.0.0.1", 0, 4);
  std::thread runner([&] { server.run(); });
  const std::uint16_t port = server.port();

  std::vector<std::vector<std::string>> replies(kClients);
  std::vector<std::thread> clients;
  for (int c = 0; c < kClients; ++c) {
    clients.emplace_back([&, c] {
      boost::asio::io_context io;
      boost::asio::ip::tcp::socket sock(io);
      sock.connect({boost::asio::ip::make_address("127.0.0.1"), port});
      std::string payload;
      for (int i = c; i < kTotal; i += kClients) payload += wire_request(i) + "\n";
      boost::asio::write(sock, boost::asio::buffer(payload));
      sock.shutdown(boost::asio::ip::tcp::socket::shutdown_send);
      boost::asio::streambuf buf;
      boost::system::error_code ec;
      boost::asio::read(sock, buf, boost::asio::transfer_all(), ec);
      std::istream is(&buf);
      std::string line;
      while (std::getline(is, line)) replies[c].push_back(line);
    });
  }
  for (auto& t : clients) t.join();
  server.stop();
  runner.join();

  std::map<std::string, std::string> by_id;
  std::size_t total = 0;
  for (const auto& lines : replies)
    for (const auto& line : lines) {
      ++total;
      by_id[nlohmann::json::parse(line).at("id").get<std::string>()] = line;
    }
  o.check(total == kTotal, std::to_string(total) + " responses");
  o.check(by_id.size() == kTotal, std::to_string(by_id.size()) + " distinct ids");
  int differing = 0;
  for (int i = 0; i < kTotal; ++i) {
    const auto req = std::get<ScoreRequest>(parse_request(wire_request(i)));
    const auto it = by_id.find(req.id);
    if (it == by_id.end() || it->second != score_request(req, {})) ++differing;
  }
  o.check(differing == 0, std::to_string(differing) + " responses differ from in-process scoring");
  return o;
}

}  // namespace

int main() {
  report("hungarian_matches_exhaustive_search", hungarian_oracle);
  report("reward_arithmetic_fixtures", reward_arithmetic);
  report("grpo_advantages_and_surrogate", grpo_math);
  report("metric_oracles", metric_oracles);
  report("parser_round_trip_and_tag_deletion", parser_round_trip);

  AblationRuns runs;
  bool have_runs = true;
  try {
    runs = run_ablations();
  } catch (const std::exception& e) {
    have_runs = false;
    std::printf("  ablation failed: %s\n", e.what());
  }
  report("toy_ablation_directionality", [&] {
    if (!have_runs) throw std::runtime_error("ablation did not run");
    return ablation_direction(runs);
  });
  report("toy_alignment_rate", [&] {
    if (!have_runs) throw std::runtime_error("ablation did not run");
    return alignment_trend(runs);
  });
  report("service_concurrent_wire_requests", service_contract);

  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
