// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file service.hpp
 * @brief Line-delimited JSON scoring service over stdio or TCP.
 *
 * Request (one JSON object per line):
 *
 *   {"id": "r1", "response_text": "<think>...", "gt_points": [[x, y], ...],
 *    "image_size": [w, h],
 *    "config": {"w_format": 1, "w_detect": 1, "w_count": 1, "w_non_repeat": 1,
 *               "match_threshold": "5%"}}            config and its keys optional
 *
 * Response:
 *
 *   {"id": "r1", "rewards": {...}, "context": {...}, "format": {...}}
 *
 * Errors come back as {"id": "r1", "error": "..."}, with id null when the
 * line carries no readable id. Ids must be unique within a session (one
 * stdio stream or one TCP connection). Responses are written as whole lines
 * in completion order.
 */

#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <variant>
#include <vector>

#include <boost/asio.hpp>
#include <nlohmann/json.hpp>

#include "detcount/dataset_io.hpp"
#include "detcount/geometry.hpp"
#include "detcount/matching.hpp"
#include "detcount/reward.hpp"

namespace detcount {

/// Shallow per-request overrides: weights and the match threshold only.
struct RewardOverrides {
  std::optional<double> w_format, w_detect, w_count, w_non_repeat;
  std::optional<MatchThreshold> match_threshold;

  RewardConfig apply(RewardConfig cfg) const {
    if (w_format) cfg.w_format = *w_format;
    if (w_detect) cfg.w_detect = *w_detect;
    if (w_count) cfg.w_count = *w_count;
    if (w_non_repeat) cfg.w_non_repeat = *w_non_repeat;
    if (match_threshold) cfg.match_threshold = *match_threshold;
    return cfg;
  }
};

struct ScoreRequest {
  std::string id;
  std::string response_text;
  std::vector<Point> gt_points;
  ImageSize image_size;
  RewardOverrides overrides;
};

struct RequestError {
  std::optional<std::string> id;
  std::string message;
};

namespace detail {

inline RewardOverrides parse_overrides(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("config: expected an object");
  RewardOverrides o;
  for (const auto& [key, value] : j.items()) {
    if (key == "match_threshold") {
      if (value.is_number()) {
        o.match_threshold = MatchThreshold::pixels(finite_number(value, "config.match_threshold"));
        if (!(o.match_threshold->value > 0.0)) throw SchemaError("config.match_threshold: must be > 0");
      } else {
        try {
          o.match_threshold = MatchThreshold::parse(string_field(value, "config.match_threshold"));
        } catch (const std::invalid_argument& e) {
          throw SchemaError(std::string("config.") + e.what());
        }
      }
      continue;
    }
    std::optional<double>* slot = key == "w_format"       ? &o.w_format
                                  : key == "w_detect"     ? &o.w_detect
                                  : key == "w_count"      ? &o.w_count
                                  : key == "w_non_repeat" ? &o.w_non_repeat
                                                          : nullptr;
    if (!slot) throw SchemaError("config: unsupported override '" + key + "'");
    *slot = finite_number(value, "config." + key);
  }
  return o;
}

}  // namespace detail

inline std::variant<ScoreRequest, RequestError> parse_request(std::string_view line) {
  const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) return RequestError{std::nullopt, "malformed JSON"};
  if (!j.is_object()) return RequestError{std::nullopt, "request must be a JSON object"};
  const auto id_it = j.find("id");
  if (id_it == j.end() || !id_it->is_string()) return RequestError{std::nullopt, "request needs a string id"};

  ScoreRequest req;
  req.id = id_it->get<std::string>();
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "response_text" && key != "gt_points" && key != "image_size" && key != "config") {
        throw SchemaError("unknown field '" + key + "'");
      }
    }
    req.response_text = detail::string_field(detail::require(j, "response_text", "request"), "response_text");
    const auto size = detail::number_tuple<2>(detail::require(j, "image_size", "request"), "image_size");
    if (!(size[0] >= 1.0 && size[1] >= 1.0) || std::floor(size[0]) != size[0] || std::floor(size[1]) != size[1]) {
      throw SchemaError("image_size: expected two positive integers");
    }
    req.image_size = {static_cast<std::size_t>(size[0]), static_cast<std::size_t>(size[1])};
    const auto& pts = detail::require(j, "gt_points", "request");
    if (!pts.is_array()) throw SchemaError("gt_points: expected an array");
    for (const auto& p : pts) {
      const auto xy = detail::number_tuple<2>(p, "gt_points");
      const Point pt{xy[0], xy[1]};
      if (!req.image_size.contains(pt)) throw SchemaError("gt_points: point outside the image");
      req.gt_points.push_back(pt);
    }
    if (const auto c = j.find("config"); c != j.end()) req.overrides = detail::parse_overrides(*c);
  } catch (const SchemaError& e) {
    return RequestError{req.id, e.what()};
  }
  return req;
}

inline std::string score_response_line(const std::string& id, const ScoredResponse& scored) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["rewards"] = to_json(scored.rewards);
  j["context"] = to_json(scored.context);
  j["format"] = to_json(scored.format);
  return j.dump();
}

inline std::string error_line(const std::optional<std::string>& id, const std::string& message) {
  nlohmann::ordered_json j;
  j["id"] = id ? nlohmann::ordered_json(*id) : nlohmann::ordered_json(nullptr);
  j["error"] = message;
  return j.dump();
}

/// Scores one request against the base config; the line has no trailing newline.
inline std::string score_request(const ScoreRequest& req, const RewardConfig& base) {
  const RewardConfig cfg = req.overrides.apply(base);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    return error_line(req.id, e.what());
  }
  return score_response_line(req.id, score_text(req.response_text, req.gt_points, req.image_size, cfg));
}

/// Request-scoped scoring with per-session id uniqueness. Thread-safe.
class ScoringSession {
 public:
  explicit ScoringSession(RewardConfig base) : base_(std::move(base)) { base_.validate(); }

  std::string handle_line(std::string_view line) {
    auto parsed = parse_request(line);
    if (auto* err = std::get_if<RequestError>(&parsed)) return error_line(err->id, err->message);
    const auto& req = std::get<ScoreRequest>(parsed);
    {
      std::lock_guard lock(ids_mutex_);
      if (!seen_ids_.insert(req.id).second) return error_line(req.id, "duplicate id in this session");
    }
    return score_request(req, base_);
  }

  const RewardConfig& config() const { return base_; }

 private:
  RewardConfig base_;
  std::mutex ids_mutex_;
  std::unordered_set<std::string> seen_ids_;
};

inline bool is_blank(std::string_view line) { return line.find_first_not_of(" \t\r") == std::string_view::npos; }

/// Reads requests until end of input, scoring them on `threads` workers.
/// Returns once every response has been written.
inline void serve_stream(std::istream& in, std::ostream& out, const RewardConfig& cfg, std::size_t threads) {
  ScoringSession session(cfg);
  boost::asio::thread_pool pool(std::max<std::size_t>(1, threads));
  std::mutex out_mutex;
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    boost::asio::post(pool, [&session, &out, &out_mutex, request = std::move(line)] {
      std::string reply = session.handle_line(request);
      reply.push_back('\n');
      std::lock_guard lock(out_mutex);
      out.write(reply.data(), static_cast<std::streamsize>(reply.size()));
      out.flush();
    });
    line.clear();
  }
  pool.join();
}

/**
 * TCP transport: one session per connection, requests from all
 * connections share one worker pool. run() blocks until stop().
 */
class TcpServer {
 public:
  TcpServer(RewardConfig cfg, const std::string& address, std::uint16_t port, std::size_t threads)
      : cfg_(std::move(cfg)),
        pool_(std::max<std::size_t>(1, threads)),
        acceptor_(io_, boost::asio::ip::tcp::endpoint(boost::asio::ip::make_address(address), port)) {
    cfg_.validate();
  }

  ~TcpServer() {
    stop();
    pool_.join();
  }

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  void run() {
    accept_next();
    io_.run();
    std::vector<std::thread> readers;
    {
      std::lock_guard lock(conn_mutex_);
      readers.swap(readers_);
    }
    for (auto& t : readers) t.join();
  }

  void stop() {
    boost::asio::post(io_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      std::lock_guard lock(conn_mutex_);
      for (auto& weak : connections_) {
        if (auto sock = weak.lock()) sock->shutdown(boost::asio::ip::tcp::socket::shutdown_receive, ec);
      }
    });
  }

 private:
  using Socket = boost::asio::ip::tcp::socket;

  void accept_next() {
    acceptor_.async_accept([this](boost::system::error_code ec, Socket socket) {
      if (ec) return;
      auto sock = std::make_shared<Socket>(std::move(socket));
      {
        std::lock_guard lock(conn_mutex_);
        connections_.push_back(sock);
        readers_.emplace_back([this, sock] { serve_connection(sock); });
      }
      accept_next();
    });
  }

  struct Connection {
    explicit Connection(const RewardConfig& cfg) : session(cfg) {}
    ScoringSession session;
    std::mutex write_mutex;
    std::mutex pending_mutex;
    std::condition_variable drained;
    std::size_t pending = 0;
  };

  void serve_connection(const std::shared_ptr<Socket>& sock) {
    auto conn = std::make_shared<Connection>(cfg_);
    boost::asio::streambuf buffer;
    boost::system::error_code ec;
    for (;;) {
      const std::size_t n = boost::asio::read_until(*sock, buffer, '\n', ec);
      if (ec && n == 0) break;
      std::string line(boost::asio::buffers_begin(buffer.data()),
                       boost::asio::buffers_begin(buffer.data()) + static_cast<std::ptrdiff_t>(n));
      buffer.consume(n);
      if (!line.empty() && line.back() == '\n') line.pop_back();
      if (is_blank(line)) continue;
      {
        std::lock_guard lock(conn->pending_mutex);
        ++conn->pending;
      }
      boost::asio::post(pool_, [conn, sock, request = std::move(line)] {
        std::string reply = conn->session.handle_line(request);
        reply.push_back('\n');
        {
          std::lock_guard lock(conn->write_mutex);
          boost::system::error_code wec;
          boost::asio::write(*sock, boost::asio::buffer(reply), wec);
        }
        std::lock_guard lock(conn->pending_mutex);
        if (--conn->pending == 0) conn->drained.notify_all();
      });
    }
    std::unique_lock lock(conn->pending_mutex);
    conn->drained.wait(lock, [&] { return conn->pending == 0; });
    boost::system::error_code sec;
    sock->shutdown(Socket::shutdown_send, sec);
  }

  RewardConfig cfg_;
  boost::asio::io_context io_;
  boost::asio::thread_pool pool_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::mutex conn_mutex_;
  std::vector<std::weak_ptr<Socket>> connections_;
  std::vector<std::thread> readers_;
};

}  // namespace detcount
