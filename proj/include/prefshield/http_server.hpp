#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "httplib.h"
#include "prefshield/service.hpp"

namespace prefshield::service {

/// REST + server-sent-events front end over a SessionManager.
///
///   POST /sessions                 grid file text (or JSON {grid | grid_file, seed})
///   GET  /sessions/{id}
///   PUT  /sessions/{id}/config     JSON ConfigPatch
///   POST /sessions/{id}/control    {"command": "Start" | "Pause" | "StepOnce" | "Reset"}
///   GET  /sessions/{id}/events     text/event-stream
///
/// Errors are JSON {"code": validation | conflict | not-found | io, "message": ...}.
class HttpServer {
 public:
  explicit HttpServer(std::filesystem::path grid_dir = {}) : grid_dir_(std::move(grid_dir)) {
    server_.new_task_queue = [] { return new httplib::ThreadPool(64); };
    routes();
  }

  ~HttpServer() { stop(); }

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    if (!server_.bind_to_port(host, port)) throw IoError("cannot bind port " + std::to_string(port));
    return port;
  }

  /// Blocks serving requests until stop().
  void listen_after_bind() { server_.listen_after_bind(); }

  void stop() {
    stopping_ = true;
    server_.stop();
  }

  bool wait_until_ready() {
    server_.wait_until_ready();
    return server_.is_running();
  }

  SessionManager& sessions() { return sessions_; }

 private:
  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, std::string_view code,
                         const std::string& message) {
    json body;
    body["code"] = code;
    body["message"] = message;
    send_json(res, status, body);
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not-found", e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const IoError& e) {
      send_error(res, 500, "io", e.what());
    } catch (const ParseError& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const ContractError& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "validation", std::string("bad JSON: ") + e.what());
    }
  }

  std::string read_grid_file(const std::string& name) const {
    if (grid_dir_.empty()) throw IoError("no grid directory configured");
    const std::filesystem::path rel(name);
    if (name.empty() || rel.is_absolute() || rel.has_parent_path() || name == "." || name == "..") {
      throw ValidationError("grid_file must be a plain file name");
    }
    std::ifstream in(grid_dir_ / rel, std::ios::binary);
    if (!in) throw IoError("cannot read grid file '" + name + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static ConfigPatch parse_patch(const json& j) {
    if (!j.is_object()) throw ValidationError("config body must be a JSON object");
    ConfigPatch patch;
    for (const auto& [key, value] : j.items()) {
      if (key == "preference") {
        if (value.is_null() || value.get<std::string>() == "none") {
          patch.preference = std::optional<Preference>{};
        } else {
          auto p = parse_preference(value.get<std::string>());
          if (!p) throw ValidationError("unknown preference '" + value.get<std::string>() + "'");
          patch.preference = p;
        }
      } else if (key == "mechanism") {
        auto m = parse_mechanism(value.get<std::string>());
        if (!m) throw ValidationError("unknown mechanism '" + value.get<std::string>() + "'");
        patch.mechanism = m;
      } else if (key == "hyperparams") {
        patch.hyperparams = hyperparams_from_json(value, Hyperparams{});
      } else if (key == "speed") {
        patch.speed = value.get<double>();
      } else if (key == "seed") {
        patch.seed = value.get<std::uint64_t>();
      } else {
        throw ValidationError("unknown config field '" + key + "'");
      }
    }
    return patch;
  }

  void routes() {
    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::string grid_text = req.body;
        std::uint64_t seed = 0;
        if (req.has_param("seed")) seed = std::stoull(req.get_param_value("seed"));
        if (req.get_header_value("Content-Type").starts_with("application/json")) {
          const json body = json::parse(req.body);
          if (body.contains("grid_file")) {
            grid_text = read_grid_file(body.at("grid_file").get<std::string>());
          } else {
            grid_text = body.at("grid").get<std::string>();
          }
          if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
        }
        auto session = sessions_.create(grid_text, seed);
        send_json(res, 201, session_json(session->info()));
      });
    });

    server_.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, session_json(sessions_.get(req.matches[1])->info())); });
    });

    server_.Put(R"(/sessions/([^/]+)/config)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    auto session = sessions_.get(req.matches[1]);
                    session->configure(parse_patch(json::parse(req.body)));
                    send_json(res, 200, session_json(session->info()));
                  });
                });

    server_.Post(R"(/sessions/([^/]+)/control)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   guarded(res, [&] {
                     auto session = sessions_.get(req.matches[1]);
                     const json body = json::parse(req.body);
                     const auto name = body.at("command").get<std::string>();
                     const auto cmd = parse_control(name);
                     if (!cmd) throw ValidationError("unknown command '" + name + "'");
                     session->control(*cmd);
                     send_json(res, 200, session_json(session->info()));
                   });
                 });

    server_.Get(R"(/sessions/([^/]+)/events)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    auto sub = sessions_.get(req.matches[1])->subscribe();
                    res.set_header("Cache-Control", "no-cache");
                    res.set_chunked_content_provider(
                        "text/event-stream",
                        [this, sub](std::size_t, httplib::DataSink& sink) {
                          while (!stopping_) {
                            if (!sink.is_writable()) break;
                            auto ev = sub->next(std::chrono::milliseconds(100));
                            if (ev) {
                              const std::string chunk = ev->second.to_sse(ev->first);
                              if (!sink.write(chunk.data(), chunk.size())) break;
                              return true;
                            }
                            if (sub->finished()) {
                              sink.done();
                              return true;
                            }
                          }
                          sub->cancel();
                          return false;
                        },
                        [sub](bool) { sub->cancel(); });
                  });
                });
  }

  std::filesystem::path grid_dir_;
  SessionManager sessions_;
  httplib::Server server_;
  std::atomic<bool> stopping_{false};
};

}  // namespace prefshield::service
