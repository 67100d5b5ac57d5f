#pragma once
// HTTP session service for conversational feature transformation.
//
//   POST   /sessions                  multipart (data=CSV, meta=JSON) or JSON {csv, meta}
//   GET    /sessions/{id}             state snapshot
//   POST   /sessions/{id}/diagnose    critic advice for the current table
//   POST   /sessions/{id}/instruct    {"text": ...} -> staged proposal + preview
//   POST   /sessions/{id}/accept      {"indices": [...]} -> apply chosen expressions
//   POST   /sessions/{id}/undo        discard the proposal or revert the last change
//   POST   /sessions/{id}/auto        {"iterations": n} -> automatic rounds
//   GET    /sessions/{id}/export      transformed CSV (label column last)
//   DELETE /sessions/{id}
//
// Every non-2xx response body is {"error": {"code": ..., "message": ...}}.
// A client may send X-Request-Token on mutating calls; a repeated token gets
// the stored response instead of re-running the operation.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <regex>
#include <shared_mutex>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "duet/agents.hpp"
#include "duet/refine.hpp"
#include "duet/stats.hpp"
#include "duet/table.hpp"

namespace duet {

enum class ApiCode { bad_request, not_found, backend_failed, parse_failed, conflict };

inline constexpr std::string_view api_code_name(ApiCode c) {
  switch (c) {
    case ApiCode::bad_request: return "BAD_REQUEST";
    case ApiCode::not_found: return "NOT_FOUND";
    case ApiCode::backend_failed: return "BACKEND_FAILED";
    case ApiCode::parse_failed: return "PARSE_FAILED";
    case ApiCode::conflict: return "CONFLICT";
  }
  return "?";
}

inline constexpr int api_status(ApiCode c) {
  switch (c) {
    case ApiCode::bad_request: return 400;
    case ApiCode::not_found: return 404;
    case ApiCode::backend_failed: return 502;
    case ApiCode::parse_failed: return 422;
    case ApiCode::conflict: return 409;
  }
  return 500;
}

class ApiError : public std::runtime_error {
 public:
  ApiError(ApiCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ApiCode code() const { return code_; }

 private:
  ApiCode code_;
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::string body;
  std::map<std::string, std::string> headers;  // lower-case names
  std::map<std::string, std::string> files;  // multipart field -> content
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline ApiResponse json_response(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }

inline ApiResponse error_response(ApiCode code, const std::string& message) {
  return json_response(api_status(code), {{"error", {{"code", api_code_name(code)}, {"message", message}}}});
}

struct Session {
  std::string id;
  std::string created_at;
  std::unique_ptr<ConversationSession> conv;
  std::unique_ptr<ChatBackend> backend;
  std::vector<int> labels;  // carried through to export only
  std::vector<std::string> class_names;
  std::chrono::steady_clock::time_point last_used;
  std::map<std::string, ApiResponse> replies;  // request token -> response
  nlohmann::json log = nlohmann::json::array();
  std::mutex mu;  // serializes every access to this session
};

inline std::string random_session_id() {
  static std::mutex mu;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(mu);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(gen()),
                static_cast<unsigned long long>(gen()));
  return buf;
}

struct ServiceConfig {
  LoopConfig loop;
  std::chrono::seconds ttl{3600};
};

class SessionService {
 public:
  using BackendFactory = std::function<std::unique_ptr<ChatBackend>()>;

  SessionService(BackendFactory factory, ServiceConfig cfg = {}, OperatorSet ops = OperatorSet::standard())
      : factory_(std::move(factory)), cfg_(cfg), ops_(std::move(ops)) {}

  ApiResponse handle(const ApiRequest& req) {
    try {
      evict_expired();
      return dispatch(req);
    } catch (const ApiError& e) {
      return error_response(e.code(), e.what());
    } catch (const StateConflict& e) {
      return error_response(ApiCode::conflict, e.what());
    } catch (const GenerationError& e) {
      return error_response(ApiCode::parse_failed, e.what());
    } catch (const BackendError& e) {
      return error_response(ApiCode::backend_failed, e.what());
    } catch (const ValidationError& e) {
      return error_response(ApiCode::bad_request, e.what());
    } catch (const DataError& e) {
      return error_response(ApiCode::bad_request, e.what());
    } catch (const nlohmann::json::exception& e) {
      return error_response(ApiCode::bad_request, std::string("invalid JSON: ") + e.what());
    } catch (const std::invalid_argument& e) {
      return error_response(ApiCode::bad_request, e.what());
    }
  }

  std::size_t session_count() const {
    std::shared_lock lock(store_mu_);
    return sessions_.size();
  }

  // Snapshot of every session: original columns as values, generated ones
  // as expressions.
  nlohmann::json snapshot() const {
    std::vector<std::shared_ptr<Session>> all;
    {
      std::shared_lock lock(store_mu_);
      for (const auto& [id, s] : sessions_) all.push_back(s);
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : all) {
      std::lock_guard lock(s->mu);
      const FeatureTable& t = s->conv->table();
      nlohmann::json cols = nlohmann::json::array();
      for (std::size_t c = 0; c < t.cols(); ++c) {
        const auto& info = t.info(c);
        nlohmann::json col{{"name", info.name}, {"missing_fraction", info.missing_fraction}};
        if (info.original()) {
          col["values"] = t.column(c);
        } else {
          col["expr"] = render(*info.expr);
        }
        cols.push_back(std::move(col));
      }
      out.push_back({{"id", s->id},
                     {"created_at", s->created_at},
                     {"meta", meta_to_json(s->conv->meta())},
                     {"columns", cols},
                     {"labels", s->labels},
                     {"class_names", s->class_names},
                     {"log", s->log}});
    }
    return {{"sessions", out}};
  }

  void restore(const nlohmann::json& snap) {
    for (const auto& js : snap.at("sessions")) {
      std::vector<ColumnInfo> info;
      std::vector<std::vector<double>> values;
      std::vector<std::pair<std::string, double>> generated;
      for (const auto& col : js.at("columns")) {
        if (col.contains("values")) {
          info.push_back({col.at("name").get<std::string>(), std::nullopt, std::nullopt, "",
                          col.value("missing_fraction", 0.0)});
          values.push_back(col.at("values").get<std::vector<double>>());
        } else {
          generated.emplace_back(col.at("expr").get<std::string>(), col.value("missing_fraction", 0.0));
        }
      }
      FeatureTable table(std::move(info), std::move(values));
      for (const auto& [text, missing] : generated) {
        Expr e = parse_expr(text, ops_);
        EvalResult r = table.evaluate(e);
        impute_median(r.values);
        table = table.with_generated(e, std::move(r.values), missing);
      }
      auto s = std::make_shared<Session>();
      s->id = js.at("id").get<std::string>();
      s->created_at = js.value("created_at", "");
      s->conv = std::make_unique<ConversationSession>(std::move(table), meta_from_json(js.at("meta")), ops_, cfg_.loop);
      s->backend = factory_();
      s->labels = js.at("labels").get<std::vector<int>>();
      s->class_names = js.at("class_names").get<std::vector<std::string>>();
      s->log = js.value("log", nlohmann::json::array());
      s->last_used = std::chrono::steady_clock::now();
      std::unique_lock lock(store_mu_);
      sessions_[s->id] = std::move(s);
    }
  }

 private:
  ApiResponse dispatch(const ApiRequest& req) {
    static const std::regex session_re(R"(^/sessions/([0-9a-f]+)(/[a-z]+)?/?$)");
    if (req.method == "OPTIONS") return {204, "", "text/plain"};
    if (req.path == "/sessions" || req.path == "/sessions/") {
      if (req.method != "POST") throw ApiError(ApiCode::bad_request, "use POST /sessions");
      return with_token(nullptr, req, [&] { return create(req); });
    }
    std::smatch m;
    if (!std::regex_match(req.path, m, session_re)) throw ApiError(ApiCode::not_found, "no route for " + req.path);
    const std::string id = m[1];
    const std::string action = m[2].matched ? std::string(m[2]).substr(1) : "";
    auto session = find(id);

    if (action.empty() && req.method == "GET") {
      std::lock_guard lock(session->mu);
      return json_response(200, state_of(*session));
    }
    if (action.empty() && req.method == "DELETE") {
      std::unique_lock lock(store_mu_);
      sessions_.erase(id);
      return json_response(200, {{"deleted", id}});
    }
    if (action == "export" && req.method == "GET") {
      std::lock_guard lock(session->mu);
      return {200, export_csv(*session), "text/csv"};
    }
    if (req.method != "POST") throw ApiError(ApiCode::bad_request, "unsupported method " + req.method);

    std::lock_guard lock(session->mu);
    return with_token(session.get(), req, [&]() -> ApiResponse {
      auto& conv = *session->conv;
      if (action == "diagnose") {
        CritiqueAdvice advice = conv.diagnose(*session->backend);
        session->log.push_back({{"kind", "advice"}, {"advice", to_json(advice)}});
        return json_response(200, {{"advice", to_json(advice)}});
      }
      if (action == "instruct") {
        auto body = parse_body(req);
        if (!body.contains("text") || !body["text"].is_string()) throw ApiError(ApiCode::bad_request, "missing 'text'");
        std::string text = body["text"];
        if (conv.pending()) throw StateConflict("a proposal is pending; accept or undo it first");
        session->log.push_back({{"kind", "instruction"}, {"text", text}});
        const Proposal& p = conv.instruct(*session->backend, text);
        nlohmann::json j = to_json(p);
        session->log.push_back({{"kind", "proposal"}, {"proposal", j["proposal"]}});
        return json_response(200, j);
      }
      if (action == "accept") {
        auto body = parse_body(req);
        if (!body.contains("indices") || !body["indices"].is_array()) {
          throw ApiError(ApiCode::bad_request, "missing 'indices' array");
        }
        std::vector<std::size_t> indices;
        for (const auto& v : body["indices"]) {
          if (!v.is_number_integer() || v.get<long long>() < 0) throw ApiError(ApiCode::bad_request, "indices must be non-negative integers");
          indices.push_back(v.get<std::size_t>());
        }
        ApplyResult r = conv.accept(indices);
        // Accepted columns are appended, so they are the table's last ones.
        nlohmann::json accepted = nlohmann::json::array();
        for (std::size_t c = conv.table().cols() - r.accepted.size(); c < conv.table().cols(); ++c) {
          accepted.push_back(conv.table().name(c));
        }
        nlohmann::json rejections = nlohmann::json::array();
        for (const auto& x : r.rejections) rejections.push_back(to_json(x));
        session->log.push_back({{"kind", "accept"}, {"indices", body["indices"]}, {"accepted", accepted}});
        return json_response(200, {{"accepted", accepted}, {"rejections", rejections}, {"columns", columns_of(conv.table())}});
      }
      if (action == "undo") {
        conv.undo();
        session->log.push_back({{"kind", "undo"}});
        return json_response(200, {{"columns", columns_of(conv.table())}, {"history_depth", conv.history_depth()}});
      }
      if (action == "auto") {
        auto body = parse_body(req);
        long long n = body.value("iterations", 1LL);
        if (n < 1 || n > 50) throw ApiError(ApiCode::bad_request, "iterations must be between 1 and 50");
        auto records = conv.auto_rounds(*session->backend, static_cast<std::size_t>(n));
        nlohmann::json its = nlohmann::json::array();
        for (const auto& rec : records) its.push_back(to_json(rec));
        session->log.push_back({{"kind", "auto"}, {"iterations", its}});
        return json_response(200, {{"iterations", its}, {"columns", columns_of(conv.table())}});
      }
      throw ApiError(ApiCode::not_found, "unknown action '" + action + "'");
    });
  }

  template <typename F>
  ApiResponse with_token(Session* s, const ApiRequest& req, F&& run) {
    auto it = req.headers.find("x-request-token");
    if (it == req.headers.end() || it->second.empty()) return run();
    std::map<std::string, ApiResponse>& replies = s ? s->replies : create_replies_;
    std::unique_lock<std::mutex> guard;
    if (!s) guard = std::unique_lock(create_mu_);
    if (auto hit = replies.find(it->second); hit != replies.end()) return hit->second;
    ApiResponse r;
    try {
      r = run();
    } catch (const ApiError& e) {
      r = error_response(e.code(), e.what());
    } catch (const StateConflict& e) {
      r = error_response(ApiCode::conflict, e.what());
    } catch (const GenerationError& e) {
      r = error_response(ApiCode::parse_failed, e.what());
    } catch (const BackendError& e) {
      r = error_response(ApiCode::backend_failed, e.what());
    } catch (const std::invalid_argument& e) {
      r = error_response(ApiCode::bad_request, e.what());
    }
    replies[it->second] = r;
    return r;
  }

  static nlohmann::json parse_body(const ApiRequest& req) {
    if (trim(req.body).empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw ApiError(ApiCode::bad_request, "request body must be a JSON object");
    return j;
  }

  ApiResponse create(const ApiRequest& req) {
    std::string csv_text;
    nlohmann::json meta_json;
    if (auto d = req.files.find("data"); d != req.files.end()) {
      csv_text = d->second;
      auto m = req.files.find("meta");
      if (m == req.files.end()) throw ApiError(ApiCode::bad_request, "multipart upload needs a 'meta' part");
      meta_json = nlohmann::json::parse(m->second);
    } else {
      auto body = parse_body(req);
      if (!body.contains("csv") || !body.contains("meta")) {
        throw ApiError(ApiCode::bad_request, "expected multipart parts data+meta or JSON {csv, meta}");
      }
      csv_text = body["csv"].get<std::string>();
      meta_json = body["meta"];
    }
    LoadedDataset ds = load_csv_text(csv_text, meta_from_json(meta_json));
    auto s = std::make_shared<Session>();
    s->id = random_session_id();
    s->created_at = utc_timestamp();
    s->labels = std::move(ds.labels);
    s->class_names = std::move(ds.class_names);
    s->conv = std::make_unique<ConversationSession>(std::move(ds.table), std::move(ds.meta), ops_, cfg_.loop);
    s->backend = factory_();
    s->last_used = std::chrono::steady_clock::now();
    nlohmann::json j{{"session_id", s->id},
                     {"columns", columns_of(s->conv->table())},
                     {"stats", to_json(summarize(s->conv->table()), &s->conv->table())}};
    std::unique_lock lock(store_mu_);
    sessions_[s->id] = s;
    return json_response(201, j);
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::shared_lock lock(store_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(ApiCode::not_found, "unknown session " + id);
    it->second->last_used = std::chrono::steady_clock::now();
    return it->second;
  }

  void evict_expired() {
    auto now = std::chrono::steady_clock::now();
    std::unique_lock lock(store_mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_used > cfg_.ttl) {
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  static nlohmann::json columns_of(const FeatureTable& t) {
    nlohmann::json cols = nlohmann::json::array();
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const auto& info = t.info(c);
      nlohmann::json j{{"token", "f" + std::to_string(c + 1)},
                       {"name", info.name},
                       {"kind", info.original() ? "original" : "generated"}};
      if (!info.original()) j["expression"] = render(*info.expr);
      cols.push_back(std::move(j));
    }
    return cols;
  }

  static nlohmann::json state_of(const Session& s) {
    const auto& conv = *s.conv;
    return {{"session_id", s.id},
            {"created_at", s.created_at},
            {"row_count", conv.table().rows()},
            {"columns", columns_of(conv.table())},
            {"stats", to_json(summarize(conv.table()), &conv.table())},
            {"pending", conv.pending() ? to_json(*conv.pending()) : nlohmann::json(nullptr)},
            {"history_depth", conv.history_depth()},
            {"log", s.log}};
  }

  static std::string export_csv(const Session& s) {
    return to_csv(s.conv->table(), LabelColumn{s.conv->meta().target_name, &s.labels, &s.class_names});
  }

  BackendFactory factory_;
  ServiceConfig cfg_;
  OperatorSet ops_;
  mutable std::shared_mutex store_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex create_mu_;
  std::map<std::string, ApiResponse> create_replies_;
};

// Binds the service to an httplib server. CORS is open; the tool is local.
inline void mount(httplib::Server& server, SessionService& service) {
  auto adapt = [&service](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r;
    r.method = req.method;
    r.path = req.path;
    r.body = req.body;
    for (const auto& [k, v] : req.headers) {
      std::string key = k;
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      r.headers[key] = v;
    }
    for (const auto& [name, file] : req.files) r.files[name] = file.content;
    ApiResponse out = service.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type, X-Request-Token"}});
  const char* pattern = R"(/sessions(/.*)?)";
  server.Get(pattern, adapt);
  server.Post(pattern, adapt);
  server.Delete(pattern, adapt);
  server.Options(pattern, adapt);
}

}  // namespace duet
