#pragma once
// OpenAI-compatible chat-completions client.
//
//   POST {base_url}/chat/completions
//   Authorization: Bearer $DUET_API_KEY
//   {"model": ..., "messages": [{"role":"system",...},{"role":"user",...}],
//    "temperature": ..., "max_tokens": ...}
//
// Connection failures, 429 and 5xx are retried with exponential backoff;
// other 4xx responses fail immediately.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "duet/agents.hpp"

namespace duet {

struct RemoteConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo";
  std::string api_key;
  int timeout_s = 60;
  int retries = 3;
  int backoff_ms = 500;

  static std::string key_from_env() {
    const char* k = std::getenv("DUET_API_KEY");
    return k ? k : "";
  }
};

struct ParsedUrl {
  std::string scheme_host_port;  // "https://host:port"
  std::string path;              // "/v1"
};

inline ParsedUrl parse_base_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("base_url needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.scheme_host_port = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

class RemoteHttpBackend : public ChatBackend {
 public:
  explicit RemoteHttpBackend(RemoteConfig cfg) : cfg_(std::move(cfg)), url_(parse_base_url(cfg_.base_url)) {}

  std::string complete(const ChatRequest& request) override {
    nlohmann::json body{{"model", cfg_.model},
                        {"messages",
                         {{{"role", "system"}, {"content", request.system}}, {{"role", "user"}, {"content", request.user}}}},
                        {"temperature", request.temperature},
                        {"max_tokens", request.max_tokens}};
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(cfg_.backoff_ms) << (attempt - 1)));
      }
      httplib::Client cli(url_.scheme_host_port);
      cli.set_connection_timeout(cfg_.timeout_s, 0);
      cli.set_read_timeout(cfg_.timeout_s, 0);
      cli.set_write_timeout(cfg_.timeout_s, 0);
      httplib::Headers headers;
      if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
      auto res = cli.Post(url_.path + "/chat/completions", headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw BackendError("chat backend returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300));
      }
      try {
        auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed chat completion response: ") + e.what());
      }
    }
    throw BackendError("chat backend failed after " + std::to_string(cfg_.retries + 1) + " attempts: " + last_error);
  }

 private:
  RemoteConfig cfg_;
  ParsedUrl url_;
};

}  // namespace duet
