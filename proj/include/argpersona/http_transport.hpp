#pragma once

// OpenAI-compatible chat-completions transport over cpp-httplib.

#include <cstdlib>
#include <string>

#include "httplib.h"

// <resolv.h> (pulled in by httplib) defines _res, which collides with Eigen
// parameter names in later includes.
#ifdef _res
#undef _res
#endif

#include "llm_client.hpp"

namespace argpersona {

struct EndpointConfig {
  std::string base_url = "https://api.openai.com";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  int timeout_seconds = 120;
};

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }

  HttpResult post(const std::string& body) override {
    httplib::Client cli(cfg_.base_url);
    cli.set_connection_timeout(cfg_.timeout_seconds, 0);
    cli.set_read_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(cfg_.path, headers, body, "application/json");
    if (!res) return {0, "transport failure: " + httplib::to_string(res.error())};
    return {res->status, res->body};
  }

 private:
  EndpointConfig cfg_;
  std::string api_key_;
};

}  // namespace argpersona
