#pragma once

// Chat-completion client with a content-addressed response cache.
//
// Cache entries are keyed by sha256(model "\n" canonical request JSON) and
// stored one file per key; a hit never touches the transport.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace argpersona {

using nlohmann::json;

class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status) : Error(what), status_(status) {}
  // Last HTTP status seen; 0 when no response was received.
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class CacheMissError : public Error {
 public:
  using Error::Error;
};

class EmptyGenerationError : public Error {
 public:
  using Error::Error;
};

struct CompletionRequest {
  std::string model;
  std::string system;
  std::string prompt;
  double temperature = 1.0;
  std::optional<std::uint64_t> seed;
  int max_tokens = 1024;

  // Canonical body; also the cache identity of the request.
  json to_json() const {
    json messages = json::array();
    if (!system.empty()) messages.push_back({{"role", "system"}, {"content", system}});
    messages.push_back({{"role", "user"}, {"content", prompt}});
    json j{{"model", model}, {"messages", messages}, {"temperature", temperature}, {"max_tokens", max_tokens}};
    if (seed) j["seed"] = *seed;
    return j;
  }

  std::string hash() const { return sha256_hex(model + "\n" + to_json().dump()); }
};

struct HttpResult {
  int status = 0;  // 0: no response (connection failure, timeout)
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post(const std::string& body) = 0;
};

// Responds in-process through a callback; body is the OpenAI-style request.
class CallbackTransport : public Transport {
 public:
  using Responder = std::function<HttpResult(const json& request)>;
  explicit CallbackTransport(Responder r) : responder_(std::move(r)) {}
  HttpResult post(const std::string& body) override { return responder_(json::parse(body)); }

 private:
  Responder responder_;
};

// Wraps plain text as a chat-completion response body.
inline std::string completion_body(std::string_view text) {
  return json{{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}})}}
      .dump();
}

inline std::string extract_completion_text(const std::string& body) {
  const auto j = json::parse(body);
  const auto& choices = j.at("choices");
  if (!choices.is_array() || choices.empty()) throw Error("completion response has no choices");
  const auto& msg = choices.front().at("message").at("content");
  return msg.is_null() ? std::string{} : msg.get<std::string>();
}

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{16000};

  static bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }
};

class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  std::optional<std::string> get(const std::string& key) const {
    const auto p = path_for(key);
    if (!std::filesystem::exists(p)) return std::nullopt;
    return json::parse(read_file(p)).at("response").get<std::string>();
  }

  void put(const std::string& key, const CompletionRequest& req, const std::string& response) const {
    const json entry{{"key", key}, {"model", req.model}, {"request", req.to_json()}, {"response", response}};
    write_file_atomic(path_for(key), entry.dump(2) + "\n");
  }

  std::size_t size() const {
    if (!std::filesystem::exists(dir_)) return 0;
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) n += e.path().extension() == ".json";
    return n;
  }

 private:
  std::filesystem::path dir_;
};

enum class CacheMode { read_write, cache_only, disabled };

struct ClientConfig {
  std::optional<std::filesystem::path> cache_dir;
  CacheMode cache_mode = CacheMode::read_write;
  RetryPolicy retry;
  std::size_t max_in_flight = 4;
};

class LlmClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  LlmClient(ClientConfig config, std::shared_ptr<Transport> transport)
      : config_(std::move(config)),
        transport_(std::move(transport)),
        slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight))) {
    if (config_.cache_dir) cache_.emplace(*config_.cache_dir);
    if (config_.cache_mode == CacheMode::cache_only && !cache_)
      throw ConfigError("cache-only mode requires a cache directory");
    if (config_.cache_mode != CacheMode::cache_only && !transport_)
      throw ConfigError("no endpoint configured and cache-only mode is off");
  }

  // Test hook; production code sleeps for real.
  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

  std::size_t network_calls() const noexcept { return network_calls_.load(); }

  // Cache hit -> stored text. Miss -> up to max_attempts transport calls with
  // exponential backoff, then one store. Concurrent identical misses share
  // one in-flight call.
  std::string complete(const CompletionRequest& req) {
    const std::string key = req.hash();
    const bool use_cache = cache_ && config_.cache_mode != CacheMode::disabled;
    if (use_cache) {
      if (auto hit = cache_->get(key)) return *hit;
      if (config_.cache_mode == CacheMode::cache_only)
        throw CacheMissError("no cached response for request " + key.substr(0, 16));
    }

    std::shared_future<std::string> pending;
    std::promise<std::string> promise;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      if (auto it = in_flight_.find(key); it != in_flight_.end()) {
        pending = it->second;
      } else {
        pending = promise.get_future().share();
        in_flight_.emplace(key, pending);
        owner = true;
      }
    }
    if (!owner) return pending.get();

    try {
      // Another process (or an earlier owner) may have stored it meanwhile.
      std::optional<std::string> text = use_cache ? cache_->get(key) : std::nullopt;
      if (!text) {
        text = fetch(req);
        if (use_cache) cache_->put(key, req, *text);
      }
      promise.set_value(*text);
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
    {
      std::lock_guard lock(mu_);
      in_flight_.erase(key);
    }
    return pending.get();
  }

 private:
  std::string fetch(const CompletionRequest& req) {
    const auto body = req.to_json().dump();
    auto backoff = config_.retry.initial_backoff;
    int last_status = 0;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
      HttpResult res;
      {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<1024>& s;
          ~Release() { s.release(); }
        } release{slots_};
        ++network_calls_;
        try {
          res = transport_->post(body);
        } catch (const std::exception& e) {
          res = {0, e.what()};
        }
      }
      last_status = res.status;
      if (res.status >= 200 && res.status < 300) {
        try {
          return extract_completion_text(res.body);
        } catch (const std::exception& e) {
          throw TransportError(std::string("unreadable completion response: ") + e.what(), res.status);
        }
      }
      last_error = res.body.substr(0, 200);
      if (!RetryPolicy::retryable(res.status)) break;
      if (attempt < config_.retry.max_attempts) {
        sleep(backoff);
        backoff = std::min(config_.retry.max_backoff,
                           std::chrono::milliseconds(static_cast<long long>(
                               static_cast<double>(backoff.count()) * config_.retry.multiplier)));
      }
    }
    throw TransportError("completion request failed with status " + std::to_string(last_status) + ": " + last_error,
                         last_status);
  }

  void sleep(std::chrono::milliseconds d) {
    if (sleeper_)
      sleeper_(d);
    else
      std::this_thread::sleep_for(d);
  }

  ClientConfig config_;
  std::shared_ptr<Transport> transport_;
  std::optional<ResponseCache> cache_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::size_t> network_calls_{0};
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_future<std::string>> in_flight_;
  Sleeper sleeper_;
};

}  // namespace argpersona
