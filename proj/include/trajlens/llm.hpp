#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "trajlens/common.hpp"

namespace trajlens {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  bool json_object = false;  // ask for a JSON-object response

  static ChatRequest user(std::string prompt);
  /// Content of the last user message.
  const std::string& prompt() const;
};

/// Chat-completion client. Implementations must be callable concurrently.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

/// Deterministic client driven by a function of the request. Used for tests
/// and for the scripted judges.
class ScriptedChatClient final : public ChatClient {
 public:
  using Responder = std::function<std::string(const ChatRequest&, std::size_t call_index)>;

  explicit ScriptedChatClient(Responder responder) : responder_(std::move(responder)) {}
  /// Replies with `responses` in order, repeating the last one once exhausted.
  static ScriptedChatClient sequence(std::vector<std::string> responses);

  std::string complete(const ChatRequest& request) override;
  std::size_t calls() const noexcept { return calls_.load(); }
  std::vector<std::string> prompts() const;

 private:
  Responder responder_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

/// Endpoint settings, typically read from <ID>_BASE_URL / <ID>_API_KEY / <ID>_MODEL.
struct EndpointConfig {
  std::string id;
  std::string base_url;
  std::string api_key;
  std::string model;
  int max_attempts = 4;
  int backoff_ms = 500;  // doubled after every failed attempt
  int timeout_s = 120;
};

EndpointConfig endpoint_from_env(std::string_view id);

/// OpenAI-compatible /v1/chat/completions client.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(EndpointConfig config) : config_(std::move(config)) {}
  std::string complete(const ChatRequest& request) override;

 private:
  EndpointConfig config_;
};

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual std::vector<float> embed(std::string_view text) = 0;
};

/// OpenAI-compatible /v1/embeddings client.
class HttpEmbeddingClient final : public EmbeddingClient {
 public:
  explicit HttpEmbeddingClient(EndpointConfig config) : config_(std::move(config)) {}
  std::vector<float> embed(std::string_view text) override;

 private:
  EndpointConfig config_;
};

/// POSTs a JSON body with retries and exponential backoff; returns the body
/// of the first 2xx response. Throws LlmError after the last attempt.
std::string post_json_with_retry(const EndpointConfig& endpoint, const std::string& path,
                                 const std::string& body);

/// Runs fn(0..n-1) on at most `concurrency` threads. Results must be written
/// by index so the outcome is independent of scheduling. The first exception
/// thrown by any task is rethrown after all workers stop.
template <typename Fn>
void run_bounded(std::size_t n, std::size_t concurrency, Fn&& fn) {
  if (n == 0) return;
  concurrency = std::max<std::size_t>(1, std::min(concurrency, n));
  if (concurrency == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> workers;
  workers.reserve(concurrency);
  for (std::size_t w = 0; w < concurrency; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed.load(); i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first) std::rethrow_exception(first);
}

/// Strips a ```json fence or surrounding prose and returns the first JSON
/// value (object or array) found in `text`.
std::optional<std::string> extract_json_block(std::string_view text);

}  // namespace trajlens
