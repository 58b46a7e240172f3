#include "trajlens/llm.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace trajlens {

using nlohmann::json;

ChatRequest ChatRequest::user(std::string prompt) {
  ChatRequest r;
  r.messages.push_back({"user", std::move(prompt)});
  return r;
}

const std::string& ChatRequest::prompt() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it)
    if (it->role == "user") return it->content;
  static const std::string empty;
  return empty;
}

ScriptedChatClient ScriptedChatClient::sequence(std::vector<std::string> responses) {
  if (responses.empty()) throw InvalidArgument("scripted sequence needs at least one response");
  return ScriptedChatClient([responses = std::move(responses)](const ChatRequest&, std::size_t i) {
    return responses[std::min(i, responses.size() - 1)];
  });
}

std::string ScriptedChatClient::complete(const ChatRequest& request) {
  std::size_t idx;
  {
    std::lock_guard lock(mu_);
    idx = calls_++;
    prompts_.push_back(request.prompt());
  }
  return responder_(request, idx);
}

std::vector<std::string> ScriptedChatClient::prompts() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

EndpointConfig endpoint_from_env(std::string_view id) {
  std::string prefix;
  for (char c : id) prefix.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : '_');
  auto env = [&](const char* suffix) {
    const char* v = std::getenv((prefix + suffix).c_str());
    return v ? std::string(v) : std::string();
  };
  EndpointConfig c;
  c.id = std::string(id);
  c.base_url = env("_BASE_URL");
  c.api_key = env("_API_KEY");
  c.model = env("_MODEL");
  if (c.base_url.empty()) throw InvalidArgument("endpoint '" + c.id + "': " + prefix + "_BASE_URL is not set");
  return c;
}

namespace {

// Splits "https://host:port/v1" into the client origin and a path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme = url.find("://");
  std::size_t start = scheme == std::string::npos ? 0 : scheme + 3;
  auto slash = url.find('/', start);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

}  // namespace

std::string post_json_with_retry(const EndpointConfig& endpoint, const std::string& path, const std::string& body) {
  auto [origin, prefix] = split_url(endpoint.base_url);
  httplib::Client client(origin);
  client.set_read_timeout(endpoint.timeout_s, 0);
  client.set_connection_timeout(30, 0);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  int backoff = endpoint.backoff_ms;
  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, endpoint.max_attempts); ++attempt) {
    if (attempt > 0) {
      spdlog::warn("{}: retrying after {} ({} ms)", endpoint.id, last_error, backoff);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    auto res = client.Post(prefix + path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status / 100 == 2) return res->body;
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status / 100 == 4 && res->status != 429) break;
  }
  throw LlmError("endpoint '" + endpoint.id + "' failed: " + last_error);
}

std::string HttpChatClient::complete(const ChatRequest& request) {
  json body;
  if (!config_.model.empty()) body["model"] = config_.model;
  body["temperature"] = request.temperature;
  if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
  if (request.json_object) body["response_format"] = {{"type", "json_object"}};
  body["messages"] = json::array();
  for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  const std::string reply = post_json_with_retry(config_, "/chat/completions", body.dump());
  try {
    return json::parse(reply).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw LlmError("endpoint '" + config_.id + "': malformed completion: " + e.what());
  }
}

std::vector<float> HttpEmbeddingClient::embed(std::string_view text) {
  json body;
  if (!config_.model.empty()) body["model"] = config_.model;
  body["input"] = std::string(text);
  const std::string reply = post_json_with_retry(config_, "/embeddings", body.dump());
  try {
    return json::parse(reply).at("data").at(0).at("embedding").get<std::vector<float>>();
  } catch (const json::exception& e) {
    throw LlmError("endpoint '" + config_.id + "': malformed embedding: " + e.what());
  }
}

namespace {

std::optional<std::size_t> matching_close(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') ++depth;
    else if (c == '}' || c == ']') {
      if (--depth == 0) return i;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> extract_json_block(std::string_view text) {
  auto fence = text.find("```");
  if (fence != std::string_view::npos) {
    auto body = text.find('\n', fence);
    auto close = body == std::string_view::npos ? body : text.find("```", body);
    if (body != std::string_view::npos && close != std::string_view::npos) {
      auto inner = extract_json_block(text.substr(body + 1, close - body - 1));
      if (inner) return inner;
    }
  }
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{' && text[i] != '[') continue;
    auto end = matching_close(text, i);
    if (!end) continue;
    std::string candidate(text.substr(i, *end - i + 1));
    if (json::accept(candidate)) return candidate;
  }
  return std::nullopt;
}

}  // namespace trajlens
