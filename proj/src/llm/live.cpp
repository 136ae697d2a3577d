#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "refinery/error.hpp"
#include "refinery/llm/backends.hpp"

namespace refinery::llm {

bool is_transient_status(int status) {
  return status == 408 || status == 425 || status == 429 || (status >= 500 && status <= 599);
}

LiveBackend::LiveBackend(LiveConfig config) : config_(std::move(config)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url)) {
    throw Error(ErrorKind::Config, "invalid endpoint URL: " + config_.endpoint);
  }
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

nlohmann::json LiveBackend::build_body(const ChatRequest& request) const {
  nlohmann::json body;
  body["model"] = request.model_id;
  body["max_tokens"] = request.max_tokens;
  body["temperature"] = request.temperature;
  nlohmann::json msgs = nlohmann::json::array();
  if (config_.wire == WireFormat::AnthropicMessages) {
    for (const auto& m : request.messages) {
      if (m.role == Role::System) {
        body["system"] = m.content;
      } else {
        msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
      }
    }
  } else {
    for (const auto& m : request.messages) {
      msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
  }
  body["messages"] = std::move(msgs);
  return body;
}

Completion LiveBackend::parse_body(const nlohmann::json& body, const std::string& fallback_model) const {
  Completion c;
  c.model_id = body.value("model", fallback_model);
  try {
    if (config_.wire == WireFormat::AnthropicMessages) {
      for (const auto& part : body.at("content")) {
        if (part.value("type", "text") == "text") c.text += part.value("text", "");
      }
      if (body.contains("usage")) {
        c.token_usage = TokenCounts{body["usage"].value("input_tokens", 0LL),
                                    body["usage"].value("output_tokens", 0LL)};
      }
    } else {
      const auto& choice = body.at("choices").at(0);
      const auto& content = choice.at("message").at("content");
      if (content.is_string()) c.text = content.get<std::string>();
      if (body.contains("usage")) {
        c.token_usage = TokenCounts{body["usage"].value("prompt_tokens", 0LL),
                                    body["usage"].value("completion_tokens", 0LL)};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed provider payload: ") + e.what(), false);
  }
  if (c.text.empty()) {
    throw Error(ErrorKind::EmptyCompletion, "provider returned an empty completion");
  }
  return c;
}

Completion LiveBackend::complete_once(const ChatRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_write_timeout(config_.timeout_seconds, 0);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) {
      throw Error(ErrorKind::Config, "environment variable " + config_.api_key_env + " is not set");
    }
    if (config_.wire == WireFormat::AnthropicMessages) {
      headers.emplace("x-api-key", key);
    } else {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  if (config_.wire == WireFormat::AnthropicMessages) {
    headers.emplace("anthropic-version", "2023-06-01");
  }

  const auto started = std::chrono::steady_clock::now();
  auto res = client.Post(path_, headers, build_body(request).dump(), "application/json");
  if (!res) {
    throw TransportError("request to " + origin_ + path_ + " failed: " + httplib::to_string(res.error()),
                         /*transient=*/true);
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("provider answered HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 300),
                         is_transient_status(res->status), res->status);
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("provider body is not JSON: ") + e.what(), false, res->status);
  }
  Completion c = parse_body(body, request.model_id);
  c.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                    started);
  return c;
}

std::vector<Completion> LiveBackend::complete(const ChatRequest& request) {
  std::vector<Completion> out;
  for (int i = 0; i < request.sample_count; ++i) out.push_back(complete_once(request));
  return out;
}

}  // namespace refinery::llm
