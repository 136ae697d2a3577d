#include "refinery/llm/cassette.hpp"

#include <array>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "refinery/error.hpp"

namespace refinery::llm {

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::Domain, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

nlohmann::json request_to_json(const ChatRequest& request, bool include_sample_count) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : request.messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  nlohmann::json j = {{"model_id", request.model_id},
                      {"messages", std::move(msgs)},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_tokens}};
  if (include_sample_count) j["sample_count"] = request.sample_count;
  return j;
}

ChatRequest request_from_json(const nlohmann::json& j) {
  ChatRequest r;
  r.model_id = j.at("model_id").get<std::string>();
  for (const auto& m : j.at("messages")) {
    auto role = role_from_string(m.at("role").get<std::string>());
    if (!role) throw Error(ErrorKind::Validation, "unknown role in cassette");
    r.messages.push_back({*role, m.at("content").get<std::string>()});
  }
  r.temperature = j.at("temperature").get<double>();
  r.max_tokens = j.at("max_tokens").get<int>();
  r.sample_count = j.value("sample_count", 1);
  return r;
}

nlohmann::json completion_to_json(const Completion& c) {
  nlohmann::json j = {{"text", c.text}, {"model_id", c.model_id}, {"latency_ms", c.latency.count()}};
  if (c.token_usage) {
    j["usage"] = {{"prompt", c.token_usage->prompt}, {"completion", c.token_usage->completion}};
  }
  return j;
}

Completion completion_from_json(const nlohmann::json& j) {
  Completion c;
  c.text = j.at("text").get<std::string>();
  c.model_id = j.value("model_id", "");
  c.latency = std::chrono::milliseconds(j.value("latency_ms", 0LL));
  if (j.contains("usage")) {
    c.token_usage = TokenCounts{j["usage"].value("prompt", 0LL), j["usage"].value("completion", 0LL)};
  }
  return c;
}

std::string cassette_key(const ChatRequest& request) {
  // nlohmann objects are key-sorted, so dump() is canonical.
  return sha256_hex(request_to_json(request, /*include_sample_count=*/false).dump());
}

// ---------------------------------------------------------------------------

CassetteStore::CassetteStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path CassetteStore::path_for(const std::string& key) const {
  return dir_ / (key + ".json");
}

std::optional<Cassette> CassetteStore::load(const std::string& key) const {
  std::ifstream in(path_for(key));
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CacheMiss, "corrupt cassette " + path_for(key).string() + ": " + e.what());
  }
  Cassette c;
  c.key = j.value("key", key);
  c.request = request_from_json(j.at("request"));
  for (const auto& cj : j.at("completions")) c.completions.push_back(completion_from_json(cj));
  return c;
}

void CassetteStore::save(const ChatRequest& request,
                         const std::vector<Completion>& completions) const {
  std::filesystem::create_directories(dir_);
  const std::string key = cassette_key(request);
  nlohmann::json j;
  j["key"] = key;
  j["request"] = request_to_json(request, false);
  j["completions"] = nlohmann::json::array();
  for (const auto& c : completions) j["completions"].push_back(completion_to_json(c));

  static std::atomic<unsigned> counter{0};
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "."
           << counter++;
  const auto tmp = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Config, "cannot write cassette " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path_for(key));
}

}  // namespace refinery::llm
