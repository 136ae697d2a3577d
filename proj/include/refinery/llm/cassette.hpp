#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/llm/gateway.hpp"

namespace refinery::llm {

/// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::string_view data);

/// 64-char lowercase SHA-256 hex digest over the canonical JSON of
/// (model_id, messages, temperature, max_tokens). sample_count is excluded.
std::string cassette_key(const ChatRequest& request);

nlohmann::json request_to_json(const ChatRequest& request, bool include_sample_count = true);
ChatRequest request_from_json(const nlohmann::json& j);
nlohmann::json completion_to_json(const Completion& c);
Completion completion_from_json(const nlohmann::json& j);

struct Cassette {
  std::string key;
  ChatRequest request;
  std::vector<Completion> completions;
};

/// One JSON file per key: `<dir>/<digest>.json`. Writes go through a
/// temporary file and a rename so readers never see partial cassettes.
class CassetteStore {
 public:
  explicit CassetteStore(std::filesystem::path dir);

  std::optional<Cassette> load(const std::string& key) const;
  void save(const ChatRequest& request, const std::vector<Completion>& completions) const;
  std::filesystem::path path_for(const std::string& key) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace refinery::llm
