#pragma once

// Dataset ingestion. The native format is one conversation per JSONL line:
//   {"id": "...", "persona": ["..."], "fact": "..." | null,
//    "keywords": ["..."], "turns": [{"query": "...", "gold_response": "..."}]}
// Adapters convert the ParlAI PersonaChat text dump and the FoCus JSON
// release into the same records.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/core/model.hpp"

namespace refinery::evalkit {

enum class DatasetSource { PersonaChat, INSCIT, FoCus, PRODIGy, Ubuntu, Custom };

std::string_view to_string(DatasetSource s);
/// Case-insensitive. Throws Error(Config) listing the valid names.
DatasetSource source_from_string(std::string_view s);

enum class DatasetFormat { UnifiedJsonl, PersonaChatText, FoCusJson };

std::string_view to_string(DatasetFormat f);
/// "jsonl", "personachat-txt", "focus-json". Throws Error(Config).
DatasetFormat format_from_string(std::string_view s);

struct DatasetRecord {
  // History turns carry both response and gold_response (the gold text).
  Conversation conversation;
  DatasetSource source = DatasetSource::Custom;
  // Grounding fields the source should have but this record lacks.
  std::vector<std::string> flags;
};

struct IngestResult {
  std::vector<DatasetRecord> records;
  std::vector<std::string> warnings;
};

/// Throws Error(Ingest) naming the offending line on schema violations.
IngestResult ingest(const std::filesystem::path& path, DatasetSource source,
                    DatasetFormat format = DatasetFormat::UnifiedJsonl);

IngestResult parse_unified_jsonl(std::istream& in, DatasetSource source);
IngestResult parse_personachat_text(std::istream& in);
IngestResult parse_focus_json(std::istream& in);

/// Records in id order, shuffled with `seed`, first `n` kept (all when n
/// exceeds the size).
std::vector<DatasetRecord> sample_records(std::vector<DatasetRecord> records, std::size_t n,
                                          std::uint64_t seed);

std::size_t count_query_turns(const std::vector<DatasetRecord>& records);

/// Conversation + gold responses as a unified JSONL object.
nlohmann::json record_to_json(const DatasetRecord& record);
void write_unified_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

/// Deterministic records with `total_turns` query turns spread over
/// `conversations` conversations, grounded as `source` requires.
std::vector<DatasetRecord> synthetic_records(DatasetSource source, std::size_t conversations,
                                             std::size_t total_turns, std::uint64_t seed);

/// Query-turn totals of the 100-conversation evaluation samples.
std::optional<std::size_t> reference_turn_count(DatasetSource source);

}  // namespace refinery::evalkit
