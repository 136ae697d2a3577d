#include "refinery/evalkit/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "refinery/error.hpp"

namespace refinery::evalkit {

namespace {

struct SourceName {
  DatasetSource source;
  std::string_view name;
};

constexpr std::array<SourceName, 6> kSources{{
    {DatasetSource::PersonaChat, "personachat"},
    {DatasetSource::INSCIT, "inscit"},
    {DatasetSource::FoCus, "focus"},
    {DatasetSource::PRODIGy, "prodigy"},
    {DatasetSource::Ubuntu, "ubuntu"},
    {DatasetSource::Custom, "custom"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool needs_persona(DatasetSource s) {
  return s == DatasetSource::PersonaChat || s == DatasetSource::FoCus;
}
bool needs_fact(DatasetSource s) { return s == DatasetSource::INSCIT || s == DatasetSource::FoCus; }

void flag_record(DatasetRecord& rec, std::vector<std::string>& warnings) {
  const auto& c = rec.conversation;
  if (needs_persona(rec.source) && c.persona().empty()) rec.flags.emplace_back("missing-persona");
  if (needs_fact(rec.source) && (!c.fact() || c.fact()->empty())) rec.flags.emplace_back("missing-fact");
  for (const auto& f : rec.flags) warnings.push_back(fmt::format("{}: {}", c.id(), f));
}

// Gold text doubles as the recorded response so the record is a complete
// conversation.
std::vector<Turn> gold_turns(const std::vector<std::pair<std::string, std::optional<std::string>>>& pairs) {
  std::vector<Turn> turns;
  int index = 1;
  for (const auto& [q, gold] : pairs) {
    Turn t;
    t.index = index++;
    t.query = q;
    t.gold_response = gold;
    t.response = gold;
    turns.push_back(std::move(t));
  }
  return turns;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw Error(ErrorKind::Ingest, fmt::format("line {}: {}", line, msg));
}

std::vector<std::string> string_list(const nlohmann::json& obj, const char* key, std::size_t line) {
  std::vector<std::string> out;
  if (!obj.contains(key) || obj[key].is_null()) return out;
  if (!obj[key].is_array()) fail(line, fmt::format("'{}' must be an array of strings", key));
  for (const auto& v : obj[key]) {
    if (!v.is_string()) fail(line, fmt::format("'{}' must be an array of strings", key));
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

std::string_view to_string(DatasetSource s) {
  for (const auto& e : kSources)
    if (e.source == s) return e.name;
  return "custom";
}

DatasetSource source_from_string(std::string_view s) {
  const auto l = lower(s);
  for (const auto& e : kSources)
    if (e.name == l) return e.source;
  std::string names;
  for (const auto& e : kSources) names += (names.empty() ? "" : ", ") + std::string(e.name);
  throw Error(ErrorKind::Config, fmt::format("unknown dataset source '{}' (valid: {})", s, names));
}

std::string_view to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::UnifiedJsonl: return "jsonl";
    case DatasetFormat::PersonaChatText: return "personachat-txt";
    case DatasetFormat::FoCusJson: return "focus-json";
  }
  return "jsonl";
}

DatasetFormat format_from_string(std::string_view s) {
  const auto l = lower(s);
  if (l == "jsonl") return DatasetFormat::UnifiedJsonl;
  if (l == "personachat-txt") return DatasetFormat::PersonaChatText;
  if (l == "focus-json") return DatasetFormat::FoCusJson;
  throw Error(ErrorKind::Config,
              fmt::format("unknown dataset format '{}' (valid: jsonl, personachat-txt, focus-json)", s));
}

IngestResult parse_unified_jsonl(std::istream& in, DatasetSource source) {
  IngestResult out;
  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      fail(line, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) fail(line, "expected a JSON object");
    if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty())
      fail(line, "'id' must be a non-empty string");
    const auto id = j["id"].get<std::string>();
    if (!seen.insert(id).second) fail(line, fmt::format("duplicate id '{}'", id));

    auto persona = string_list(j, "persona", line);
    auto keywords = string_list(j, "keywords", line);
    std::optional<std::string> fact;
    if (j.contains("fact") && !j["fact"].is_null()) {
      if (!j["fact"].is_string()) fail(line, "'fact' must be a string or null");
      fact = j["fact"].get<std::string>();
    }

    if (!j.contains("turns") || !j["turns"].is_array() || j["turns"].empty())
      fail(line, "'turns' must be a non-empty array");
    std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
    const auto& turns = j["turns"];
    for (std::size_t k = 0; k < turns.size(); ++k) {
      const auto& t = turns[k];
      if (!t.is_object()) fail(line, fmt::format("turn {} must be an object", k + 1));
      if (!t.contains("query") || !t["query"].is_string() || trim(t["query"].get<std::string>()).empty())
        fail(line, fmt::format("turn {} needs a non-empty 'query'", k + 1));
      std::optional<std::string> gold;
      if (t.contains("gold_response") && !t["gold_response"].is_null()) {
        if (!t["gold_response"].is_string()) fail(line, fmt::format("turn {} 'gold_response' must be a string", k + 1));
        gold = t["gold_response"].get<std::string>();
      }
      if (!gold && k + 1 < turns.size())
        fail(line, fmt::format("turn {} lacks 'gold_response' (only the last turn may)", k + 1));
      pairs.emplace_back(t["query"].get<std::string>(), gold);
    }

    DatasetRecord rec;
    rec.source = source;
    try {
      rec.conversation = Conversation(id, std::move(persona), std::move(fact), std::move(keywords), gold_turns(pairs));
    } catch (const Error& e) {
      fail(line, e.what());
    }
    flag_record(rec, out.warnings);
    out.records.push_back(std::move(rec));
  }
  if (out.records.empty()) out.warnings.emplace_back("dataset is empty");
  return out;
}

// ParlAI dump: numbered lines, numbering restarts at 1 per episode.
//   1 your persona: i like cats.
//   3 hi there\tgold reply\t\tcand a|cand b
IngestResult parse_personachat_text(std::istream& in) {
  IngestResult out;
  std::vector<std::string> persona;
  std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
  std::size_t episode = 0;
  std::size_t episode_line = 0;

  auto flush = [&] {
    if (pairs.empty() && persona.empty()) return;
    if (pairs.empty()) fail(episode_line, "episode has no dialogue lines");
    DatasetRecord rec;
    rec.source = DatasetSource::PersonaChat;
    rec.conversation = Conversation(fmt::format("personachat-{:05}", episode), persona, std::nullopt, {},
                                    gold_turns(pairs));
    flag_record(rec, out.warnings);
    out.records.push_back(std::move(rec));
    persona.clear();
    pairs.clear();
  };

  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (trim(text).empty()) continue;
    const auto sp = text.find(' ');
    if (sp == std::string::npos) fail(line, "expected '<number> <text>'");
    int number = 0;
    try {
      number = std::stoi(text.substr(0, sp));
    } catch (const std::exception&) {
      fail(line, "expected a line number");
    }
    const std::string body = text.substr(sp + 1);
    if (number == 1) {
      flush();
      ++episode;
      episode_line = line;
    }
    constexpr std::string_view kSelf = "your persona:";
    if (body.rfind(kSelf, 0) == 0) {
      persona.push_back(trim(body.substr(kSelf.size())));
      continue;
    }
    if (body.rfind("partner's persona:", 0) == 0) continue;
    const auto tab = body.find('\t');
    if (tab == std::string::npos) fail(line, "dialogue line lacks a tab-separated gold response");
    const auto end = body.find('\t', tab + 1);
    std::string query = trim(body.substr(0, tab));
    std::string gold = trim(body.substr(tab + 1, end == std::string::npos ? std::string::npos : end - tab - 1));
    if (query.empty()) fail(line, "empty query");
    pairs.emplace_back(std::move(query), std::move(gold));
  }
  flush();
  if (out.records.empty()) out.warnings.emplace_back("dataset is empty");
  return out;
}

// FoCus release: {"data": [{"dialogID", "persona", "knowledge", "landmark_link",
// "utterance": [{"dialogueN": [...], "knowledge_answer_index": i}, ...]}]}.
// The last utterance entry holds the whole alternating user/system dialogue.
IngestResult parse_focus_json(std::istream& in) {
  IngestResult out;
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Ingest, std::string("invalid JSON: ") + e.what());
  }
  const auto& data = root.is_object() && root.contains("data") ? root["data"] : root;
  if (!data.is_array()) throw Error(ErrorKind::Ingest, "expected a 'data' array");

  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& d = data[n];
    const std::size_t entry = n + 1;
    auto bad = [&](const std::string& msg) {
      throw Error(ErrorKind::Ingest, fmt::format("entry {}: {}", entry, msg));
    };
    if (!d.is_object()) bad("expected an object");
    const std::string id = d.value("dialogID", fmt::format("focus-{:05}", entry));
    std::vector<std::string> persona;
    for (const auto& p : d.value("persona", nlohmann::json::array()))
      if (p.is_string()) persona.push_back(p.get<std::string>());
    std::vector<std::string> knowledge;
    for (const auto& k : d.value("knowledge", nlohmann::json::array()))
      if (k.is_string()) knowledge.push_back(k.get<std::string>());

    const auto& utts = d.value("utterance", nlohmann::json::array());
    if (!utts.is_array() || utts.empty()) bad("missing 'utterance'");
    std::vector<std::string> dialogue;
    for (const auto& [key, value] : utts.back().items()) {
      if (key.rfind("dialogue", 0) == 0 && value.is_array())
        for (const auto& u : value) dialogue.push_back(u.get<std::string>());
    }
    if (dialogue.size() < 2) bad("dialogue has no user/system pair");

    std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
    for (std::size_t i = 0; i + 1 < dialogue.size(); i += 2) pairs.emplace_back(dialogue[i], dialogue[i + 1]);

    // Knowledge passages the system actually used, in first-use order.
    std::vector<std::string> used;
    for (const auto& u : utts) {
      if (!u.contains("knowledge_answer_index") || !u["knowledge_answer_index"].is_number_integer()) continue;
      const auto i = u["knowledge_answer_index"].get<long>();
      if (i >= 0 && static_cast<std::size_t>(i) < knowledge.size() &&
          std::find(used.begin(), used.end(), knowledge[i]) == used.end())
        used.push_back(knowledge[i]);
    }
    std::optional<std::string> fact;
    if (!used.empty()) {
      std::string joined;
      for (const auto& u : used) joined += (joined.empty() ? "" : " ") + u;
      fact = joined;
    }

    std::vector<std::string> keywords;
    const std::string link = d.value("landmark_link", "");
    if (!link.empty()) {
      std::string title = link.substr(link.find_last_of('/') + 1);
      std::replace(title.begin(), title.end(), '_', ' ');
      if (!title.empty()) keywords.push_back(title);
    }

    DatasetRecord rec;
    rec.source = DatasetSource::FoCus;
    try {
      rec.conversation = Conversation(id, persona, fact, keywords, gold_turns(pairs));
    } catch (const Error& e) {
      bad(e.what());
    }
    flag_record(rec, out.warnings);
    out.records.push_back(std::move(rec));
  }
  if (out.records.empty()) out.warnings.emplace_back("dataset is empty");
  return out;
}

IngestResult ingest(const std::filesystem::path& path, DatasetSource source, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Ingest, fmt::format("cannot open dataset {}", path.string()));
  try {
    switch (format) {
      case DatasetFormat::UnifiedJsonl: return parse_unified_jsonl(in, source);
      case DatasetFormat::PersonaChatText: return parse_personachat_text(in);
      case DatasetFormat::FoCusJson: return parse_focus_json(in);
    }
  } catch (const Error& e) {
    throw Error(ErrorKind::Ingest, fmt::format("{}: {}", path.string(), e.what()));
  }
  return {};
}

std::vector<DatasetRecord> sample_records(std::vector<DatasetRecord> records, std::size_t n, std::uint64_t seed) {
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.conversation.id() < b.conversation.id(); });
  std::mt19937_64 rng(seed);
  for (std::size_t i = records.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(records[i - 1], records[j]);
  }
  if (records.size() > n) records.resize(n);
  return records;
}

std::size_t count_query_turns(const std::vector<DatasetRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.conversation.turns().size();
  return n;
}

nlohmann::json record_to_json(const DatasetRecord& record) {
  const auto& c = record.conversation;
  nlohmann::json j;
  j["id"] = c.id();
  j["persona"] = c.persona();
  j["fact"] = c.fact() ? nlohmann::json(*c.fact()) : nlohmann::json(nullptr);
  j["keywords"] = c.keywords();
  j["turns"] = nlohmann::json::array();
  for (const auto& t : c.turns()) {
    nlohmann::json tj;
    tj["query"] = t.query;
    tj["gold_response"] = t.gold_response ? nlohmann::json(*t.gold_response) : nlohmann::json(nullptr);
    j["turns"].push_back(std::move(tj));
  }
  return j;
}

void write_unified_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Ingest, fmt::format("cannot write {}", path.string()));
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<DatasetRecord> synthetic_records(DatasetSource source, std::size_t conversations,
                                             std::size_t total_turns, std::uint64_t seed) {
  if (conversations == 0 || total_turns < conversations)
    throw Error(ErrorKind::Domain, "need at least one turn per conversation");
  const std::size_t base = total_turns / conversations;
  const std::size_t extra = total_turns % conversations;

  std::vector<std::size_t> order(conversations);
  for (std::size_t i = 0; i < conversations; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::size_t> lengths(conversations, base);
  for (std::size_t i = 0; i < extra; ++i) ++lengths[order[i]];

  const auto tag = std::string(to_string(source));
  std::vector<DatasetRecord> out;
  for (std::size_t i = 0; i < conversations; ++i) {
    const std::string topic = fmt::format("landmark {}", i + 1);
    std::vector<std::string> persona;
    std::optional<std::string> fact;
    if (needs_persona(source) || source == DatasetSource::Custom)
      persona = {fmt::format("I have always wanted to visit {}.", topic), "I enjoy long walks."};
    if (needs_fact(source) || source == DatasetSource::Custom)
      fact = fmt::format("{} was completed in {}.", topic, 1800 + static_cast<int>(i));
    std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
    for (std::size_t k = 0; k < lengths[i]; ++k)
      pairs.emplace_back(fmt::format("Question {} about {}?", k + 1, topic),
                         fmt::format("Answer {} about {}.", k + 1, topic));
    DatasetRecord rec;
    rec.source = source;
    rec.conversation = Conversation(fmt::format("{}-{:03}", tag, i + 1), std::move(persona), std::move(fact),
                                    {topic}, gold_turns(pairs));
    out.push_back(std::move(rec));
  }
  return out;
}

std::optional<std::size_t> reference_turn_count(DatasetSource source) {
  switch (source) {
    case DatasetSource::PersonaChat: return 673;
    case DatasetSource::INSCIT: return 506;
    case DatasetSource::FoCus: return 563;
    default: return std::nullopt;
  }
}

}  // namespace refinery::evalkit
