#include "refinery/error.hpp"
#include "refinery/llm/backends.hpp"

namespace refinery::llm {

ScriptedBackend::ScriptedBackend(std::vector<ScriptedRule> rules,
                                 std::optional<std::string> default_template)
    : default_(std::move(default_template)) {
  if (rules.empty() && !default_) {
    throw Error(ErrorKind::Config, "scripted backend needs at least one rule or a default");
  }
  for (auto& r : rules) {
    if (r.templates.empty() && !r.handler) {
      throw Error(ErrorKind::Config, "scripted rule '" + r.pattern + "' has no response");
    }
    CompiledRule c{std::move(r), std::nullopt};
    if (c.rule.regex) {
      try {
        c.re.emplace(c.rule.pattern, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw Error(ErrorKind::Config, "bad scripted regex '" + c.rule.pattern + "': " + e.what());
      }
    }
    rules_.push_back(std::move(c));
  }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& j) {
  std::vector<ScriptedRule> rules;
  try {
    for (const auto& rj : j.value("rules", nlohmann::json::array())) {
      ScriptedRule r;
      r.pattern = rj.at("match").get<std::string>();
      r.regex = rj.value("regex", false);
      const auto& resp = rj.at("respond");
      if (resp.is_array()) {
        for (const auto& t : resp) r.templates.push_back(t.get<std::string>());
      } else {
        r.templates.push_back(resp.get<std::string>());
      }
      rules.push_back(std::move(r));
    }
    std::optional<std::string> def;
    if (j.contains("default") && !j["default"].is_null()) def = j["default"].get<std::string>();
    return std::make_shared<ScriptedBackend>(std::move(rules), std::move(def));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid scripted rule table: ") + e.what());
  }
}

std::vector<Completion> ScriptedBackend::complete(const ChatRequest& request) {
  const std::string prompt = request.concatenated_prompt();
  std::vector<Completion> out;
  out.reserve(static_cast<std::size_t>(request.sample_count));

  for (int rule_index = 0; rule_index < static_cast<int>(rules_.size()); ++rule_index) {
    const CompiledRule& c = rules_[static_cast<std::size_t>(rule_index)];
    std::smatch m;
    bool hit = c.re ? std::regex_search(prompt, m, *c.re)
                    : prompt.find(c.rule.pattern) != std::string::npos;
    if (!hit) continue;
    for (int s = 0; s < request.sample_count; ++s) {
      std::string text;
      if (c.rule.handler) {
        text = c.rule.handler(request);
        std::lock_guard lock(mu_);
        ++hits_[rule_index];
      } else {
        std::size_t n;
        {
          std::lock_guard lock(mu_);
          n = static_cast<std::size_t>(hits_[rule_index]++);
        }
        const std::string& tmpl = c.rule.templates[n % c.rule.templates.size()];
        text = c.re ? m.format(tmpl) : tmpl;
      }
      out.push_back({std::move(text), request.model_id, std::chrono::milliseconds{0}, std::nullopt});
    }
    return out;
  }

  if (!default_) {
    throw Error(ErrorKind::ScriptedMiss,
                "no scripted rule matched and no default is set (prompt starts: " +
                    prompt.substr(0, 80) + ")");
  }
  {
    std::lock_guard lock(mu_);
    hits_[-1] += request.sample_count;
  }
  for (int s = 0; s < request.sample_count; ++s) {
    out.push_back({*default_, request.model_id, std::chrono::milliseconds{0}, std::nullopt});
  }
  return out;
}

std::map<int, int> ScriptedBackend::hit_counts() const {
  std::lock_guard lock(mu_);
  return hits_;
}

// ---------------------------------------------------------------------------

ReplayBackend::ReplayBackend(CassetteStore store, std::shared_ptr<Backend> record_from)
    : store_(std::move(store)), record_from_(std::move(record_from)) {}

std::vector<Completion> ReplayBackend::complete(const ChatRequest& request) {
  const std::string key = cassette_key(request);
  const auto wanted = static_cast<std::size_t>(request.sample_count);
  if (auto c = store_.load(key); c && c->completions.size() >= wanted) {
    ++hits_;
    return {c->completions.begin(), c->completions.begin() + static_cast<std::ptrdiff_t>(wanted)};
  }
  if (!record_from_) {
    throw Error(ErrorKind::CacheMiss, "no cassette for request " + key + " in " +
                                          store_.dir().string());
  }
  auto fresh = record_from_->complete(request);
  {
    std::lock_guard lock(record_mu_);
    store_.save(request, fresh);
  }
  ++recorded_;
  return fresh;
}

}  // namespace refinery::llm
