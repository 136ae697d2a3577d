#pragma once

// Prompt templates: text assets with "# key: value" header lines, a system
// body, a "=== USER ===" delimiter line and a user body. Placeholders use
// {name}; only names declared in the header are substituted.

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>

#include "refinery/core/metric.hpp"
#include "refinery/core/model.hpp"

namespace refinery::prompting {

inline constexpr std::string_view kUserDelimiter = "=== USER ===";
inline constexpr std::string_view kAbsent = "None";

struct PromptTemplate {
  std::string id;
  std::string system_body;
  std::string user_body;
  std::set<std::string> required;
  std::set<std::string> optional;
  std::map<std::string, std::string> metadata;

  bool declares(const std::string& name) const {
    return required.count(name) > 0 || optional.count(name) > 0;
  }
  /// Judge templates: bounds from the "scale" header ("0-1", "1-3").
  ScoreBounds scale() const;
};

/// Parses an asset. Throws Error(Config) when a required placeholder is not
/// used in either body or a body uses an undeclared {name}.
PromptTemplate parse_template(std::string_view text, std::string fallback_id = {});

using RenderContext = std::map<std::string, std::string>;

struct RenderedPrompt {
  std::string system;
  std::string user;
};

/// Single pass substitution. Absent or empty optional values render as
/// "None"; a missing required value throws Error(Render) naming it. Values
/// are inserted verbatim (no escaping, no recursive expansion).
RenderedPrompt render(const PromptTemplate& tmpl, const RenderContext& ctx);

/// Raw asset text keyed by id, embedded at build time.
const std::map<std::string, std::string_view>& builtin_assets();

class PromptLibrary {
 public:
  explicit PromptLibrary(std::map<std::string, PromptTemplate> templates);

  /// Embedded assets.
  static std::shared_ptr<const PromptLibrary> builtin();
  /// Embedded assets, with any `<dir>/<id>.txt` replacing the embedded one.
  static std::shared_ptr<const PromptLibrary> with_override_dir(const std::filesystem::path& dir);
  /// Embedded assets with per-id override files.
  static std::shared_ptr<const PromptLibrary> with_overrides(
      const std::map<std::string, std::filesystem::path>& files);

  /// Throws Error(Config) for an unknown id.
  const PromptTemplate& get(const std::string& id) const;
  bool contains(const std::string& id) const { return templates_.count(id) > 0; }
  const std::map<std::string, PromptTemplate>& all() const noexcept { return templates_; }

  const PromptTemplate& responding(bool grounded = false) const;
  const PromptTemplate& planner() const;
  /// Throws Error(Domain) for a non-refiner kind.
  const PromptTemplate& refiner(AgentKind kind) const;
  const PromptTemplate& finalizer() const;
  const PromptTemplate& judge(MetricKind metric) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// Template id for a refiner kind ("refine_fact", ...).
std::string refiner_template_id(AgentKind kind);
/// "judge_coherence", ...
std::string judge_template_id(MetricKind metric);

}  // namespace refinery::prompting
