#include "refinery/prompting/prompts.hpp"

#include <fstream>
#include <mutex>
#include <sstream>
#include <vector>

#include "refinery/error.hpp"

namespace refinery::prompting {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::set<std::string> split_names(std::string_view list) {
  std::set<std::string> out;
  std::stringstream ss{std::string(list)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.insert(t);
  }
  return out;
}

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Calls fn(begin, end, name) for each {name} occurrence, where [begin, end)
// spans the braces.
template <typename Fn>
void scan_placeholders(std::string_view body, Fn&& fn) {
  std::size_t i = 0;
  while ((i = body.find('{', i)) != std::string_view::npos) {
    std::size_t j = i + 1;
    while (j < body.size() && is_name_char(body[j])) ++j;
    if (j < body.size() && body[j] == '}' && j > i + 1) {
      fn(i, j + 1, std::string(body.substr(i + 1, j - i - 1)));
      i = j + 1;
    } else {
      ++i;
    }
  }
}

std::string substitute(const PromptTemplate& tmpl, std::string_view body, const RenderContext& ctx) {
  std::string out;
  out.reserve(body.size() * 2);
  std::size_t last = 0;
  scan_placeholders(body, [&](std::size_t b, std::size_t e, const std::string& name) {
    if (!tmpl.declares(name)) return;
    out.append(body.substr(last, b - last));
    last = e;
    auto it = ctx.find(name);
    if (tmpl.required.count(name)) {
      if (it == ctx.end()) {
        throw Error(ErrorKind::Render,
                    "template '" + tmpl.id + "' is missing required placeholder '" + name + "'");
      }
      out += it->second;
    } else if (it == ctx.end() || it->second.empty()) {
      out += kAbsent;
    } else {
      out += it->second;
    }
  });
  out.append(body.substr(last));
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Config, "cannot read prompt asset " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ScoreBounds PromptTemplate::scale() const {
  auto it = metadata.find("scale");
  if (it == metadata.end()) throw Error(ErrorKind::Config, "template '" + id + "' has no scale");
  auto dash = it->second.find('-');
  try {
    return {std::stod(it->second.substr(0, dash)), std::stod(it->second.substr(dash + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorKind::Config, "template '" + id + "' has a malformed scale: " + it->second);
  }
}

PromptTemplate parse_template(std::string_view text, std::string fallback_id) {
  PromptTemplate t;
  t.id = std::move(fallback_id);

  std::vector<std::string> lines;
  {
    std::stringstream ss{std::string(text)};
    std::string line;
    while (std::getline(ss, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
    }
  }

  std::size_t i = 0;
  for (; i < lines.size() && !lines[i].empty() && lines[i][0] == '#'; ++i) {
    std::string_view l = lines[i];
    l.remove_prefix(1);
    auto colon = l.find(':');
    if (colon == std::string_view::npos) continue;
    auto key = trim(l.substr(0, colon));
    auto value = trim(l.substr(colon + 1));
    if (key == "id") {
      t.id = value;
    } else if (key == "required") {
      t.required = split_names(value);
    } else if (key == "optional") {
      t.optional = split_names(value);
    } else {
      t.metadata[key] = value;
    }
  }
  if (t.id.empty()) throw Error(ErrorKind::Config, "prompt asset has no id");

  std::size_t delim = i;
  while (delim < lines.size() && lines[delim] != kUserDelimiter) ++delim;
  if (delim == lines.size()) {
    throw Error(ErrorKind::Config, "template '" + t.id + "' lacks the user delimiter line");
  }
  auto join = [&](std::size_t from, std::size_t to) {
    std::string out;
    for (std::size_t k = from; k < to; ++k) {
      if (k > from) out += '\n';
      out += lines[k];
    }
    return out;
  };
  t.system_body = join(i, delim);
  t.user_body = join(delim + 1, lines.size());

  std::set<std::string> used;
  for (const auto* body : {&t.system_body, &t.user_body}) {
    scan_placeholders(*body, [&](std::size_t, std::size_t, const std::string& name) {
      if (!t.declares(name)) {
        throw Error(ErrorKind::Config,
                    "template '" + t.id + "' uses undeclared placeholder '" + name + "'");
      }
      used.insert(name);
    });
  }
  for (const auto& r : t.required) {
    if (!used.count(r)) {
      throw Error(ErrorKind::Config,
                  "template '" + t.id + "' declares '" + r + "' as required but never uses it");
    }
  }
  return t;
}

RenderedPrompt render(const PromptTemplate& tmpl, const RenderContext& ctx) {
  return {substitute(tmpl, tmpl.system_body, ctx), substitute(tmpl, tmpl.user_body, ctx)};
}

// ---------------------------------------------------------------------------

PromptLibrary::PromptLibrary(std::map<std::string, PromptTemplate> templates)
    : templates_(std::move(templates)) {}

std::shared_ptr<const PromptLibrary> PromptLibrary::builtin() {
  static std::once_flag once;
  static std::shared_ptr<const PromptLibrary> lib;
  std::call_once(once, [] {
    std::map<std::string, PromptTemplate> m;
    for (const auto& [id, text] : builtin_assets()) m.emplace(id, parse_template(text, id));
    lib = std::make_shared<const PromptLibrary>(std::move(m));
  });
  return lib;
}

std::shared_ptr<const PromptLibrary> PromptLibrary::with_override_dir(
    const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> files;
  for (const auto& [id, _] : builtin_assets()) {
    auto p = dir / (id + ".txt");
    if (std::filesystem::exists(p)) files.emplace(id, p);
  }
  return with_overrides(files);
}

std::shared_ptr<const PromptLibrary> PromptLibrary::with_overrides(
    const std::map<std::string, std::filesystem::path>& files) {
  auto m = builtin()->all();
  for (const auto& [id, path] : files) {
    auto t = parse_template(read_file(path), id);
    t.id = id;
    m[id] = std::move(t);
  }
  return std::make_shared<const PromptLibrary>(std::move(m));
}

const PromptTemplate& PromptLibrary::get(const std::string& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw Error(ErrorKind::Config, "unknown prompt template '" + id + "'");
  return it->second;
}

const PromptTemplate& PromptLibrary::responding(bool grounded) const {
  return get(grounded ? "responding_grounded" : "responding");
}
const PromptTemplate& PromptLibrary::planner() const { return get("planner"); }
const PromptTemplate& PromptLibrary::refiner(AgentKind kind) const {
  return get(refiner_template_id(kind));
}
const PromptTemplate& PromptLibrary::finalizer() const { return get("finalizer"); }
const PromptTemplate& PromptLibrary::judge(MetricKind metric) const {
  return get(judge_template_id(metric));
}

std::string refiner_template_id(AgentKind kind) {
  if (!is_refiner(kind)) {
    throw Error(ErrorKind::Domain, std::string(display_name(kind)) + " has no refiner template");
  }
  return "refine_" + std::string(slug(kind));
}

std::string judge_template_id(MetricKind metric) { return "judge_" + std::string(slug(metric)); }

}  // namespace refinery::prompting
