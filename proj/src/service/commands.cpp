#include "refinery/service/commands.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "refinery/llm/cassette.hpp"
#include "refinery/tagparse/tagparse.hpp"

namespace refinery::service {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Transport:
    case ErrorKind::CacheMiss:
    case ErrorKind::EmptyCompletion:
    case ErrorKind::ScriptedMiss: return kExitGateway;
    case ErrorKind::Config:
    case ErrorKind::Ingest:
    case ErrorKind::Validation: return kExitConfig;
    default: return kExitFailure;
  }
}

std::vector<evalkit::DatasetRecord> load_dataset(const DatasetSpec& spec, std::uint64_t seed, std::ostream& log) {
  auto result = evalkit::ingest(spec.path, evalkit::source_from_string(spec.source),
                                evalkit::format_from_string(spec.format));
  for (const auto& w : result.warnings) log << "warning: " << w << "\n";
  if (spec.sample) return evalkit::sample_records(std::move(result.records), *spec.sample, seed);
  return std::move(result.records);
}

EvalOutcome cli_eval(const ServiceConfig& config, const Engine& engine, const EvalRequest& request,
                     std::ostream& log) {
  EvalOutcome out;
  evalkit::EvalOptions opts;
  std::vector<evalkit::DatasetRecord> records;
  try {
    if (request.strategies.empty()) throw Error(ErrorKind::Config, "no strategy given");
    for (const auto& name : request.strategies)
      opts.strategies.push_back({name, make_strategy(name, config, engine.judge)});
    records = load_dataset(request.dataset, config.seed, log);
  } catch (const Error& e) {
    out.exit_code = kExitConfig;
    out.message = e.what();
    return out;
  }
  opts.runs = request.runs;
  opts.policy = config.policy;
  opts.parallelism = config.parallelism;
  opts.output_root = config.output_dir;
  opts.run_id = request.run_id;
  opts.report_overall = config.report_overall;
  opts.metadata = {
      {"backend", config.backend},
      {"dataset", request.dataset.path.filename().string()},
      {"source", request.dataset.source},
      {"sample", request.dataset.sample ? nlohmann::json(*request.dataset.sample) : nlohmann::json(nullptr)},
      {"seed", config.seed},
      {"judge", {{"preset", config.judge_preset},
                 {"model_id", config.judge.model_id},
                 {"sample_count", config.judge.sample_count},
                 {"temperature", config.judge.temperature}}},
      {"report_overall", config.report_overall},
  };

  try {
    out.result = evalkit::run_eval(records, *engine.pipeline, *engine.judge, opts);
  } catch (const Error& e) {
    out.exit_code = exit_code_for(e.kind());
    out.message = e.what();
    return out;
  }

  const auto& res = *out.result;
  for (const auto& f : res.failures)
    log << fmt::format("warning: {} run {} {} turn {}: [{}] {}\n", f.label, f.run, f.key.conversation_id,
                       f.key.turn, to_string(f.kind), f.message);
  const bool gateway_failed = std::any_of(res.failures.begin(), res.failures.end(),
                                          [](const auto& f) { return exit_code_for(f.kind) == kExitGateway; });
  if (gateway_failed) {
    out.exit_code = kExitGateway;
    out.message = "model calls failed; partial report written";
  }
  return out;
}

PlanDistribution plan_distribution(const std::vector<evalkit::DatasetRecord>& records, const agents::Agents& agents,
                                   std::size_t conversations) {
  PlanDistribution d;
  for (auto k : aspect_refiners()) d.counts[k] = 0;
  std::size_t total_len = 0;
  for (std::size_t i = 0; i < records.size() && i < conversations; ++i) {
    const auto& conv = records[i].conversation;
    for (std::size_t t = 1; t <= conv.turns().size(); ++t) {
      // Gold history, final turn open.
      auto view = conv.prefix(t - 1);
      view = append_turn(view, conv.turns()[t - 1].query);
      ++d.turns;
      const auto initial = agents.respond(view).value;
      const auto decision = agents.plan(view, initial).value;
      if (!decision) {
        ++d.unparsed;
        continue;
      }
      const auto& seq = decision->plan.sequence();
      for (auto k : seq) ++d.counts[k];
      ++d.length_histogram[seq.size()];
      total_len += seq.size();
    }
  }
  const int parsed = d.turns - d.unparsed;
  for (const auto& [k, c] : d.counts) d.frequency[k] = parsed > 0 ? static_cast<double>(c) / parsed : 0.0;
  d.mean_length = parsed > 0 ? static_cast<double>(total_len) / parsed : 0.0;
  return d;
}

std::string render_distribution(const PlanDistribution& d) {
  std::string s = "| Agent | Selected | Frequency |\n|---|---|---|\n";
  for (const auto& [k, c] : d.counts)
    s += fmt::format("| {} | {} | {:.3f} |\n", display_name(k), c, d.frequency.at(k));
  s += fmt::format("\nTurns: {}  Unparsed: {}  Mean sequence length: {:.3f}\n", d.turns, d.unparsed, d.mean_length);
  for (const auto& [len, n] : d.length_histogram) s += fmt::format("Length {}: {}\n", len, n);
  return s;
}

std::string describe_trace(const RefinementTrace& trace) {
  std::string s = fmt::format("strategy: {}\n", trace.strategy);
  if (trace.plan) s += fmt::format("plan: {}{}\n", trace.plan->order_text(), trace.planner_fallback_used ? " (fallback)" : "");
  s += fmt::format("initial: {}\n", trace.initial_response);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& st = trace.steps[i];
    s += fmt::format("step {}: {} [{}] {}\n", i + 1, display_name(st.agent), to_string(st.verification_verdict),
                     st.refined_response);
  }
  s += fmt::format("final: {}\nagent calls: {}\n", trace.final_response, trace.agent_calls);
  return s;
}

int run_chat(std::istream& in, std::ostream& out, const pipeline::Pipeline& pipeline,
             const pipeline::StrategyConfig& strategy, const Conversation& seed_conversation) {
  Conversation conv = seed_conversation;
  std::optional<RefinementTrace> last;
  std::string line;
  while (out << "> " << std::flush, std::getline(in, line)) {
    if (line == "/quit") return kExitOk;
    if (line == "/trace") {
      out << (last ? describe_trace(*last) : std::string("no turn yet\n"));
      continue;
    }
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto open = append_turn(conv, line);
      auto res = pipeline.run_turn(open, strategy);
      conv = open.with_last_response(res.final_response);
      last = res.trace;
      out << res.final_response << "\n";
    } catch (const pipeline::TurnError& e) {
      last = e.partial_trace();
      out << "error: [" << to_string(e.kind()) << "] " << e.what() << "\n";
    } catch (const Error& e) {
      out << "error: [" << to_string(e.kind()) << "] " << e.what() << "\n";
    }
  }
  out << "\n";
  return kExitOk;
}

CassetteCheck verify_cassettes(const std::filesystem::path& dir) {
  CassetteCheck check;
  if (!std::filesystem::is_directory(dir)) {
    check.problems.push_back(dir.string() + " is not a directory");
    return check;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    ++check.cassettes;
    const auto name = f.filename().string();
    try {
      std::ifstream in(f);
      const auto j = nlohmann::json::parse(in);
      const auto request = llm::request_from_json(j.at("request"));
      const auto expected = llm::cassette_key(request);
      if (j.value("key", "") != expected) check.problems.push_back(name + ": key does not match its request");
      if (f.stem().string() != expected) check.problems.push_back(name + ": file name does not match its key");
      if (!j.contains("completions") || !j["completions"].is_array() || j["completions"].empty())
        check.problems.push_back(name + ": no completions");
      else
        for (const auto& c : j["completions"]) llm::completion_from_json(c);
    } catch (const std::exception& e) {
      check.problems.push_back(name + ": " + e.what());
    }
  }
  return check;
}

}  // namespace refinery::service
