// refinery: evaluation, chat, planner inspection, HTTP service and
// cassette verification.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <unistd.h>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "refinery/error.hpp"
#include "refinery/service/commands.hpp"
#include "refinery/service/config.hpp"
#include "refinery/service/server.hpp"

using namespace refinery;
using namespace refinery::service;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  return out;
}

Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent response refinement toolkit"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand.
  app.fallthrough();

  std::string config_path, backend, seed_text;
  std::size_t parallelism = 0;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--backend", backend, "Override the model backend")
      ->check(CLI::IsMember({"scripted", "replay", "record", "live"}));
  app.add_option("--seed", seed_text, "Seed for sampling and random planners");
  app.add_option("--parallelism", parallelism, "Conversations evaluated concurrently");

  DatasetSpec dataset;
  auto add_dataset = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--dataset", dataset.path, "Dataset file")->check(CLI::ExistingFile);
    if (required) opt->required();
    cmd->add_option("--source", dataset.source, "personachat, inscit, focus, prodigy, ubuntu or custom");
    cmd->add_option("--format", dataset.format, "jsonl, personachat-txt or focus-json");
  };

  EvalRequest eval;
  std::size_t sample = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Run strategies over a dataset and write traces plus a report");
  add_dataset(eval_cmd, true);
  eval_cmd->add_option("--strategy", eval.strategies, "Strategy name (repeatable)")->required();
  eval_cmd->add_option("--runs", eval.runs, "Independent runs per strategy")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--sample", sample, "Conversations to sample (0 = all)");
  eval_cmd->add_option("--run-id", eval.run_id, "Directory name under <output>/runs");
  std::string out_dir;
  eval_cmd->add_option("--out", out_dir, "Output directory (overrides config)");

  std::size_t inspect_n = 100;
  auto* inspect_cmd = app.add_subcommand("plan-inspect", "Distribution of planner-selected agents");
  add_dataset(inspect_cmd, true);
  inspect_cmd->add_option("-n,--conversations", inspect_n, "Conversations to inspect");

  std::string chat_strategy = "dynamic", persona_file, chat_fact;
  std::vector<std::string> chat_keywords;
  auto* chat_cmd = app.add_subcommand("chat", "Interactive terminal chat");
  chat_cmd->add_option("--strategy", chat_strategy, "Strategy name");
  chat_cmd->add_option("--persona", persona_file, "File with one persona sentence per line")->check(CLI::ExistingFile);
  chat_cmd->add_option("--fact", chat_fact, "Grounding fact");
  chat_cmd->add_option("--keyword", chat_keywords, "Conversation keyword (repeatable)");

  std::string host = "127.0.0.1", console_dir;
  int port = 0;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP session service under /v1");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port (default: $PORT or 8080)");
  serve_cmd->add_option("--with-console", console_dir, "Serve built console assets from this directory");

  std::string cassette_dir;
  auto* verify_cmd = app.add_subcommand("replay-verify",
                                        "Check cassettes; with --dataset, also replay an eval twice and compare reports");
  verify_cmd->add_option("--cassettes", cassette_dir, "Cassette directory (default: config cassette_dir)");
  add_dataset(verify_cmd, false);
  std::vector<std::string> verify_strategies{"dynamic"};
  verify_cmd->add_option("--strategy", verify_strategies, "Strategies for the replayed eval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    ServiceConfig config = config_path.empty() ? ServiceConfig{} : load_config(config_path);
    if (!backend.empty()) config.backend = backend;
    if (!seed_text.empty()) {
      try {
        config.seed = std::stoull(seed_text);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "--seed must be a non-negative integer");
      }
    }
    if (parallelism > 0) config.parallelism = parallelism;

    if (*eval_cmd) {
      if (!out_dir.empty()) config.output_dir = out_dir;
      if (sample > 0) dataset.sample = sample;
      eval.dataset = dataset;
      auto engine = build_engine(config);
      auto outcome = cli_eval(config, engine, eval, std::cerr);
      if (outcome.result) {
        std::cout << outcome.result->markdown;
        if (outcome.result->paths) std::cout << "\nreport: " << outcome.result->paths->json.string() << "\n";
      }
      if (!outcome.message.empty()) std::cerr << "error: " << outcome.message << "\n";
      return outcome.exit_code;
    }

    if (*inspect_cmd) {
      auto engine = build_engine(config);
      auto records = load_dataset(dataset, config.seed, std::cerr);
      std::cout << render_distribution(plan_distribution(records, *engine.agents, inspect_n));
      return kExitOk;
    }

    if (*chat_cmd) {
      auto engine = build_engine(config);
      auto strategy = make_strategy(chat_strategy, config, engine.judge);
      std::vector<std::string> persona = persona_file.empty() ? std::vector<std::string>{} : read_lines(persona_file);
      Conversation base("chat", persona, chat_fact.empty() ? std::nullopt : std::optional(chat_fact), chat_keywords, {});
      return run_chat(std::cin, std::cout, *engine.pipeline, strategy, base);
    }

    if (*serve_cmd) {
      if (port == 0) {
        const char* env = std::getenv("PORT");
        port = env ? std::atoi(env) : 8080;
      }
      ServerOptions opts;
      if (!console_dir.empty()) opts.console_dir = console_dir;
      Server server(config, build_engine(config), opts);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int bound = server.bind(host, port);
      std::cerr << fmt::format("listening on http://{}:{}/v1\n", host, bound);
      server.listen();
      g_server = nullptr;
      return kExitOk;
    }

    if (*verify_cmd) {
      const auto dir = cassette_dir.empty() ? config.cassette_dir : std::filesystem::path(cassette_dir);
      const auto check = verify_cassettes(dir);
      std::cout << fmt::format("{} cassettes, {} problems\n", check.cassettes, check.problems.size());
      for (const auto& p : check.problems) std::cout << "  " << p << "\n";
      if (!check.problems.empty()) return kExitFailure;
      if (dataset.path.empty()) return kExitOk;

      config.backend = "replay";
      config.cassette_dir = dir;
      std::string first;
      for (int pass = 0; pass < 2; ++pass) {
        auto scratch = std::filesystem::temp_directory_path() / fmt::format("refinery-verify-{}-{}", ::getpid(), pass);
        config.output_dir = scratch;
        EvalRequest req{dataset, verify_strategies, 1, "verify"};
        auto outcome = cli_eval(config, build_engine(config), req, std::cerr);
        std::filesystem::remove_all(scratch);
        if (outcome.exit_code != kExitOk) {
          std::cerr << "error: " << outcome.message << "\n";
          return outcome.exit_code;
        }
        const auto text = outcome.result->report.dump(2);
        if (pass == 0) first = text;
        else if (text != first) {
          std::cout << "replayed reports differ\n";
          return kExitFailure;
        }
      }
      std::cout << "replayed reports are byte-identical\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: [" << to_string(e.kind()) << "] " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
