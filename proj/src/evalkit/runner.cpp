#include "refinery/evalkit/runner.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "refinery/error.hpp"

namespace refinery::evalkit {

namespace {

struct Job {
  std::size_t strategy;
  int run;
  std::size_t record;
};

struct JobOutput {
  std::vector<TurnScore> scores;
  std::vector<TurnFailure> failures;
};

TurnMetrics all_missing() {
  TurnMetrics m;
  for (auto k : kAllMetrics) m[k] = std::nullopt;
  return m;
}

}  // namespace

bool EvalResult::has_transport_failure() const {
  return std::any_of(failures.begin(), failures.end(),
                     [](const auto& f) { return f.kind == ErrorKind::Transport; });
}

std::string trace_run_id(const EvalOptions& options, const std::string& label, int run) {
  if (options.strategies.size() == 1 && options.runs == 1) return options.run_id;
  return fmt::format("{}.{}.r{}", options.run_id, label, run);
}

EvalResult run_eval(const std::vector<DatasetRecord>& records, const pipeline::Pipeline& pipeline,
                    const Judge& judge, const EvalOptions& options) {
  if (options.strategies.empty()) throw Error(ErrorKind::Config, "no strategies to evaluate");
  if (options.runs < 1) throw Error(ErrorKind::Config, "runs must be >= 1");
  for (const auto& s : options.strategies) s.config.validate();

  std::vector<Job> jobs;
  for (std::size_t s = 0; s < options.strategies.size(); ++s)
    for (int r = 1; r <= options.runs; ++r)
      for (std::size_t i = 0; i < records.size(); ++i) jobs.push_back({s, r, i});
  std::vector<JobOutput> outputs(jobs.size());

  auto work = [&](const Job& job, JobOutput& out) {
    const auto& strat = options.strategies[job.strategy];
    const auto& conv = records[job.record].conversation;
    const auto outcomes = pipeline.run_conversation(conv, strat.config, options.policy);
    for (std::size_t k = 0; k < conv.turns().size(); ++k) {
      TurnScore ts;
      ts.key = {conv.id(), conv.turns()[k].index};
      ts.metrics = all_missing();
      auto fail = [&](ErrorKind kind, const std::string& msg) {
        out.failures.push_back({strat.label, job.run, ts.key, kind, msg});
      };
      // Generated-history runs stop at the first failure; later turns stay unscored.
      if (k >= outcomes.size()) {
        fail(ErrorKind::Validation, "not reached after an earlier turn failed");
        out.scores.push_back(std::move(ts));
        continue;
      }
      const auto& o = outcomes[k];
      const RefinementTrace* trace = o.result ? &o.result->trace : (o.partial_trace ? &*o.partial_trace : nullptr);
      if (options.output_root && trace)
        pipeline::write_trace(*options.output_root, trace_run_id(options, strat.label, job.run), conv.id(),
                              ts.key.turn, *trace);
      if (!o.result) {
        fail(o.error_kind.value_or(ErrorKind::Validation), o.error.value_or("turn failed"));
        out.scores.push_back(std::move(ts));
        continue;
      }
      ts.agent_calls = pipeline::count_agent_calls(o.result->trace, strat.config);
      if (conv.turns()[k].gold_response) {
        for (auto m : kAllMetrics) {
          try {
            const auto j = judge.judge(conv, ts.key.turn, o.result->final_response, m);
            ts.metrics[m] = j.value;
            if (!j.value) fail(ErrorKind::JudgeParse, fmt::format("{}: {}", slug(m), j.error));
          } catch (const Error& e) {
            fail(e.kind(), fmt::format("{}: {}", slug(m), e.what()));
          }
        }
      }
      out.scores.push_back(std::move(ts));
    }
  };

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        work(jobs[i], outputs[i]);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.parallelism, jobs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  EvalResult result;
  for (std::size_t s = 0; s < options.strategies.size(); ++s) {
    std::vector<RunScores> runs(options.runs);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].strategy != s) continue;
      auto& run = runs[jobs[i].run - 1];
      run.insert(run.end(), outputs[i].scores.begin(), outputs[i].scores.end());
    }
    result.aggregates.push_back(aggregate(options.strategies[s].label, runs));
  }
  for (auto& o : outputs) result.failures.insert(result.failures.end(), o.failures.begin(), o.failures.end());

  result.stats = compute_stats(result.aggregates);
  auto meta = options.metadata;
  meta["runs"] = options.runs;
  meta["policy"] = options.policy == pipeline::TurnPolicy::UseGoldHistory ? "gold" : "generated";
  meta["conversations"] = records.size();
  meta["strategies"] = nlohmann::json::array();
  for (const auto& s : options.strategies)
    meta["strategies"].push_back({{"label", s.label}, {"name", pipeline::strategy_name(s.config.strategy)}});
  meta["failed_cells"] = result.failures.size();
  result.report = report_to_json(result.aggregates, result.stats, meta);
  result.markdown = report_markdown(result.aggregates, result.stats, options.report_overall);
  if (options.output_root)
    result.paths = write_report(*options.output_root, options.run_id, result.report, result.markdown);
  return result;
}

}  // namespace refinery::evalkit
