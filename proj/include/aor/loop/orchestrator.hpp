#pragma once

#include "aor/loop/env.hpp"
#include "aor/loop/rewriter.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace aor::loop {

namespace fs = std::filesystem;

/// Eval seeds start this far above the base seed so they never overlap the
/// seeds seen during the rewrite loop.
inline constexpr std::uint64_t kEvalSeedOffset = 10000;
inline constexpr int kDefaultIterations = 20;
inline constexpr int kDefaultWindow = 3;
inline constexpr int kParseFailureAbort = 3;
/// Attempts per rewrite call when the backend is unreachable (one try plus two retries).
inline constexpr int kRewriteAttempts = 3;

int default_eval_episodes(sim::TaskId task);

struct RunConfig {
  sim::TaskId task = sim::TaskId::Lift;
  /// "builtin" or "bridge:<command>".
  std::string sim = "builtin";
  /// "mock" or "llm".
  std::string agent = "mock";
  int iterations = kDefaultIterations;
  /// 0 means the task's own budget.
  std::int64_t step_budget = 0;
  std::uint64_t seed = 42;
  int window = kDefaultWindow;
  /// Negative means the task default.
  int eval_episodes = -1;
  fs::path out;

  /// Throws ConfigError.
  void validate() const;
  int resolved_eval_episodes() const { return eval_episodes < 0 ? default_eval_episodes(task) : eval_episodes; }
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

enum class RunStatus { Converged, BudgetExhausted, BackendFailure, CredentialFailure };
std::string_view to_string(RunStatus s);
/// 0 converged, 2 budget exhausted, 3 backend failure, 4 configuration/credential error.
int exit_code(RunStatus s);

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

/// Builtin simulator or a bridge child process, per `config.sim`.
EnvFactory make_env_factory(const RunConfig& config);

struct CallRecord {
  int call = 0;
  /// Index of the failed episode that prompted the call.
  int after_episode = 0;
  /// installed | parse_failure | invalid
  std::string status;
  std::optional<int> version;
  std::string summary;
  std::vector<std::string> tags;
  std::string error;
};

struct EvalEpisode {
  int index = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::int64_t steps = 0;
  std::string final_phase;
  std::string termination;
  /// Largest displacement of any non-primary object during the episode.
  double max_secondary_displacement = 0.0;
};

struct EvalResult {
  int controller_version = 0;
  std::vector<EvalEpisode> episodes;
  int successes() const;
};

/// Runs `count` episodes of `program` on seeds base + kEvalSeedOffset + i, in
/// parallel on independent environments. Results are in seed order.
EvalResult evaluate(const ctl::ControllerProgram& program, const EnvFactory& make_env, std::uint64_t base_seed,
                    int count, std::int64_t step_budget = 0, int threads = 0);

struct ReportRow {
  int call = 0;
  std::optional<int> version;
  std::string change;
  std::vector<std::string> tags;
  /// What happened on the next episode under the controller active after the call.
  std::string result;
};

struct RunReport {
  std::string task;
  std::string status;
  std::string message;
  int rewrite_calls = 0;
  int final_version = 0;
  int episodes = 0;
  std::vector<ReportRow> rows;
  std::optional<EvalResult> eval;

  nlohmann::json to_json() const;
  std::string table() const;
};

struct RunResult {
  RunStatus status = RunStatus::BudgetExhausted;
  std::string message;
  RunReport report;
};

/// The slow loop: episode, then on failure a rewrite, until W consecutive
/// successes or the rewrite budget runs out; then evaluation and report.json.
/// After a failure the same seed is replayed; after a success the seed advances.
RunResult run_loop(const RunConfig& config, Rewriter& rewriter, const EnvFactory& make_env);

/// Evaluates the run's newest controller afresh and rewrites eval.json and report.json.
EvalResult eval_run(const fs::path& run_dir, int episodes, int threads = 0);

/// Rebuilds the report from the run directory and writes report.json.
RunReport write_report(const fs::path& run_dir);

/// The newest installed controller of a stored run, validated.
ctl::ControllerProgram load_active_controller(const fs::path& run_dir);

}  // namespace aor::loop
