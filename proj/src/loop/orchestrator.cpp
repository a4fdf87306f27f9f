#include "aor/loop/orchestrator.hpp"

#include "aor/loop/bridge.hpp"
#include "aor/loop/controllers.hpp"
#include "aor/loop/episode.hpp"
#include "aor/render/image_io.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

namespace aor::loop {

using nlohmann::json;

int default_eval_episodes(sim::TaskId task) { return task == sim::TaskId::Lift ? 4 : 20; }

void RunConfig::validate() const {
  if (sim != "builtin" && (sim.rfind("bridge:", 0) != 0 || sim.size() == 7)) {
    throw ConfigError("--sim must be 'builtin' or 'bridge:<command>', got '" + sim + "'");
  }
  if (agent != "mock" && agent != "llm") throw ConfigError("--agent must be 'mock' or 'llm', got '" + agent + "'");
  if (iterations < 0) throw ConfigError("iteration budget must be non-negative");
  if (step_budget < 0) throw ConfigError("step budget must be non-negative");
  if (window < 1) throw ConfigError("convergence window must be at least 1");
  if (eval_episodes < -1) throw ConfigError("eval episode count must be non-negative");
  if (out.empty()) throw ConfigError("an output directory is required");
}

json RunConfig::to_json() const {
  return {{"task", std::string(sim::to_string(task))},
          {"sim", sim},
          {"agent", agent},
          {"iterations", iterations},
          {"step_budget", step_budget},
          {"seed", seed},
          {"window", window},
          {"eval_episodes", eval_episodes}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.task = sim::parse_task_id(j.at("task").get<std::string>());
    c.sim = j.value("sim", c.sim);
    c.agent = j.value("agent", c.agent);
    c.iterations = j.value("iterations", c.iterations);
    c.step_budget = j.value("step_budget", c.step_budget);
    c.seed = j.value("seed", c.seed);
    c.window = j.value("window", c.window);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run config: ") + e.what());
  }
  return c;
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::BudgetExhausted: return "budget_exhausted";
    case RunStatus::BackendFailure: return "backend_failure";
    case RunStatus::CredentialFailure: return "credential_failure";
  }
  return "unknown";
}

int exit_code(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return 0;
    case RunStatus::BudgetExhausted: return 2;
    case RunStatus::BackendFailure: return 3;
    case RunStatus::CredentialFailure: return 4;
  }
  return 3;
}

EnvFactory make_env_factory(const RunConfig& config) {
  const sim::TaskId task = config.task;
  if (config.sim == "builtin") {
    return [task] { return std::unique_ptr<Environment>(std::make_unique<BuiltinEnv>(task)); };
  }
  const std::string command = config.sim.substr(std::string_view("bridge:").size());
  return [task, command] { return std::unique_ptr<Environment>(std::make_unique<BridgeEnv>(command, task)); };
}

int EvalResult::successes() const {
  return static_cast<int>(std::count_if(episodes.begin(), episodes.end(), [](const auto& e) { return e.success; }));
}

namespace {

EvalEpisode eval_episode(const EpisodeResult& r, int index) {
  EvalEpisode e;
  e.index = index;
  e.seed = r.outcome.seed;
  e.success = r.outcome.success;
  e.steps = r.outcome.steps;
  e.final_phase = r.outcome.final_phase;
  e.termination = r.outcome.termination;
  for (const auto& row : r.trace) e.max_secondary_displacement = std::max(e.max_secondary_displacement, row.secondary_displacement);
  return e;
}

json to_json(const EvalEpisode& e) {
  return {{"index", e.index},
          {"seed", e.seed},
          {"success", e.success},
          {"steps", e.steps},
          {"final_phase", e.final_phase},
          {"termination", e.termination},
          {"max_secondary_displacement", e.max_secondary_displacement}};
}

EvalEpisode eval_episode_from_json(const json& j) {
  EvalEpisode e;
  e.index = j.at("index").get<int>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.success = j.at("success").get<bool>();
  e.steps = j.at("steps").get<std::int64_t>();
  e.final_phase = j.at("final_phase").get<std::string>();
  e.termination = j.at("termination").get<std::string>();
  e.max_secondary_displacement = j.at("max_secondary_displacement").get<double>();
  return e;
}

json to_json(const EvalResult& r) {
  json eps = json::array();
  for (const auto& e : r.episodes) eps.push_back(to_json(e));
  return {{"controller_version", r.controller_version},
          {"successes", r.successes()},
          {"count", r.episodes.size()},
          {"episodes", eps}};
}

EvalResult eval_from_json(const json& j) {
  EvalResult r;
  r.controller_version = j.at("controller_version").get<int>();
  for (const auto& e : j.at("episodes")) r.episodes.push_back(eval_episode_from_json(e));
  return r;
}

json to_json(const CallRecord& c) {
  json j{{"call", c.call},         {"after_episode", c.after_episode}, {"status", c.status},
         {"summary", c.summary},   {"tags", c.tags},                   {"error", c.error}};
  j["version"] = c.version ? json(*c.version) : json(nullptr);
  return j;
}

CallRecord call_from_json(const json& j) {
  CallRecord c;
  c.call = j.at("call").get<int>();
  c.after_episode = j.at("after_episode").get<int>();
  c.status = j.at("status").get<std::string>();
  if (j.contains("version") && !j["version"].is_null()) c.version = j["version"].get<int>();
  c.summary = j.value("summary", std::string());
  c.tags = j.value("tags", std::vector<std::string>{});
  c.error = j.value("error", std::string());
  return c;
}

std::string episode_result(const memory::EpisodeOutcome& e) {
  if (e.success) return "success (v" + std::to_string(e.controller_version) + ", " + std::to_string(e.steps) + " steps)";
  return "failed in " + e.final_phase + " (v" + std::to_string(e.controller_version) + ", " + e.termination + ")";
}

std::string first_line(const std::string& s) {
  const auto nl = s.find('\n');
  return nl == std::string::npos ? s : s.substr(0, nl);
}

}  // namespace

EvalResult evaluate(const ctl::ControllerProgram& program, const EnvFactory& make_env, std::uint64_t base_seed,
                    int count, std::int64_t step_budget, int threads) {
  EvalResult out;
  out.controller_version = program.version;
  if (count <= 0) return out;
  std::vector<std::optional<EvalEpisode>> slots(static_cast<std::size_t>(count));
  std::vector<std::string> errors(static_cast<std::size_t>(count));
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, count);

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      const auto slot = static_cast<std::size_t>(i);
      try {
        auto env = make_env();
        EpisodeOptions opts;
        opts.episode_index = i;
        opts.seed = base_seed + kEvalSeedOffset + static_cast<std::uint64_t>(i);
        opts.step_budget = step_budget;
        slots[slot] = eval_episode(run_episode(*env, program, opts), i);
      } catch (const std::exception& e) {
        errors[slot] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) throw BackendError("eval episode " + std::to_string(i) + ": " + errors[i]);
    out.episodes.push_back(*slots[i]);
  }
  return out;
}

json RunReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"call", r.call},
                      {"version", r.version ? json(*r.version) : json(nullptr)},
                      {"change", r.change},
                      {"tags", r.tags},
                      {"result", r.result}});
  }
  json j{{"task", task},
         {"status", status},
         {"message", message},
         {"rewrite_calls", rewrite_calls},
         {"final_version", final_version},
         {"episodes", episodes},
         {"rows", rows_j}};
  j["eval"] = eval ? loop::to_json(*eval) : json("n/a");
  return j;
}

std::string RunReport::table() const {
  std::ostringstream out;
  out << "task " << task << " | " << status << " | " << rewrite_calls << " rewrite call"
      << (rewrite_calls == 1 ? "" : "s") << " | " << episodes << " episodes | final controller v" << final_version
      << "\n";
  if (!message.empty()) out << message << "\n";
  out << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-5s %-8s %-28s ", "call", "version", "tags");
  out << buf << "change -> next episode\n";
  for (const auto& r : rows) {
    std::string tags;
    for (const auto& t : r.tags) tags += (tags.empty() ? "" : ",") + t;
    const std::string ver = r.version ? "v" + std::to_string(*r.version) : "-";
    std::snprintf(buf, sizeof buf, "%-5d %-8s %-28s ", r.call, ver.c_str(), tags.c_str());
    out << buf << r.change << " -> " << r.result << "\n";
  }
  if (eval) {
    out << "\neval v" << eval->controller_version << ": " << eval->successes() << "/" << eval->episodes.size()
        << " successes\n";
  } else {
    out << "\neval: n/a\n";
  }
  return out.str();
}

RunResult run_loop(const RunConfig& config, Rewriter& rewriter, const EnvFactory& make_env) {
  config.validate();
  if (fs::exists(config.out / "index.json")) {
    throw ConfigError("output directory " + config.out.string() + " already holds a run");
  }
  auto store = memory::RunStore::open(config.out, config.to_json());

  auto initial = ctl::validate(default_controller(config.task), ctl::Provenance::Initial);
  if (const auto* err = std::get_if<ctl::ValidationError>(&initial)) {
    throw ConfigError("initial controller is invalid: " + err->message);
  }
  ctl::ControllerProgram active = std::get<ctl::ControllerProgram>(std::move(initial));
  active.version = 0;
  store.record_controller({0, std::string(ctl::to_string(active.provenance)), "initial controller", active.source});

  std::vector<CallRecord> calls;
  RunStatus status = RunStatus::BudgetExhausted;
  std::string message;
  std::uint64_t seed = config.seed;
  int streak = 0;
  int parse_streak = 0;
  std::string rejection;
  bool need_episode = true;
  std::unique_ptr<Environment> env;

  try {
    env = make_env();
    for (;;) {
      if (need_episode) {
        EpisodeOptions opts;
        opts.episode_index = store.episode_count();
        opts.seed = seed;
        opts.step_budget = config.step_budget;
        auto r = run_episode(*env, active, opts);
        const auto stored = store.record_episode(std::move(r.outcome), r.trace, r.keyframes);
        if (stored.success) {
          ++seed;
          rejection.clear();
          if (++streak >= config.window) {
            status = RunStatus::Converged;
            message = "converged: " + std::to_string(streak) + " consecutive successes";
            break;
          }
          continue;
        }
        streak = 0;
      }
      need_episode = true;
      if (static_cast<int>(calls.size()) >= config.iterations) {
        status = RunStatus::BudgetExhausted;
        message = "rewrite budget of " + std::to_string(config.iterations) + " calls exhausted";
        break;
      }

      const auto history = memory::load_history(config.out);
      PromptBundle prompt = build_prompt(history, config.out, active.source, config.task);
      if (!rejection.empty()) prompt.digest += "\nYour previous reply was rejected: " + rejection + "\n";

      CallRecord rec;
      rec.call = static_cast<int>(calls.size()) + 1;
      rec.after_episode = store.episode_count() - 1;
      std::string reply;
      for (int attempt = 1;; ++attempt) {
        try {
          reply = rewriter.rewrite(prompt, history, rec.call);
          break;
        } catch (const RewriterError& e) {
          if (attempt >= kRewriteAttempts) throw;
        }
      }

      try {
        auto parsed = parse_rewrite(reply);
        parse_streak = 0;
        rec.tags = parsed.diagnosis.tags;
        rec.summary = parsed.diagnosis.strategy;
        auto v = ctl::validate(parsed.source, rewriter.provenance());
        if (const auto* err = std::get_if<ctl::ValidationError>(&v)) {
          // Keep running the current controller; the rejected source mints no version.
          rec.status = "invalid";
          rec.error = std::string(ctl::to_string(err->stage)) + ": " + err->message;
          rejection = "the controller failed validation at the " + rec.error;
        } else {
          auto program = std::get<ctl::ControllerProgram>(std::move(v));
          program.version = active.version + 1;
          store.record_controller({program.version, std::string(ctl::to_string(program.provenance)),
                                   first_line(parsed.diagnosis.strategy), program.source});
          parsed.diagnosis.produced_version = program.version;
          store.record_diagnosis(parsed.diagnosis);
          active = std::move(program);
          rec.status = "installed";
          rec.version = active.version;
          rejection.clear();
        }
      } catch (const RewriteParseError& e) {
        rec.status = "parse_failure";
        rec.error = e.what();
        rejection = std::string("it could not be parsed (") + e.what() + ")";
        // Ask again straight away; the episode evidence has not changed.
        need_episode = false;
        if (++parse_streak >= kParseFailureAbort) {
          calls.push_back(std::move(rec));
          status = RunStatus::BackendFailure;
          message = std::to_string(kParseFailureAbort) + " consecutive unparseable rewriter replies";
          break;
        }
      }
      calls.push_back(std::move(rec));
    }
  } catch (const CredentialError& e) {
    status = RunStatus::CredentialFailure;
    message = e.what();
  } catch (const RewriterError& e) {
    status = RunStatus::BackendFailure;
    message = std::string("rewriter unavailable after ") + std::to_string(kRewriteAttempts) + " attempts: " + e.what();
  } catch (const BackendError& e) {
    status = RunStatus::BackendFailure;
    message = std::string("simulator backend failed: ") + e.what();
  }
  env.reset();

  json calls_j = json::array();
  for (const auto& c : calls) calls_j.push_back(to_json(c));
  store.write_json("loop.json", {{"status", std::string(to_string(status))},
                                 {"message", message},
                                 {"rewrite_calls", calls.size()},
                                 {"active_version", active.version},
                                 {"calls", calls_j}});

  if (status == RunStatus::Converged || status == RunStatus::BudgetExhausted) {
    try {
      const auto ev = evaluate(active, make_env, config.seed, config.resolved_eval_episodes(), config.step_budget);
      store.write_json("eval.json", to_json(ev));
    } catch (const BackendError& e) {
      status = RunStatus::BackendFailure;
      message = std::string("evaluation failed: ") + e.what();
      json loop_j = json::parse(render::read_file(config.out / "loop.json"));
      loop_j["status"] = std::string(to_string(status));
      loop_j["message"] = message;
      store.write_json("loop.json", loop_j);
    }
  }
  RunResult result;
  result.status = status;
  result.message = message;
  result.report = write_report(config.out);
  return result;
}

RunReport write_report(const fs::path& run_dir) {
  const auto history = memory::load_history(run_dir);
  auto read = [&](const char* name) -> std::optional<json> {
    const fs::path p = run_dir / name;
    if (!fs::exists(p)) return std::nullopt;
    const auto bytes = render::read_file(p);
    json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) throw memory::StorageError(p.string() + " is not valid JSON");
    return j;
  };

  RunReport rep;
  auto store = memory::RunStore::open(run_dir);
  rep.task = RunConfig::from_json(store.config()).to_json()["task"].get<std::string>();
  rep.episodes = static_cast<int>(history.episodes.size());
  rep.final_version = history.controllers.empty() ? 0 : history.controllers.back().version;

  if (const auto loop_j = read("loop.json")) {
    rep.status = loop_j->value("status", std::string());
    rep.message = loop_j->value("message", std::string());
    for (const auto& cj : loop_j->at("calls")) {
      const CallRecord c = call_from_json(cj);
      ReportRow row;
      row.call = c.call;
      row.version = c.version;
      row.tags = c.tags;
      if (c.status == "installed") row.change = c.summary;
      else row.change = c.status + ": " + c.error;
      const auto next = std::find_if(history.episodes.begin(), history.episodes.end(),
                                     [&](const auto& e) { return e.episode_index == c.after_episode + 1; });
      row.result = next == history.episodes.end() ? "not run" : episode_result(*next);
      rep.rows.push_back(std::move(row));
    }
    rep.rewrite_calls = static_cast<int>(rep.rows.size());
  } else {
    rep.status = "incomplete";
  }
  if (const auto eval_j = read("eval.json")) rep.eval = eval_from_json(*eval_j);
  store.write_json("report.json", rep.to_json());
  return rep;
}

ctl::ControllerProgram load_active_controller(const fs::path& run_dir) {
  const auto history = memory::load_history(run_dir);
  if (history.controllers.empty()) throw memory::StorageError("run has no stored controller");
  const auto& entry = history.controllers.back();
  ctl::Provenance prov = ctl::Provenance::Initial;
  try {
    prov = ctl::parse_provenance(entry.provenance);
  } catch (const ConfigError&) {
  }
  auto v = ctl::validate(entry.source, prov);
  if (const auto* err = std::get_if<ctl::ValidationError>(&v)) {
    throw memory::StorageError("stored controller v" + std::to_string(entry.version) + " no longer validates: " +
                               err->message);
  }
  auto program = std::get<ctl::ControllerProgram>(std::move(v));
  program.version = entry.version;
  return program;
}

EvalResult eval_run(const fs::path& run_dir, int episodes, int threads) {
  if (!fs::exists(run_dir / "index.json")) throw ConfigError(run_dir.string() + " is not a run directory");
  auto store = memory::RunStore::open(run_dir);
  const RunConfig config = RunConfig::from_json(store.config());
  const auto program = load_active_controller(run_dir);
  const int n = episodes < 0 ? config.resolved_eval_episodes() : episodes;
  const auto ev = evaluate(program, make_env_factory(config), config.seed, n, config.step_budget, threads);
  store.write_json("eval.json", to_json(ev));
  write_report(run_dir);
  return ev;
}

}  // namespace aor::loop
