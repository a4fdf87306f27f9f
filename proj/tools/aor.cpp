// aor: run, evaluate, report on and replay controller-rewriting runs.

#include "aor/loop/orchestrator.hpp"
#include "aor/render/image_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace aor;

namespace {

constexpr int kConfigExit = 4;
constexpr int kBackendExit = 3;

int cmd_run(loop::RunConfig config) {
  std::unique_ptr<loop::Rewriter> rewriter;
  if (config.agent == "llm") {
    rewriter = std::make_unique<loop::LlmRewriter>(loop::LlmConfig::from_env(), config.out / "llm");
  } else {
    rewriter = std::make_unique<loop::MockRewriter>(config.task);
  }
  const auto result = loop::run_loop(config, *rewriter, loop::make_env_factory(config));
  std::cout << result.report.table();
  std::cout << "run directory: " << config.out.string() << "\n";
  return loop::exit_code(result.status);
}

int cmd_eval(const fs::path& run, int episodes, int threads) {
  const auto ev = loop::eval_run(run, episodes, threads);
  for (const auto& e : ev.episodes) {
    std::printf("seed %llu  %-7s %5lld steps  final_phase %s\n", static_cast<unsigned long long>(e.seed),
                e.success ? "success" : "FAILED", static_cast<long long>(e.steps), e.final_phase.c_str());
  }
  std::printf("v%d: %d/%zu successes\n", ev.controller_version, ev.successes(), ev.episodes.size());
  return 0;
}

int cmd_report(const fs::path& run, bool as_json) {
  if (!fs::exists(run / "index.json")) throw ConfigError(run.string() + " is not a run directory");
  const auto rep = loop::write_report(run);
  if (as_json) std::cout << rep.to_json().dump(2) << "\n";
  else std::cout << rep.table();
  return 0;
}

// Re-drives the simulator with the recorded actions and writes every
// `every`-th observation (plus the last) as a top-down PPM.
int cmd_replay(const fs::path& run, int episode, fs::path out, int every) {
  if (!fs::exists(run / "index.json")) throw ConfigError(run.string() + " is not a run directory");
  const auto store = memory::RunStore::open(run);
  if (episode < 0 || episode >= store.episode_count()) {
    throw ConfigError("episode " + std::to_string(episode) + " not in run (it has " +
                      std::to_string(store.episode_count()) + ")");
  }
  const auto config = loop::RunConfig::from_json(store.config());
  const auto outcome_bytes = render::read_file(store.episode_dir(episode) / "outcome.json");
  const auto outcome = memory::outcome_from_json(nlohmann::json::parse(outcome_bytes.begin(), outcome_bytes.end()));
  const auto trace = store.load_trace(episode);
  if (out.empty()) out = run / "replay" / ("episode_" + std::to_string(episode));
  fs::create_directories(out);

  auto env = loop::make_env_factory(config)();
  auto dump = [&](const render::RgbdImage& img, std::int64_t step, const std::string& phase) {
    render::write_ppm(out / memory::frame_name(step, phase),
                      img.convention == render::ImageConvention::GlBottomUp ? render::flip_rows(img) : img);
  };
  loop::Observation obs = env->reset(outcome.seed);
  bool success = false;
  int written = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& row = trace[i];
    if (row.step % every == 0) {
      dump(obs.image, row.step, row.phase);
      ++written;
    }
    sim::Action a;
    a.delta = Vec3(row.action[0], row.action[1], row.action[2]);
    a.grip = row.action[3];
    const auto s = env->step(a);
    obs = s.obs;
    success = s.success;
    if (s.done) break;
  }
  if (!trace.empty()) {
    dump(obs.image, trace.back().step + 1, trace.back().phase);
    ++written;
  }
  std::printf("episode %d (seed %llu, controller v%d): %d frames in %s\n", episode,
              static_cast<unsigned long long>(outcome.seed), outcome.controller_version, written, out.c_str());
  std::printf("recorded %s, replay %s\n", outcome.success ? "success" : "failure", success ? "success" : "failure");
  return success == outcome.success ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iteratively rewrite a robot controller from episode evidence."};
  app.require_subcommand(1);

  loop::RunConfig config;
  std::string task = "lift";
  std::string out;
  auto* run = app.add_subcommand("run", "Run the rewrite loop until convergence or budget");
  run->add_option("--task", task, "lift | pickplace | stack")->check(CLI::IsMember({"lift", "pickplace", "stack"}));
  run->add_option("--sim", config.sim, "builtin | bridge:<command>")->capture_default_str();
  run->add_option("--agent", config.agent, "mock | llm")->check(CLI::IsMember({"mock", "llm"}))->capture_default_str();
  run->add_option("--iters", config.iterations, "Rewrite call budget")->capture_default_str();
  run->add_option("--seed", config.seed, "Base seed")->capture_default_str();
  run->add_option("--window", config.window, "Consecutive successes needed to converge")->capture_default_str();
  run->add_option("--steps", config.step_budget, "Episode step budget (0: task default)")->capture_default_str();
  run->add_option("--eval-episodes", config.eval_episodes, "Eval episodes (default: 4 lift, 20 otherwise)");
  run->add_option("--out", out, "Run directory (must not already hold a run)")->required();

  std::string run_dir;
  int episodes = -1;
  int threads = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate the newest controller of a run on fresh seeds");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--episodes", episodes, "Episode count (default: the run's setting)");
  eval->add_option("--threads", threads, "Worker threads (0: all cores)");

  bool as_json = false;
  auto* report = app.add_subcommand("report", "Rebuild and print the run report");
  report->add_option("--run", run_dir, "Run directory")->required();
  report->add_flag("--json", as_json, "Print report.json instead of the table");

  int episode = 0;
  int every = 1;
  std::string replay_out;
  auto* replay = app.add_subcommand("replay", "Replay a stored episode and dump its frames");
  replay->add_option("--run", run_dir, "Run directory")->required();
  replay->add_option("--episode", episode, "Episode index")->required();
  replay->add_option("--out", replay_out, "Frame directory (default: <run>/replay/episode_<K>)");
  replay->add_option("--every", every, "Dump every Nth step")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run) {
      config.task = sim::parse_task_id(task);
      config.out = out;
      return cmd_run(config);
    }
    if (*eval) return cmd_eval(run_dir, episodes, threads);
    if (*report) return cmd_report(run_dir, as_json);
    if (*replay) return cmd_replay(run_dir, episode, replay_out, every);
  } catch (const ConfigError& e) {
    std::cerr << "aor: " << e.what() << "\n";
    return kConfigExit;
  } catch (const loop::CredentialError& e) {
    std::cerr << "aor: " << e.what() << "\n";
    return kConfigExit;
  } catch (const loop::BackendError& e) {
    std::cerr << "aor: backend failure: " << e.what() << "\n";
    return kBackendExit;
  } catch (const std::exception& e) {
    std::cerr << "aor: " << e.what() << "\n";
    return kBackendExit;
  }
  return 0;
}
