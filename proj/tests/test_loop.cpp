#include "aor/loop/controllers.hpp"
#include "aor/loop/episode.hpp"
#include "aor/loop/orchestrator.hpp"
#include "aor/render/image_io.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <set>

using namespace aor;
using namespace aor::loop;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("aor_loop_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  const auto bytes = render::read_file(p);
  return nlohmann::json::parse(bytes.begin(), bytes.end());
}

std::string read_text(const fs::path& p) {
  const auto bytes = render::read_file(p);
  return {bytes.begin(), bytes.end()};
}

/// Rewriter driven by a callback; records what it was shown.
class FakeRewriter final : public Rewriter {
 public:
  using Fn = std::function<std::string(int call, int invocation)>;
  explicit FakeRewriter(Fn fn) : fn_(std::move(fn)) {}
  std::string rewrite(const PromptBundle& prompt, const memory::History&, int call) override {
    ++invocations;
    digests.push_back(prompt.digest);
    calls.push_back(call);
    return fn_(call, invocations);
  }
  ctl::Provenance provenance() const override { return ctl::Provenance::Llm; }

  int invocations = 0;
  std::vector<std::string> digests;
  std::vector<int> calls;

 private:
  Fn fn_;
};

/// Short lift episodes: the default controller fails them quickly.
RunConfig quick_config(const std::string& tag) {
  RunConfig c;
  c.task = sim::TaskId::Lift;
  c.step_budget = 30;
  c.iterations = 4;
  c.eval_episodes = 1;
  c.out = fresh_dir(tag);
  return c;
}

EnvFactory builtin(sim::TaskId task) {
  return [task] { return std::make_unique<BuiltinEnv>(task); };
}

std::string valid_reply() {
  const auto script = rewrite_script(sim::TaskId::Lift);
  return format_response(script[0].diagnosis, script[0].source);
}

bool has_tag(const std::vector<std::string>& tags, const std::string& t) {
  return std::find(tags.begin(), tags.end(), t) != tags.end();
}

}  // namespace

// ---- scripted rewrites ----

TEST(Script, EveryEntryParsesAndValidates) {
  for (auto task : {sim::TaskId::Lift, sim::TaskId::PickPlace, sim::TaskId::Stack}) {
    const auto script = rewrite_script(task);
    ASSERT_FALSE(script.empty());
    for (std::size_t i = 0; i < script.size(); ++i) {
      const auto parsed = parse_rewrite(format_response(script[i].diagnosis, script[i].source));
      EXPECT_TRUE(parsed.diagnosis_found);
      EXPECT_EQ(parsed.source, script[i].source);
      EXPECT_EQ(parsed.diagnosis.tags, script[i].diagnosis.tags);
      EXPECT_EQ(parsed.diagnosis.strategy, script[i].diagnosis.strategy);
      EXPECT_DOUBLE_EQ(parsed.diagnosis.confidence, script[i].diagnosis.confidence);
      const auto v = ctl::validate(parsed.source, ctl::Provenance::MockRewriter);
      const auto* err = std::get_if<ctl::ValidationError>(&v);
      EXPECT_EQ(err, nullptr) << "entry " << i << ": " << (err ? err->message : "");
    }
  }
  EXPECT_TRUE(std::holds_alternative<ctl::ControllerProgram>(ctl::validate(default_controller(sim::TaskId::Stack))));
}

TEST(Script, LiftFirstDiagnosisIsVisionBias) {
  memory::History h;
  memory::EpisodeOutcome e;
  e.final_phase = "reach";
  e.steps = 500;
  h.episodes.push_back(e);
  const auto parsed = parse_rewrite(mock_rewriter(sim::TaskId::Lift, 1, h));
  EXPECT_TRUE(has_tag(parsed.diagnosis.tags, "vision_bias"));
  EXPECT_TRUE(has_tag(parsed.diagnosis.tags, "misalignment"));
  EXPECT_DOUBLE_EQ(parsed.diagnosis.confidence, 0.72);
}

TEST(Script, PickPlaceFirstRewriteSegmentsRed) {
  const auto parsed = parse_rewrite(mock_rewriter(sim::TaskId::PickPlace, 1, {}));
  const auto v = ctl::validate(parsed.source);
  ASSERT_TRUE(std::holds_alternative<ctl::ControllerProgram>(v));
  const auto& targets = std::get<ctl::ControllerProgram>(v).config.targets;
  const auto can = std::find_if(targets.begin(), targets.end(), [](const auto& t) { return t.name == "can"; });
  ASSERT_NE(can, targets.end());
  EXPECT_TRUE(can->color.matches(vision::rgb_to_hsv({200, 30, 30})));
  EXPECT_FALSE(can->color.matches(vision::rgb_to_hsv({170, 170, 175})));

  // The initial controller looks for a grey can instead.
  const auto v0 = std::get<ctl::ControllerProgram>(ctl::validate(default_controller(sim::TaskId::PickPlace)));
  const auto& t0 = v0.config.targets;
  const auto can0 = std::find_if(t0.begin(), t0.end(), [](const auto& t) { return t.name == "can"; });
  ASSERT_NE(can0, t0.end());
  EXPECT_FALSE(can0->color.matches(vision::rgb_to_hsv({200, 30, 30})));
}

TEST(Script, PastTheEndRepeatsLast) {
  for (auto task : {sim::TaskId::Lift, sim::TaskId::PickPlace, sim::TaskId::Stack}) {
    const int n = static_cast<int>(rewrite_script(task).size());
    EXPECT_EQ(mock_rewriter(task, n + 5, {}), mock_rewriter(task, n, {}));
    EXPECT_NE(mock_rewriter(task, 1, {}), mock_rewriter(task, n, {}));
  }
}

// ---- parse_rewrite ----

TEST(ParseRewrite, WellFormed) {
  const auto p = parse_rewrite(
      "Some thoughts first.\n```diagnosis\n{\"tags\": [\"a\"], \"confidence\": 0.3, \"strategy\": \"s\"}\n```\n"
      "```controller\nphase start\n```\n");
  EXPECT_TRUE(p.diagnosis_found);
  EXPECT_EQ(p.diagnosis.tags, std::vector<std::string>{"a"});
  EXPECT_DOUBLE_EQ(p.diagnosis.confidence, 0.3);
  EXPECT_EQ(p.source, "phase start\n");
}

TEST(ParseRewrite, ProseOnlyFails) {
  EXPECT_THROW(parse_rewrite("I think the cube is too far left. Move it."), RewriteParseError);
  EXPECT_THROW(parse_rewrite(""), RewriteParseError);
  EXPECT_THROW(parse_rewrite("```diagnosis\n{\"tags\": [\"x\"]}\n```\n"), RewriteParseError);
}

TEST(ParseRewrite, ControllerWithoutDiagnosisGetsDefaults) {
  const auto p = parse_rewrite("```controller\nx\n```\n");
  EXPECT_FALSE(p.diagnosis_found);
  EXPECT_EQ(p.diagnosis.tags, std::vector<std::string>{"unspecified"});
  EXPECT_DOUBLE_EQ(p.diagnosis.confidence, 0.5);
  EXPECT_EQ(p.source, "x\n");
}

TEST(ParseRewrite, UntaggedFenceIsTheController) {
  const auto p = parse_rewrite("```\nfirst\n```\ntext\n```python\nsecond\n```\n");
  EXPECT_EQ(p.source, "second\n");
}

TEST(ParseRewrite, BrokenDiagnosisJsonFallsBack) {
  const auto p = parse_rewrite("```diagnosis\n{tags: nope\n```\n```controller\ny\n```\n");
  EXPECT_FALSE(p.diagnosis_found);
  EXPECT_DOUBLE_EQ(p.diagnosis.confidence, 0.5);
  EXPECT_EQ(p.source, "y\n");
}

// ---- prompt ----

namespace {

/// A stored run with `n` failed episodes, each with three keyframes.
fs::path history_dir(int n) {
  const fs::path dir = fresh_dir("prompt");
  auto store = memory::RunStore::open(dir);
  render::RgbdImage img;
  img.width = 2;
  img.height = 2;
  img.rgb.assign(12, 50);
  img.depth.assign(4, 1.0f);
  img.convention = render::ImageConvention::CvTopDown;
  for (int i = 0; i < n; ++i) {
    memory::EpisodeOutcome o;
    o.episode_index = i;
    o.steps = 500;
    o.seed = 42;
    o.phase_log = {{0, "reach"}};
    o.final_phase = "reach";
    store.record_episode(o, {}, {{0, "reach", img}, {100, "reach", img}, {499, "reach", img}});
  }
  return dir;
}

}  // namespace

TEST(Prompt, DeterministicAndBounded) {
  const fs::path dir = history_dir(7);
  const auto h = memory::load_history(dir);
  const auto a = build_prompt(h, dir, "phase reach\n", sim::TaskId::Lift);
  const auto b = build_prompt(h, dir, "phase reach\n", sim::TaskId::Lift);
  EXPECT_EQ(a.text(), b.text());
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].label, b.images[i].label);
    EXPECT_EQ(a.images[i].image.rgb, b.images[i].image.rgb);
  }

  for (int i = 0; i < 7; ++i) {
    const bool present = a.digest.find("episode " + std::to_string(i) + " |") != std::string::npos;
    EXPECT_EQ(present, i >= 2) << "episode " << i;
  }
  // Three frames of the newest episode plus the last frame of two earlier ones.
  EXPECT_EQ(a.images.size(), 5u);
  EXPECT_LE(a.images.size(), static_cast<std::size_t>(kMaxPromptImages));
  EXPECT_NE(a.images.back().label.find("episode 6"), std::string::npos);
  EXPECT_NE(a.images.front().label.find("episode 4"), std::string::npos);

  const std::string text = a.text();
  EXPECT_NE(text.find("Do not throw the controller away"), std::string::npos);
  EXPECT_NE(text.find("What was the dominant failure mode?"), std::string::npos);
  EXPECT_NE(text.find("Was the root cause in vision, controller logic, or parameters?"), std::string::npos);
  EXPECT_NE(text.find("What is the single most impactful change?"), std::string::npos);
  EXPECT_NE(text.find("Oscillation flag"), std::string::npos);
  EXPECT_NE(a.user_text().find("phase reach"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Prompt, MissingFramesSkipped) {
  const fs::path dir = history_dir(1);
  fs::remove_all(dir / "episodes" / "000" / "frames");
  const auto h = memory::load_history(dir);
  EXPECT_TRUE(build_prompt(h, dir, "", sim::TaskId::Stack).images.empty());
  fs::remove_all(dir);
}

TEST(Prompt, EmptyHistoryRejected) {
  EXPECT_THROW(build_prompt({}, fs::temp_directory_path(), "", sim::TaskId::Lift), std::invalid_argument);
}

// ---- episodes ----

TEST(Episode, BudgetOfOneStep) {
  BuiltinEnv env(sim::TaskId::Lift);
  auto program = std::get<ctl::ControllerProgram>(ctl::validate(default_controller(sim::TaskId::Lift)));
  EpisodeOptions opts;
  opts.seed = 42;
  opts.step_budget = 1;
  const auto r = run_episode(env, program, opts);
  EXPECT_EQ(r.outcome.steps, 1);
  EXPECT_FALSE(r.outcome.success);
  EXPECT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.keyframes.size(), 1u);
}

TEST(Episode, LiftDefaultStallsInReach) {
  BuiltinEnv env(sim::TaskId::Lift);
  auto program = std::get<ctl::ControllerProgram>(ctl::validate(default_controller(sim::TaskId::Lift)));
  for (std::uint64_t seed : {42u, 43u, 1234u}) {
    EpisodeOptions opts;
    opts.seed = seed;
    const auto r = run_episode(env, program, opts);
    EXPECT_FALSE(r.outcome.success);
    EXPECT_EQ(r.outcome.final_phase, "reach");
    EXPECT_EQ(r.outcome.steps, 500);
    EXPECT_EQ(r.keyframes.size(), 6u);
    EXPECT_EQ(r.outcome.min_distance, memory::min_distance(r.trace));
    EXPECT_EQ(r.outcome.oscillation, memory::detect_oscillation(r.trace));
  }
}

TEST(Episode, LiftScriptedControllerSucceedsOnSeed42) {
  BuiltinEnv env(sim::TaskId::Lift);
  const auto script = rewrite_script(sim::TaskId::Lift);
  auto program = std::get<ctl::ControllerProgram>(ctl::validate(script[1].source));
  EpisodeOptions opts;
  opts.seed = 42;
  const auto r = run_episode(env, program, opts);
  EXPECT_TRUE(r.outcome.success);
  EXPECT_EQ(r.outcome.termination, "success");
  EXPECT_LT(r.outcome.steps, 500);
}

// ---- loop policies with fake rewriters ----

TEST(Loop, ThreeUnparseableRepliesAbort) {
  auto c = quick_config("parse");
  FakeRewriter fake([](int, int) { return std::string("No code today."); });
  const auto r = run_loop(c, fake, builtin(c.task));
  EXPECT_EQ(r.status, RunStatus::BackendFailure);
  EXPECT_EQ(exit_code(r.status), 3);
  EXPECT_EQ(fake.invocations, 3);
  EXPECT_EQ(r.report.rewrite_calls, 3);
  EXPECT_EQ(fake.calls, (std::vector<int>{1, 2, 3}));
  // Re-prompted without re-running: still one episode.
  EXPECT_EQ(r.report.episodes, 1);
  EXPECT_EQ(fake.digests[0].find("previous reply was rejected"), std::string::npos);
  EXPECT_NE(fake.digests[1].find("previous reply was rejected"), std::string::npos);
  EXPECT_FALSE(r.report.eval.has_value());
  EXPECT_EQ(read_json(c.out / "report.json").at("eval"), "n/a");
  EXPECT_NE(r.report.table().find("eval: n/a"), std::string::npos);
  fs::remove_all(c.out);
}

TEST(Loop, InterleavedParseFailuresDoNotAbort) {
  auto c = quick_config("parse_mixed");
  c.iterations = 6;
  FakeRewriter fake([](int call, int) { return call % 3 == 0 ? valid_reply() : std::string("prose"); });
  const auto r = run_loop(c, fake, builtin(c.task));
  EXPECT_EQ(r.status, RunStatus::BudgetExhausted);
  EXPECT_EQ(fake.invocations, 6);
  EXPECT_EQ(r.report.rewrite_calls, 6);
  EXPECT_EQ(r.report.final_version, 2);
  fs::remove_all(c.out);
}

TEST(Loop, InvalidControllerKeepsCurrentAndMintsNoVersion) {
  auto c = quick_config("invalid");
  c.iterations = 3;
  FakeRewriter fake([](int, int) {
    return std::string("```diagnosis\n{\"tags\": [\"x\"]}\n```\n```controller\nthis is not a controller\n```\n");
  });
  const auto r = run_loop(c, fake, builtin(c.task));
  EXPECT_EQ(r.status, RunStatus::BudgetExhausted);
  EXPECT_EQ(exit_code(r.status), 2);
  EXPECT_EQ(r.report.rewrite_calls, 3);
  EXPECT_EQ(r.report.final_version, 0);
  // Each invalid reply is followed by a fresh episode under v0.
  EXPECT_EQ(r.report.episodes, 4);
  const auto h = memory::load_history(c.out);
  ASSERT_EQ(h.controllers.size(), 1u);
  for (const auto& e : h.episodes) EXPECT_EQ(e.controller_version, 0);
  for (const auto& row : r.report.rows) {
    EXPECT_FALSE(row.version.has_value());
    EXPECT_EQ(row.change.rfind("invalid:", 0), 0u) << row.change;
  }
  EXPECT_NE(fake.digests[1].find("failed validation"), std::string::npos);
  ASSERT_TRUE(r.report.eval.has_value());
  EXPECT_EQ(r.report.eval->controller_version, 0);
  fs::remove_all(c.out);
}

TEST(Loop, CredentialErrorStopsWithExitFour) {
  auto c = quick_config("cred");
  FakeRewriter fake([](int, int) -> std::string { throw CredentialError("AOR_LLM_API_KEY was rejected"); });
  const auto r = run_loop(c, fake, builtin(c.task));
  EXPECT_EQ(r.status, RunStatus::CredentialFailure);
  EXPECT_EQ(exit_code(r.status), 4);
  EXPECT_EQ(fake.invocations, 1);
  EXPECT_NE(r.message.find("AOR_LLM_API_KEY"), std::string::npos);
  EXPECT_TRUE(fs::exists(c.out / "report.json"));
  EXPECT_EQ(read_json(c.out / "loop.json").at("status"), "credential_failure");
  fs::remove_all(c.out);
}

TEST(Loop, UnreachableRewriterGivesPartialReport) {
  auto c = quick_config("unreach");
  FakeRewriter fake([](int, int) -> std::string { throw RewriterError("connection refused"); });
  const auto r = run_loop(c, fake, builtin(c.task));
  EXPECT_EQ(r.status, RunStatus::BackendFailure);
  EXPECT_EQ(exit_code(r.status), 3);
  EXPECT_EQ(fake.invocations, kRewriteAttempts);
  EXPECT_EQ(r.report.episodes, 1);
  EXPECT_EQ(r.report.status, "backend_failure");
  EXPECT_TRUE(fs::exists(c.out / "report.json"));
  EXPECT_FALSE(fs::exists(c.out / "eval.json"));
  fs::remove_all(c.out);
}

TEST(Loop, TransientRewriterErrorRetried) {
  auto c = quick_config("retry");
  c.iterations = 1;
  FakeRewriter fake([](int, int inv) -> std::string {
    if (inv <= 2) throw RewriterError("timeout");
    return valid_reply();
  });
  const auto r = run_loop(c, fake, builtin(c.task));
  EXPECT_EQ(r.status, RunStatus::BudgetExhausted);
  EXPECT_EQ(fake.invocations, 3);
  EXPECT_EQ(r.report.rewrite_calls, 1);
  EXPECT_EQ(r.report.final_version, 1);
  fs::remove_all(c.out);
}

namespace {

class FlakyEnv final : public Environment {
 public:
  explicit FlakyEnv(int fail_at) : inner_(sim::TaskId::Lift), fail_at_(fail_at) {}
  Observation reset(std::uint64_t seed) override { return inner_.reset(seed); }
  EnvStep step(const sim::Action& a) override {
    if (++steps_ == fail_at_) throw BackendError("simulated crash");
    return inner_.step(a);
  }
  const render::CameraModel& camera() const override { return inner_.camera(); }
  const sim::TaskSpec& task() const override { return inner_.task(); }

 private:
  BuiltinEnv inner_;
  int fail_at_;
  int steps_ = 0;
};

}  // namespace

TEST(Loop, SimulatorFailureIsBackendFailure) {
  auto c = quick_config("envfail");
  FakeRewriter fake([](int, int) { return valid_reply(); });
  const auto r = run_loop(c, fake, [] { return std::make_unique<FlakyEnv>(45); });
  EXPECT_EQ(r.status, RunStatus::BackendFailure);
  EXPECT_EQ(exit_code(r.status), 3);
  EXPECT_EQ(r.report.episodes, 1);
  EXPECT_EQ(fake.invocations, 1);
  EXPECT_NE(r.message.find("simulated crash"), std::string::npos);
  fs::remove_all(c.out);
}

TEST(Loop, RefusesToOverwriteARun) {
  auto c = quick_config("twice");
  FakeRewriter fake([](int, int) { return std::string("prose"); });
  run_loop(c, fake, builtin(c.task));
  EXPECT_THROW(run_loop(c, fake, builtin(c.task)), ConfigError);
  fs::remove_all(c.out);
}

TEST(Loop, ConfigValidation) {
  RunConfig c;
  c.out = fresh_dir("cfg");
  c.window = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.window = 3;
  c.iterations = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.iterations = 5;
  c.sim = "gazebo";
  EXPECT_THROW(c.validate(), ConfigError);
  c.sim = "bridge:";
  EXPECT_THROW(c.validate(), ConfigError);
  c.sim = "bridge:python3 x.py";
  EXPECT_NO_THROW(c.validate());
  const auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.sim, c.sim);
  EXPECT_EQ(back.iterations, 5);
  EXPECT_EQ(default_eval_episodes(sim::TaskId::Lift), 4);
  EXPECT_EQ(default_eval_episodes(sim::TaskId::PickPlace), 20);
  EXPECT_EQ(default_eval_episodes(sim::TaskId::Stack), 20);
}

// ---- a full mock run, checked against the loop invariants ----

class LiftMockRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new RunConfig;
    config_->task = sim::TaskId::Lift;
    config_->out = fresh_dir("lift_mock");
    MockRewriter mock(config_->task);
    result_ = new RunResult(run_loop(*config_, mock, builtin(config_->task)));
  }
  static void TearDownTestSuite() {
    fs::remove_all(config_->out);
    delete result_;
    delete config_;
  }
  static RunConfig* config_;
  static RunResult* result_;
};
RunConfig* LiftMockRun::config_ = nullptr;
RunResult* LiftMockRun::result_ = nullptr;

TEST_F(LiftMockRun, ConvergesInThreeCalls) {
  EXPECT_EQ(result_->status, RunStatus::Converged);
  EXPECT_EQ(result_->report.rewrite_calls, 3);
  ASSERT_TRUE(result_->report.eval.has_value());
  EXPECT_EQ(result_->report.eval->successes(), 4);
  EXPECT_EQ(result_->report.eval->episodes.size(), 4u);
  EXPECT_EQ(result_->report.rows.size(), 3u);
  EXPECT_NE(result_->report.table().find("eval v3: 4/4 successes"), std::string::npos);
  const auto h = memory::load_history(config_->out);
  EXPECT_EQ(h.episodes.front().final_phase, "reach");
  EXPECT_FALSE(h.episodes.front().success);
}

TEST_F(LiftMockRun, NoCallAfterWindowOfSuccesses) {
  const auto h = memory::load_history(config_->out);
  const auto loop_j = read_json(config_->out / "loop.json");
  std::set<int> called_after;
  for (const auto& c : loop_j.at("calls")) called_after.insert(c.at("after_episode").get<int>());
  int streak = 0;
  for (std::size_t i = 0; i < h.episodes.size(); ++i) {
    const auto& e = h.episodes[i];
    EXPECT_EQ(e.episode_index, static_cast<int>(i));
    streak = e.success ? streak + 1 : 0;
    // A call only ever follows a failure, and nothing runs past W successes.
    if (called_after.count(e.episode_index)) {
      EXPECT_FALSE(e.success);
    }
    if (i + 1 < h.episodes.size()) {
      EXPECT_LT(streak, config_->window);
    }
  }
  EXPECT_EQ(streak, config_->window);
}

TEST_F(LiftMockRun, VersionsIncreaseAndAllValidate) {
  const auto h = memory::load_history(config_->out);
  ASSERT_EQ(h.controllers.size(), 4u);
  for (std::size_t i = 0; i < h.controllers.size(); ++i) {
    EXPECT_EQ(h.controllers[i].version, static_cast<int>(i));
    EXPECT_TRUE(std::holds_alternative<ctl::ControllerProgram>(ctl::validate(h.controllers[i].source)));
  }
  int last = 0;
  for (const auto& e : h.episodes) {
    EXPECT_GE(e.controller_version, last);
    last = e.controller_version;
  }
  ASSERT_EQ(h.diagnoses.size(), 3u);
  for (std::size_t i = 0; i < h.diagnoses.size(); ++i) {
    EXPECT_EQ(h.diagnoses[i].produced_version, static_cast<int>(i) + 1);
  }
  EXPECT_EQ(load_active_controller(config_->out).version, 3);
}

TEST_F(LiftMockRun, FailedSeedIsReplayed) {
  const auto h = memory::load_history(config_->out);
  std::uint64_t expected = config_->seed;
  for (const auto& e : h.episodes) {
    EXPECT_EQ(e.seed, expected);
    if (e.success) ++expected;
  }
  const auto ev = read_json(config_->out / "eval.json");
  EXPECT_EQ(ev.at("episodes")[0].at("seed").get<std::uint64_t>(), config_->seed + kEvalSeedOffset);
}

TEST_F(LiftMockRun, RerunIsByteIdentical) {
  RunConfig again = *config_;
  again.out = fresh_dir("lift_mock_again");
  MockRewriter mock(again.task);
  run_loop(again, mock, builtin(again.task));
  EXPECT_EQ(read_text(again.out / "report.json"), read_text(config_->out / "report.json"));
  EXPECT_EQ(read_text(again.out / "loop.json"), read_text(config_->out / "loop.json"));
  fs::remove_all(again.out);
}

TEST_F(LiftMockRun, ReportRebuildIsStable) {
  const std::string before = read_text(config_->out / "report.json");
  write_report(config_->out);
  EXPECT_EQ(read_text(config_->out / "report.json"), before);
}

// ---- stack: what the late rewrites leave behind ----

TEST(StackScript, SixthVersionFailuresAreCubeBContact) {
  const auto script = rewrite_script(sim::TaskId::Stack);
  ASSERT_GE(script.size(), 6u);
  const auto program = std::get<ctl::ControllerProgram>(ctl::validate(script[5].source));
  const auto ev = evaluate(program, builtin(sim::TaskId::Stack), 42, 12);
  int failures = 0;
  for (const auto& e : ev.episodes) {
    if (e.success) continue;
    ++failures;
    EXPECT_GT(e.max_secondary_displacement, 0.01) << "seed " << e.seed;
  }
  // The check above must not be vacuous.
  EXPECT_GT(failures, 0);
}
