#include "aor/memory/store.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

using namespace aor;
using namespace aor::memory;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("aor_mem_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string random_text(std::mt19937_64& rng, int max_len) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABC_-.,:;\"\\\n\t{}[]0123456789";
  std::uniform_int_distribution<int> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  for (int i = len(rng); i > 0; --i) s.push_back(alphabet[pick(rng)]);
  return s;
}

EpisodeOutcome random_outcome(std::mt19937_64& rng, int index) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> small(0, 8);
  EpisodeOutcome o;
  o.episode_index = index;
  o.reward_total = u(rng);
  o.steps = std::uniform_int_distribution<std::int64_t>(1, 1000)(rng);
  o.success = rng() & 1;
  std::int64_t step = 0;
  for (int i = small(rng); i > 0; --i) {
    o.phase_log.push_back({step, random_text(rng, 12)});
    step += 1 + small(rng);
  }
  o.final_phase = random_text(rng, 10);
  o.min_distance = (rng() % 5 == 0) ? std::numeric_limits<double>::infinity() : std::abs(u(rng));
  o.oscillation = rng() & 1;
  for (int i = small(rng); i > 0; --i) o.keyframe_refs.push_back(random_text(rng, 20));
  o.controller_version = small(rng);
  o.seed = rng();
  o.termination = std::vector<std::string>{"success", "budget", "exception_abort", "env_done"}[rng() % 4];
  o.exception_count = small(rng);
  return o;
}

DiagnosisRecord random_diagnosis(std::mt19937_64& rng) {
  DiagnosisRecord d;
  d.tags.clear();
  for (int i = 1 + static_cast<int>(rng() % 4); i > 0; --i) d.tags.push_back("t" + random_text(rng, 8));
  d.reasoning = random_text(rng, 200);
  d.strategy = random_text(rng, 200);
  d.confidence = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  d.produced_version = static_cast<int>(rng() % 50);
  return d;
}

render::RgbdImage tiny_frame(std::uint8_t shade) {
  render::RgbdImage img;
  img.width = 4;
  img.height = 3;
  img.rgb.assign(4 * 3 * 3, shade);
  img.depth.assign(4 * 3, 1.0f);
  img.convention = render::ImageConvention::CvTopDown;
  return img;
}

EpisodeTrace straight_trace(int n) {
  EpisodeTrace t;
  for (int i = 0; i < n; ++i) {
    TraceRow r;
    r.step = i;
    r.action = {0.1, 0.0, -0.1, 1.0};
    r.eef = {0.0, 0.0, 1.0 - 0.001 * i};
    r.object = std::array<double, 3>{0.0, 0.0, 0.82};
    r.phase = "reach";
    t.push_back(r);
  }
  return t;
}

EpisodeOutcome simple_outcome(int index) {
  EpisodeOutcome o;
  o.episode_index = index;
  o.steps = 10;
  o.phase_log = {{0, "reach"}};
  o.final_phase = "reach";
  o.seed = 42 + index;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(MemoryRoundTrip, RandomizedOutcomes) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto o = random_outcome(rng, i);
    const auto text = to_json(o).dump();
    const auto back = outcome_from_json(nlohmann::json::parse(text));
    ASSERT_EQ(back, o) << text;
  }
}

TEST(MemoryRoundTrip, RandomizedDiagnoses) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 500; ++i) {
    const auto d = random_diagnosis(rng);
    const auto back = diagnosis_from_json(nlohmann::json::parse(to_json(d).dump()));
    ASSERT_EQ(back, d);
  }
}

TEST(MemoryRoundTrip, TraceRows) {
  EpisodeTrace t = straight_trace(20);
  t[3].object.reset();
  t[5].exception = true;
  t[7].secondary_displacement = 0.0123456789;
  EXPECT_EQ(trace_from_json(nlohmann::json::parse(to_json(t).dump())), t);
}

TEST(MemoryRoundTrip, ThroughStore) {
  TempDir tmp;
  std::mt19937_64 rng(13);
  auto store = RunStore::open(tmp.path(), {{"task", "lift"}});
  std::vector<EpisodeOutcome> stored;
  for (int i = 0; i < 5; ++i) {
    stored.push_back(store.record_episode(random_outcome(rng, i), straight_trace(8), {{0, "reach", tiny_frame(9)}}));
  }
  std::vector<DiagnosisRecord> diags;
  for (int i = 0; i < 3; ++i) {
    diags.push_back(random_diagnosis(rng));
    store.record_diagnosis(diags.back());
  }
  store.record_controller({0, "initial", "start", "source text\n"});
  store.record_controller({2, "rewrite", "fix", "other\n"});

  const auto h = load_history(tmp.path());
  EXPECT_TRUE(h.warnings.empty());
  EXPECT_EQ(h.episodes, stored);
  EXPECT_EQ(h.diagnoses, diags);
  ASSERT_EQ(h.controllers.size(), 2u);
  EXPECT_EQ(h.controllers[1].version, 2);
  EXPECT_EQ(h.controllers[1].source, "other\n");
  EXPECT_EQ(h.controllers[1].provenance, "rewrite");
  EXPECT_EQ(h.controllers[1].summary, "fix");
  EXPECT_EQ(store.load_trace(2), straight_trace(8));
  EXPECT_EQ(store.config().at("task"), "lift");
}

TEST(MemoryStore, KeyframeRefsPointAtFrames) {
  TempDir tmp;
  auto store = RunStore::open(tmp.path());
  const auto o = store.record_episode(simple_outcome(0), straight_trace(3),
                                      {{0, "reach", tiny_frame(1)}, {2, "grasp/x", tiny_frame(2)}});
  ASSERT_EQ(o.keyframe_refs.size(), 2u);
  for (const auto& ref : o.keyframe_refs) EXPECT_TRUE(fs::exists(tmp.path() / ref)) << ref;
  EXPECT_EQ(slurp(tmp.path() / o.keyframe_refs[0]).substr(0, 2), "P6");
  EXPECT_EQ(frame_name(2, "grasp/x"), "002_grasp_x.ppm");
}

TEST(MemoryStore, EmptyRunDirGivesEmptyHistory) {
  TempDir tmp;
  const auto h = load_history(tmp.path());
  EXPECT_TRUE(h.episodes.empty());
  EXPECT_TRUE(h.diagnoses.empty());
  EXPECT_TRUE(h.controllers.empty());
  EXPECT_THROW(load_history(tmp.path() / "nope"), StorageError);
}

TEST(MemoryStore, OutOfSequenceEpisodeRejected) {
  TempDir tmp;
  auto store = RunStore::open(tmp.path());
  EXPECT_THROW(store.record_episode(simple_outcome(1), {}, {}), StorageError);
  EXPECT_EQ(store.episode_count(), 0);
  EXPECT_EQ(load_history(tmp.path()).episodes.size(), 0u);
}

TEST(MemoryStore, ControllerVersionsMustIncrease) {
  TempDir tmp;
  auto store = RunStore::open(tmp.path());
  store.record_controller({1, "", "", "a"});
  EXPECT_THROW(store.record_controller({1, "", "", "b"}), StorageError);
}

// A crash after the outcome temp file was written but before either rename.
TEST(MemoryCrash, OrphanTempFileIgnored) {
  TempDir tmp;
  const int n = 4;
  {
    auto store = RunStore::open(tmp.path());
    for (int i = 0; i < n - 1; ++i) store.record_episode(simple_outcome(i), straight_trace(5), {});
    const fs::path ep = store.episode_dir(n - 1);
    fs::create_directories(ep);
    std::ofstream(ep / "outcome.json.tmp") << to_json(simple_outcome(n - 1)).dump(2);
    std::ofstream(tmp.path() / "index.json.tmp") << "{\"episodes\": [0, 1, 2, 3]";
  }
  const auto h = load_history(tmp.path());
  ASSERT_EQ(h.episodes.size(), static_cast<std::size_t>(n - 1));
  EXPECT_TRUE(h.warnings.empty());

  // Resuming continues the dense numbering from n - 1.
  auto store = RunStore::open(tmp.path());
  EXPECT_EQ(store.episode_count(), n - 1);
  store.record_episode(simple_outcome(n - 1), straight_trace(5), {});
  const auto again = load_history(tmp.path());
  ASSERT_EQ(again.episodes.size(), static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) EXPECT_EQ(again.episodes[i].episode_index, i);
}

// Outcome renamed into place but the index was not yet published.
TEST(MemoryCrash, UnpublishedOutcomeIgnored) {
  TempDir tmp;
  {
    auto store = RunStore::open(tmp.path());
    store.record_episode(simple_outcome(0), {}, {});
    const fs::path ep = store.episode_dir(1);
    fs::create_directories(ep);
    std::ofstream(ep / "outcome.json") << to_json(simple_outcome(1)).dump(2);
  }
  EXPECT_EQ(load_history(tmp.path()).episodes.size(), 1u);
  auto store = RunStore::open(tmp.path());
  const auto o = store.record_episode(simple_outcome(1), {}, {});
  EXPECT_EQ(o.episode_index, 1);
}

TEST(MemoryCrash, TruncatedOutcomeIsWarnedAndSkipped) {
  TempDir tmp;
  auto store = RunStore::open(tmp.path());
  for (int i = 0; i < 5; ++i) store.record_episode(simple_outcome(i), {}, {});
  const fs::path victim = store.episode_dir(2) / "outcome.json";
  const std::string text = slurp(victim);
  std::ofstream(victim, std::ios::trunc) << text.substr(0, text.size() / 2);

  const auto h = load_history(tmp.path());
  ASSERT_EQ(h.episodes.size(), 4u);
  ASSERT_EQ(h.warnings.size(), 1u);
  EXPECT_NE(h.warnings[0].find("episode 2"), std::string::npos);
  std::vector<int> idx;
  for (const auto& e : h.episodes) idx.push_back(e.episode_index);
  EXPECT_EQ(idx, (std::vector<int>{0, 1, 3, 4}));
}

TEST(MemoryCrash, MissingDiagnosisFileTolerated) {
  TempDir tmp;
  auto store = RunStore::open(tmp.path());
  store.record_diagnosis({});
  store.record_diagnosis({{"x"}, "r", "s", 0.9, 1});
  fs::remove(tmp.path() / "diagnoses" / "d000.json");
  const auto h = load_history(tmp.path());
  ASSERT_EQ(h.diagnoses.size(), 1u);
  EXPECT_EQ(h.diagnoses[0].tags, std::vector<std::string>{"x"});
  EXPECT_TRUE(h.warnings.empty());
}

TEST(MemoryCrash, UnreadableIndexIsLoadError) {
  TempDir tmp;
  RunStore::open(tmp.path());
  std::ofstream(tmp.path() / "index.json", std::ios::trunc) << "{\"episodes\": [0,";
  EXPECT_THROW(load_history(tmp.path()), StorageError);
  std::ofstream(tmp.path() / "index.json", std::ios::trunc) << "{\"episodes\": 3}";
  EXPECT_THROW(load_history(tmp.path()), StorageError);
}

TEST(MemoryStore, TwoSessionsMergeInOrder) {
  TempDir tmp;
  {
    auto first = RunStore::open(tmp.path(), {{"session", 1}});
    for (int i = 0; i < 3; ++i) first.record_episode(simple_outcome(i), {}, {});
    first.record_controller({0, "initial", "", "a"});
  }
  {
    auto second = RunStore::open(tmp.path(), {{"session", 2}});
    EXPECT_EQ(second.config().at("session"), 1);
    for (int i = 3; i < 6; ++i) second.record_episode(simple_outcome(i), {}, {});
    second.record_controller({1, "rewrite", "", "b"});
  }
  const auto h = load_history(tmp.path());
  ASSERT_EQ(h.episodes.size(), 6u);
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(h.episodes[i].episode_index, i);
    EXPECT_EQ(h.episodes[i].seed, 42u + i);
  }
  ASSERT_EQ(h.controllers.size(), 2u);
  EXPECT_EQ(h.controllers[0].source, "a");
  EXPECT_EQ(h.controllers[1].source, "b");
}

TEST(MemoryDiagnosis, DefaultsAndClamping) {
  const auto empty = diagnosis_from_json(nlohmann::json::object());
  EXPECT_EQ(empty.tags, std::vector<std::string>{"unspecified"});
  EXPECT_DOUBLE_EQ(empty.confidence, 0.5);
  EXPECT_EQ(diagnosis_from_json(nlohmann::json::array()).tags, std::vector<std::string>{"unspecified"});
  EXPECT_EQ(diagnosis_from_json({{"tags", nlohmann::json::array({"", 3})}}).tags,
            std::vector<std::string>{"unspecified"});
  EXPECT_DOUBLE_EQ(diagnosis_from_json({{"confidence", 1.7}}).confidence, 1.0);
  EXPECT_DOUBLE_EQ(diagnosis_from_json({{"confidence", -0.2}}).confidence, 0.0);
  EXPECT_DOUBLE_EQ(diagnosis_from_json({{"confidence", "high"}}).confidence, 0.5);
  const auto d = diagnosis_from_json({{"tags", {"misalignment", "vision_bias"}}, {"confidence", 0.72}});
  EXPECT_EQ(d.tags, (std::vector<std::string>{"misalignment", "vision_bias"}));
  EXPECT_DOUBLE_EQ(d.confidence, 0.72);
}

// ---- keyframes ----

namespace {

std::vector<std::int64_t> steps_of(const std::vector<KeyframeSlot>& slots) {
  std::vector<std::int64_t> out;
  for (const auto& s : slots) out.push_back(s.step);
  return out;
}

std::vector<PhaseEntry> log_with_transitions(std::vector<std::int64_t> at) {
  std::vector<PhaseEntry> log{{0, "p0"}};
  for (std::size_t i = 0; i < at.size(); ++i) log.push_back({at[i], "p" + std::to_string(i + 1)});
  return log;
}

}  // namespace

TEST(Keyframes, IntervalsOnly) {
  const auto slots = select_keyframes({{0, "reach"}}, 500);
  EXPECT_EQ(steps_of(slots), (std::vector<std::int64_t>{0, 100, 200, 300, 400, 499}));
  EXPECT_EQ(slots.back().kind, KeyframeSlot::Kind::Final);
}

TEST(Keyframes, FourTransitionsThreeIntervals) {
  // 250 steps: intervals 0,100,200 and final 249; the last transition lands on
  // the final step so the frame count is 4 + 3.
  const auto slots = select_keyframes(log_with_transitions({30, 120, 180, 249}), 250);
  EXPECT_EQ(steps_of(slots), (std::vector<std::int64_t>{0, 30, 100, 120, 180, 200, 249}));
  EXPECT_EQ(slots.back().kind, KeyframeSlot::Kind::Transition);
  EXPECT_TRUE(std::is_sorted(slots.begin(), slots.end(),
                             [](const auto& a, const auto& b) { return a.step < b.step; }));
}

TEST(Keyframes, ThirteenCandidatesDropEarliestInterval) {
  // 7 transitions + 5 intervals + final = 13.
  const auto slots = select_keyframes(log_with_transitions({10, 20, 30, 40, 50, 60, 70}), 500);
  ASSERT_EQ(slots.size(), 12u);
  EXPECT_EQ(slots.front().step, 10);
  const auto steps = steps_of(slots);
  for (std::int64_t s : {100, 200, 300, 400, 499}) {
    EXPECT_NE(std::find(steps.begin(), steps.end(), s), steps.end()) << s;
  }
}

TEST(Keyframes, FifteenTransitionsKeepOnlyTransitions) {
  std::vector<std::int64_t> at;
  for (int i = 1; i <= 15; ++i) at.push_back(i * 7);
  const auto slots = select_keyframes(log_with_transitions(at), 500);
  ASSERT_EQ(slots.size(), 12u);
  for (const auto& s : slots) EXPECT_EQ(s.kind, KeyframeSlot::Kind::Transition);
  // Transitions themselves overflow the cap: the latest twelve survive.
  EXPECT_EQ(slots.front().step, 4 * 7);
  EXPECT_EQ(slots.back().step, 15 * 7);
}

TEST(Keyframes, CapPolicyProperty) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::int64_t total = std::uniform_int_distribution<std::int64_t>(1, 1200)(rng);
    const int k = std::uniform_int_distribution<int>(0, 20)(rng);
    std::set<std::int64_t> at_set;
    for (int i = 0; i < k; ++i) at_set.insert(std::uniform_int_distribution<std::int64_t>(1, total + 5)(rng));
    const auto slots = select_keyframes(log_with_transitions({at_set.begin(), at_set.end()}), total);

    // Candidate set, computed independently.
    std::set<std::int64_t> transitions, all;
    for (auto s : at_set) {
      if (s < total) transitions.insert(s);
    }
    all = transitions;
    all.insert(total - 1);
    for (std::int64_t s = 0; s < total; s += 100) all.insert(s);

    ASSERT_EQ(slots.size(), std::min<std::size_t>(12, all.size()));
    ASSERT_TRUE(std::is_sorted(slots.begin(), slots.end(),
                               [](const auto& a, const auto& b) { return a.step < b.step; }));
    std::set<std::int64_t> kept;
    for (const auto& s : slots) {
      ASSERT_TRUE(all.count(s.step));
      ASSERT_TRUE(kept.insert(s.step).second);
    }
    const std::size_t keep_transitions = std::min<std::size_t>(12, transitions.size());
    std::size_t n_tr = 0;
    for (auto s : transitions) n_tr += kept.count(s);
    ASSERT_EQ(n_tr, keep_transitions);
    // Any dropped interval frame is earlier than every kept interval frame.
    std::int64_t last_dropped = -1, first_kept = total;
    for (std::int64_t s = 0; s < total; s += 100) {
      if (transitions.count(s) || s == total - 1) continue;
      if (kept.count(s)) first_kept = std::min(first_kept, s);
      else last_dropped = std::max(last_dropped, s);
    }
    ASSERT_LT(last_dropped, first_kept);
  }
}

// ---- derived trace statistics ----

namespace {

bool brute_oscillation(const EpisodeTrace& t, int window, int flips) {
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t s = 0; s < t.size(); ++s) {
      int count = 0;
      for (std::size_t i = s + 1; i < std::min(t.size(), s + window); ++i) {
        if (t[i - 1].action[axis] * t[i].action[axis] < 0.0) ++count;
      }
      if (count > flips) return true;
    }
  }
  return false;
}

EpisodeTrace random_trace(std::mt19937_64& rng) {
  const int n = std::uniform_int_distribution<int>(0, 300)(rng);
  // Mix of calm and jittery stretches so both outcomes show up.
  const double flip_prob = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
  std::bernoulli_distribution flip(flip_prob), zero(0.05), has_obj(0.8);
  std::uniform_real_distribution<double> mag(0.0, 1.0), pos(-1.0, 1.0);
  EpisodeTrace t;
  std::array<double, 3> sign{1, 1, 1};
  for (int i = 0; i < n; ++i) {
    TraceRow r;
    r.step = i;
    for (int a = 0; a < 3; ++a) {
      if (flip(rng)) sign[a] = -sign[a];
      r.action[a] = zero(rng) ? 0.0 : sign[a] * mag(rng);
    }
    r.eef = {pos(rng), pos(rng), pos(rng)};
    if (has_obj(rng)) r.object = std::array<double, 3>{pos(rng), pos(rng), pos(rng)};
    t.push_back(r);
  }
  return t;
}

}  // namespace

TEST(TraceStats, OscillationMatchesBruteForce) {
  std::mt19937_64 rng(31);
  int positives = 0;
  for (int i = 0; i < 100; ++i) {
    const auto t = random_trace(rng);
    const bool expected = brute_oscillation(t, 50, 20);
    ASSERT_EQ(detect_oscillation(t), expected) << "trace " << i;
    positives += expected;
  }
  EXPECT_GT(positives, 10);
  EXPECT_LT(positives, 90);
}

TEST(TraceStats, OscillationBoundary) {
  // Exactly 20 flips in 50 steps is not oscillation; 21 is.
  auto make = [](int flips_wanted) {
    EpisodeTrace t(50);
    double s = 1.0;
    for (int i = 0; i < 50; ++i) {
      if (i >= 1 && i <= flips_wanted) s = -s;
      t[i].step = i;
      t[i].action = {s, 0.0, 0.0, 0.0};
    }
    return t;
  };
  EXPECT_FALSE(detect_oscillation(make(20)));
  EXPECT_TRUE(detect_oscillation(make(21)));
  // Zeros do not count as a sign.
  EpisodeTrace zeros(60);
  for (int i = 0; i < 60; ++i) zeros[i].action = {i % 2 ? 0.0 : (i % 4 ? -1.0 : 1.0), 0, 0, 0};
  EXPECT_FALSE(detect_oscillation(zeros));
}

TEST(TraceStats, MinDistanceMatchesBruteForce) {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 100; ++i) {
    const auto t = random_trace(rng);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : t) {
      if (!r.object) continue;
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) d2 += (r.eef[a] - (*r.object)[a]) * (r.eef[a] - (*r.object)[a]);
      best = std::min(best, std::sqrt(d2));
    }
    ASSERT_EQ(min_distance(t), best);
  }
  EXPECT_TRUE(std::isinf(min_distance({})));
}
