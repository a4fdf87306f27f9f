#pragma once

#include "aor/render/render.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace aor::memory {

namespace fs = std::filesystem;

class StorageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kKeyframeCap = 12;
inline constexpr int kKeyframeInterval = 100;
inline constexpr int kOscillationWindow = 50;
inline constexpr int kOscillationFlips = 20;

struct PhaseEntry {
  std::int64_t step = 0;
  std::string phase;
  bool operator==(const PhaseEntry&) const = default;
};

struct EpisodeOutcome {
  int episode_index = 0;
  double reward_total = 0.0;
  std::int64_t steps = 0;
  bool success = false;
  std::vector<PhaseEntry> phase_log;
  std::string final_phase;
  /// Infinity when the environment exposes no object positions.
  double min_distance = std::numeric_limits<double>::infinity();
  bool oscillation = false;
  std::vector<std::string> keyframe_refs;
  int controller_version = 0;
  std::uint64_t seed = 0;
  /// success | budget | exception_abort | env_done
  std::string termination = "budget";
  int exception_count = 0;

  bool operator==(const EpisodeOutcome&) const = default;
};

struct DiagnosisRecord {
  std::vector<std::string> tags{"unspecified"};
  std::string reasoning;
  std::string strategy;
  double confidence = 0.5;
  int produced_version = 0;

  bool operator==(const DiagnosisRecord&) const = default;
};

/// One control step: the observation the controller saw and what it emitted.
struct TraceRow {
  std::int64_t step = 0;
  std::array<double, 4> action{};
  std::array<double, 3> eef{};
  std::optional<std::array<double, 3>> object;
  std::string phase;
  double reward = 0.0;
  /// Largest displacement of a non-primary object from its reference pose.
  double secondary_displacement = 0.0;
  bool exception = false;

  bool operator==(const TraceRow&) const = default;
};

using EpisodeTrace = std::vector<TraceRow>;

nlohmann::json to_json(const EpisodeOutcome& o);
EpisodeOutcome outcome_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DiagnosisRecord& d);
/// Missing fields fall back to defaults; confidence is clamped to [0, 1].
DiagnosisRecord diagnosis_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EpisodeTrace& t);
EpisodeTrace trace_from_json(const nlohmann::json& j);

/// Some Cartesian axis changes sign (between adjacent non-zero values) more
/// than `flips` times inside a window of `window` consecutive steps.
bool detect_oscillation(const EpisodeTrace& trace, int window = kOscillationWindow,
                        int flips = kOscillationFlips);

/// Minimum eef-to-object distance over rows that carry an object position.
double min_distance(const EpisodeTrace& trace);

struct KeyframeSlot {
  std::int64_t step = 0;
  enum class Kind { Transition, Final, Interval } kind = Kind::Interval;
  bool operator==(const KeyframeSlot&) const = default;
};

/// Chooses frame steps for an episode of `total_steps` steps: every phase
/// transition after the first log entry, every `interval` steps from 0, and
/// the final step. Duplicates collapse to the highest-priority kind. Over the
/// cap, intervals go first, then the final frame, then transitions; earliest
/// first within a kind. Result is ordered by step.
std::vector<KeyframeSlot> select_keyframes(const std::vector<PhaseEntry>& phase_log, std::int64_t total_steps,
                                           int cap = kKeyframeCap, int interval = kKeyframeInterval);

struct Keyframe {
  std::int64_t step = 0;
  std::string phase;
  render::RgbdImage image;
};

struct ControllerEntry {
  int version = 0;
  std::string provenance;
  std::string summary;
  std::string source;
};

struct History {
  std::vector<EpisodeOutcome> episodes;
  std::vector<DiagnosisRecord> diagnoses;
  std::vector<ControllerEntry> controllers;
  std::vector<std::string> warnings;
};

/// Writes `content` next to `path`, then renames it into place.
void atomic_write(const fs::path& path, const std::string& content);

/// Run directory. Single writer; readers see whatever the index lists.
class RunStore {
 public:
  /// Creates the layout, or reopens an existing run (config kept as found).
  static RunStore open(const fs::path& dir, const nlohmann::json& config = nlohmann::json::object());

  const fs::path& dir() const { return dir_; }
  int episode_count() const { return static_cast<int>(episodes_.size()); }
  nlohmann::json config() const;

  /// Stores outcome, trace and frames, then publishes the episode in the index.
  /// Fills keyframe_refs from the frames. Returns the stored outcome.
  EpisodeOutcome record_episode(EpisodeOutcome outcome, const EpisodeTrace& trace,
                                const std::vector<Keyframe>& frames);
  void record_controller(const ControllerEntry& entry);
  void record_diagnosis(const DiagnosisRecord& record);
  void write_json(const std::string& relative, const nlohmann::json& j);

  fs::path episode_dir(int index) const;
  EpisodeTrace load_trace(int index) const;

 private:
  explicit RunStore(fs::path dir) : dir_(std::move(dir)) {}
  fs::path dir_;
  std::vector<int> episodes_;
  std::vector<int> controllers_;
  std::vector<int> diagnoses_;

  void load_index();
  void publish_index();
};

/// Reads everything the index lists. Corrupt or missing records become warnings.
/// Throws StorageError when the index itself is unreadable.
History load_history(const fs::path& dir);

std::string frame_name(std::int64_t step, const std::string& phase);

}  // namespace aor::memory
