#pragma once

#include "aor/ctl/script.hpp"
#include "aor/sim/world.hpp"
#include "aor/vision/vision.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace aor::ctl {

enum class Provenance { Initial, MockRewriter, Llm };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

enum class ValidationStage { Parse, Interface, Instantiate, DryRun, OutputShape };

std::string_view to_string(ValidationStage s);

struct ValidationError {
  ValidationStage stage;
  std::string message;
};

inline constexpr double kDefaultEmaAlpha = 0.4;
inline constexpr int kAbortAfterExceptions = 25;
inline constexpr double kMaxDelta = 2.0;
inline constexpr double kMaxGrip = 1.0;

/// Perception settings declared by the program's `target` and `option` lines.
struct VisionConfig {
  std::vector<vision::TargetSpec> targets;
  vision::BackprojectOptions backproject;
  double ema_alpha = kDefaultEmaAlpha;
};

/// Reads targets and options from a parsed program. Throws ConfigError.
VisionConfig vision_config(const Program& program);

struct ControllerProgram {
  int version = 0;
  std::string source;
  Provenance provenance = Provenance::Initial;
  std::shared_ptr<const Program> compiled;
  VisionConfig config;
};

using ValidationResult = std::variant<ControllerProgram, ValidationError>;

/// Full pipeline: parse, interface, instantiate (+ reset), dry-run, output-shape.
/// The returned program has version 0; the caller assigns versions on install.
/// Never throws for bad source.
ValidationResult validate(std::string_view source, const vision::FeatureFrame& canned,
                          Provenance provenance = Provenance::Initial);
/// Same, dry-running on canned features for the program's own targets.
ValidationResult validate(std::string_view source, Provenance provenance = Provenance::Initial);

/// Frame with every listed target detected at a plausible pose; used for
/// dry runs when no real observation is at hand.
vision::FeatureFrame canned_features(const std::vector<std::string>& target_names);

/// Converts a feature frame to the record passed to get_action. Targets the
/// program declares but the frame lacks appear as not detected.
Value features_to_value(const vision::FeatureFrame& frame, const VisionConfig& config);

struct EmaState {
  double alpha = kDefaultEmaAlpha;
  std::array<double, 4> prev{};
};

/// a = alpha * raw + (1 - alpha) * prev, then clamped; prev becomes the emitted action.
sim::Action smooth_and_clamp(const std::array<double, 4>& raw, EmaState& ema);

sim::Action clamp_action(const std::array<double, 4>& a);

struct StepOutput {
  sim::Action action;
  std::string phase;
  bool exception = false;
  std::string error;
};

/// One controller per episode.
class ControllerInstance {
 public:
  explicit ControllerInstance(const ControllerProgram& program,
                              std::uint64_t budget = kDefaultInstructionBudget);

  /// Re-initializes script state, EMA history and exception counters.
  void reset();
  StepOutput step(const vision::FeatureFrame& features);

  int consecutive_exceptions() const { return consecutive_; }
  int total_exceptions() const { return total_; }
  bool aborted() const { return consecutive_ >= kAbortAfterExceptions; }
  const std::string& phase() const { return phase_; }
  const EmaState& ema() const { return ema_; }
  const VisionConfig& config() const { return config_; }

 private:
  Interpreter interp_;
  VisionConfig config_;
  EmaState ema_;
  std::uint64_t budget_;
  std::string phase_ = "unknown";
  int consecutive_ = 0;
  int total_ = 0;

  void read_phase();
};

/// Free-function form of one runtime step.
StepOutput controller_step(ControllerInstance& instance, const vision::FeatureFrame& features);

}  // namespace aor::ctl
