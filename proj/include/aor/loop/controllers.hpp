#pragma once

#include "aor/memory/store.hpp"
#include "aor/sim/world.hpp"

#include <string>
#include <vector>

namespace aor::loop {

// Controller source generators. Each task's controller is a fixed skeleton
// with a handful of knobs; the initial controller and every scripted rewrite
// are points in that knob space.

struct LiftKnobs {
  double depth_bias = 0.0;
  /// Downward command held while the jaw closes; anything above 0.1 trips the
  /// simulator's stationary-grasp rule.
  double press = 0.5;
  /// Smallest blob area trusted as an unoccluded view of the cube.
  int min_area = 180;
};

struct PickPlaceKnobs {
  std::string color = "silver";
  std::string mode = "mean";
};

struct StackKnobs {
  bool cv_backproject = true;
  bool cv_extrinsic = true;
  double depth_bias = 0.0;
  /// Per-cube lateral depth correction (surface_offset) instead of a bare z shift.
  bool per_cube_offsets = false;
  bool ramp = false;
  bool retry = false;
  bool freeze_b = false;
};

std::string lift_controller(const LiftKnobs& k);
std::string pickplace_controller(const PickPlaceKnobs& k);
std::string stack_controller(const StackKnobs& k);

/// Deliberately imperfect starting point for each task.
std::string default_controller(sim::TaskId task);

/// One canned rewrite: the diagnosis the mock "reaches" and the source it emits.
struct ScriptedRewrite {
  memory::DiagnosisRecord diagnosis;
  std::string source;
};

/// The full scripted fix sequence for a task, in order.
std::vector<ScriptedRewrite> rewrite_script(sim::TaskId task);

/// Format a diagnosis and source as a rewriter response (two fenced blocks).
std::string format_response(const memory::DiagnosisRecord& diagnosis, const std::string& source);

/// Deterministic offline rewriter. `iteration` counts from 1; past the end of
/// the script the last entry is repeated.
std::string mock_rewriter(sim::TaskId task, int iteration, const memory::History& history);

}  // namespace aor::loop
