#pragma once

#include "aor/ctl/runtime.hpp"
#include "aor/loop/env.hpp"
#include "aor/memory/store.hpp"

#include <cstdint>
#include <vector>

namespace aor::loop {

struct EpisodeOptions {
  int episode_index = 0;
  std::uint64_t seed = 0;
  /// Overrides the task budget when positive.
  std::int64_t step_budget = 0;
  int keyframe_cap = memory::kKeyframeCap;
};

struct EpisodeResult {
  memory::EpisodeOutcome outcome;
  memory::EpisodeTrace trace;
  std::vector<memory::Keyframe> keyframes;
  /// Steps on which each declared target was detected, in declaration order.
  std::vector<std::int64_t> detection_steps;
};

/// Render, extract features, run the controller, step the simulator; stops on
/// success, step budget, or the consecutive-exception abort.
EpisodeResult run_episode(Environment& env, const ctl::ControllerProgram& program, const EpisodeOptions& opts);

}  // namespace aor::loop
