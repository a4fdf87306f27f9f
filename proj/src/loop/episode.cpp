#include "aor/loop/episode.hpp"

#include <deque>

namespace aor::loop {

namespace {

std::array<double, 3> arr(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

void keep_latest(std::deque<memory::Keyframe>& q, memory::Keyframe f, int cap) {
  q.push_back(std::move(f));
  while (static_cast<int>(q.size()) > cap) q.pop_front();
}

}  // namespace

EpisodeResult run_episode(Environment& env, const ctl::ControllerProgram& program, const EpisodeOptions& opts) {
  EpisodeResult res;
  auto& out = res.outcome;
  out.episode_index = opts.episode_index;
  out.controller_version = program.version;
  out.seed = opts.seed;

  const std::int64_t budget = opts.step_budget > 0 ? opts.step_budget : env.task().episode_step_budget;
  ctl::ControllerInstance controller(program);
  const auto& cfg = controller.config();
  res.detection_steps.assign(cfg.targets.size(), 0);

  Observation obs = env.reset(opts.seed);
  controller.reset();

  std::deque<memory::Keyframe> transitions;
  std::deque<memory::Keyframe> intervals;
  memory::Keyframe last;

  out.termination = "budget";
  std::int64_t t = 0;
  for (; t < budget; ++t) {
    const vision::FeatureFrame features =
        vision::extract_features(obs.image, env.camera(), obs.proprio, cfg.targets, cfg.backproject);
    for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
      const auto* f = features.find(cfg.targets[i].name);
      if (f != nullptr && f->detected) ++res.detection_steps[i];
    }

    const ctl::StepOutput step = controller.step(features);
    if (step.exception) ++out.exception_count;

    const bool transition = out.phase_log.empty() || out.phase_log.back().phase != step.phase;
    if (transition) out.phase_log.push_back({t, step.phase});

    memory::TraceRow row;
    row.step = t;
    row.action = {step.action.delta.x(), step.action.delta.y(), step.action.delta.z(), step.action.grip};
    row.eef = arr(obs.proprio.eef_pos);
    if (obs.primary_object) row.object = arr(*obs.primary_object);
    row.phase = step.phase;
    row.secondary_displacement = obs.secondary_displacement;
    row.exception = step.exception;

    memory::Keyframe frame{t, step.phase, obs.image};
    if (transition && t > 0) keep_latest(transitions, frame, opts.keyframe_cap);
    if (t % memory::kKeyframeInterval == 0) keep_latest(intervals, frame, opts.keyframe_cap);
    last = std::move(frame);

    if (controller.aborted()) {
      res.trace.push_back(std::move(row));
      out.termination = "exception_abort";
      ++t;
      break;
    }

    EnvStep es = env.step(step.action);
    row.reward = es.reward;
    res.trace.push_back(std::move(row));
    out.reward_total += es.reward;
    obs = std::move(es.obs);
    if (es.success) {
      out.success = true;
      out.termination = "success";
      ++t;
      break;
    }
    if (es.done) {
      out.termination = t + 1 >= budget ? "budget" : "env_done";
      ++t;
      break;
    }
  }

  out.steps = t;
  out.final_phase = out.phase_log.empty() ? controller.phase() : out.phase_log.back().phase;
  out.min_distance = memory::min_distance(res.trace);
  out.oscillation = memory::detect_oscillation(res.trace);

  for (const auto& slot : memory::select_keyframes(out.phase_log, out.steps, opts.keyframe_cap)) {
    auto pick = [&](const std::deque<memory::Keyframe>& q) -> const memory::Keyframe* {
      for (const auto& f : q) {
        if (f.step == slot.step) return &f;
      }
      return nullptr;
    };
    const memory::Keyframe* f = pick(transitions);
    if (f == nullptr) f = pick(intervals);
    if (f == nullptr && last.step == slot.step) f = &last;
    if (f != nullptr) res.keyframes.push_back(*f);
  }
  return res;
}

}  // namespace aor::loop
