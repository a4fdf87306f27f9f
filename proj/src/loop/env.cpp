#include "aor/loop/env.hpp"

#include <algorithm>

namespace aor::loop {

double secondary_displacement(const sim::TaskSpec& task, const sim::WorldState& state) {
  const std::size_t primary = sim::primary_index(task, state);
  double worst = 0.0;
  for (std::size_t i = 0; i < state.objects.size() && i < state.reference_poses.size(); ++i) {
    if (i == primary) continue;
    worst = std::max(worst, (state.objects[i].pose - state.reference_poses[i]).norm());
  }
  return worst;
}

BuiltinEnv::BuiltinEnv(sim::TaskId task, render::RenderOptions opts)
    : task_(sim::make_task(task)), cam_(render::default_camera()), opts_(opts) {}

Observation BuiltinEnv::observe() const {
  Observation obs;
  obs.image = render::render(state_, cam_, opts_);
  obs.proprio.eef_pos = state_.eef_pos;
  obs.proprio.gripper_aperture = state_.gripper_aperture;
  obs.proprio.step = state_.step;
  obs.primary_object = state_.objects[sim::primary_index(task_, state_)].pose;
  obs.secondary_displacement = secondary_displacement(task_, state_);
  return obs;
}

Observation BuiltinEnv::reset(std::uint64_t seed) {
  state_ = sim::reset(task_, seed);
  return observe();
}

EnvStep BuiltinEnv::step(const sim::Action& action) {
  sim::StepResult r;
  try {
    r = sim::step(task_, state_, action);
  } catch (const sim::StepError& e) {
    throw BackendError(e.what());
  }
  state_ = std::move(r.state);
  EnvStep out;
  out.obs = observe();
  out.reward = r.reward;
  out.done = r.done;
  out.success = r.info.success;
  return out;
}

}  // namespace aor::loop
