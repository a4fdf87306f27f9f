#pragma once

#include "aor/render/camera.hpp"
#include "aor/render/render.hpp"
#include "aor/sim/world.hpp"
#include "aor/vision/vision.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace aor::loop {

/// The simulator or its transport failed; maps to exit code 3.
class BackendError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Observation {
  render::RgbdImage image;
  vision::Proprio proprio;
  /// Ground-truth position of the task's primary object, when exposed.
  std::optional<Vec3> primary_object;
  /// Largest displacement of a non-primary object from its reference pose.
  double secondary_displacement = 0.0;
};

struct EnvStep {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual Observation reset(std::uint64_t seed) = 0;
  virtual EnvStep step(const sim::Action& action) = 0;
  virtual const render::CameraModel& camera() const = 0;
  virtual const sim::TaskSpec& task() const = 0;
};

/// In-process kinematic simulator with the synthetic camera.
class BuiltinEnv : public Environment {
 public:
  explicit BuiltinEnv(sim::TaskId task, render::RenderOptions opts = {});

  Observation reset(std::uint64_t seed) override;
  EnvStep step(const sim::Action& action) override;
  const render::CameraModel& camera() const override { return cam_; }
  const sim::TaskSpec& task() const override { return task_; }
  const sim::WorldState& state() const { return state_; }

 private:
  sim::TaskSpec task_;
  render::CameraModel cam_;
  render::RenderOptions opts_;
  sim::WorldState state_;

  Observation observe() const;
};

/// Displacement of non-primary objects from the poses captured at attach time.
double secondary_displacement(const sim::TaskSpec& task, const sim::WorldState& state);

}  // namespace aor::loop
