#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aor {

using Vec3 = Eigen::Vector3d;

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace sim {

class StepError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Shape { Box, Cylinder };
enum class ColorClass { Red, Green, DecoyRedMarker, Neutral };

std::string_view to_string(ColorClass c);

struct ObjectState {
  std::string id;
  Shape shape = Shape::Box;
  /// Box: half extents. Cylinder: (radius, radius, half height).
  Vec3 half_extents = Vec3::Constant(0.02);
  /// Center of the object.
  Vec3 pose = Vec3::Zero();
  ColorClass color_class = ColorClass::Neutral;

  double top() const { return pose.z() + half_extents.z(); }
  double bottom() const { return pose.z() - half_extents.z(); }
};

/// Axis-aligned box, used for finger slabs and object footprints.
struct Aabb {
  Vec3 lo;
  Vec3 hi;

  bool intersects(const Aabb& o) const {
    return lo.x() < o.hi.x() && o.lo.x() < hi.x() && lo.y() < o.hi.y() &&
           o.lo.y() < hi.y() && lo.z() < o.hi.z() && o.lo.z() < hi.z();
  }
};

Aabb bounds(const ObjectState& o);

struct WorldState {
  std::int64_t step = 0;
  Vec3 eef_pos = Vec3::Zero();
  double gripper_aperture = 0.08;
  bool gripper_closing = false;
  std::vector<ObjectState> objects;
  std::optional<std::size_t> attached_object;
  double table_top_z = 0.8;

  // Grasp bookkeeping for the current closure.
  bool grasp_resolved = false;
  double closure_max_descent = 0.0;
  Vec3 attach_offset = Vec3::Zero();
  /// Per-object poses captured when the primary object was last attached
  /// (initial poses before that). Stack judges cubeB displacement against it.
  std::vector<Vec3> reference_poses;
  /// Primary-object distance to goal at reset; normalizes the progress term.
  double initial_goal_distance = 0.0;

  const ObjectState* find(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;
};

enum class TaskId { Lift, PickPlace, Stack };

std::string_view to_string(TaskId t);
/// Throws ConfigError for unknown names.
TaskId parse_task_id(std::string_view name);

struct XyRange {
  double x_lo, x_hi, y_lo, y_hi;
};

struct RewardWeights {
  double reach = 0.25;
  double attached = 0.25;
  double progress = 0.5;
};

struct TaskSpec {
  TaskId task_id = TaskId::Lift;
  std::int64_t episode_step_budget = 500;
  double placement_tolerance = 0.02;
  /// Keyed by object id; objects not listed are placed at fixed poses.
  std::vector<std::pair<std::string, XyRange>> randomization_ranges;
  RewardWeights reward;
  /// Object the controller manipulates (the "primary" object).
  std::string primary_object;
};

/// Canonical task definitions (budgets lift 500, pickplace 1000, stack 700).
TaskSpec make_task(TaskId id);

struct Action {
  Vec3 delta = Vec3::Zero();
  double grip = -1.0;

  static Action zero() { return Action{Vec3::Zero(), 0.0}; }
  bool finite() const;
};

enum class GraspEvent { None, Attached, Destabilized, Released };

struct StepInfo {
  bool success = false;
  GraspEvent grasp_event = GraspEvent::None;
  /// Largest horizontal push applied by finger contact this step.
  double contact_displacement = 0.0;
  /// Largest displacement of any non-primary object from its reference pose.
  double secondary_displacement = 0.0;
  std::optional<std::string> contacted_object;
};

struct StepResult {
  WorldState state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

namespace constants {
inline constexpr double kDeltaScale = 0.01;
inline constexpr double kApertureMax = 0.08;
inline constexpr double kApertureRate = 0.01;
inline constexpr double kWorkspaceHalfXy = 0.40;
inline constexpr double kWorkspaceHeight = 0.50;
inline constexpr double kHomeHeight = 0.25;
inline constexpr double kFingerWidth = 0.01;
inline constexpr double kFingerHalfDepth = 0.01;
inline constexpr double kFingerLength = 0.045;
inline constexpr double kGraspXySlack = 0.005;
inline constexpr double kGraspBelowTop = 0.005;
inline constexpr double kGraspAboveTop = 0.015;
inline constexpr double kMaxClosureDescent = 0.001;
inline constexpr double kDestabilizePush = 0.02;
inline constexpr double kCubeHalf = 0.02;
inline constexpr double kCanRadius = 0.025;
inline constexpr double kCanHalfHeight = 0.05;
inline constexpr double kBinHalf = 0.10;
inline constexpr double kBinHalfThickness = 0.005;
inline constexpr double kMarkerHalf = 0.0105;
inline constexpr double kMarkerHalfThickness = 0.001;
inline constexpr double kBinCenterY = 0.20;
inline constexpr double kLiftHeight = 0.04;
inline constexpr double kStackGap = 0.005;
inline constexpr double kStackSupportDrift = 0.01;
}  // namespace constants

WorldState reset(const TaskSpec& task, std::uint64_t seed);

/// Pure transition. Throws StepError on non-finite action components.
StepResult step(const TaskSpec& task, const WorldState& state, const Action& action);

bool check_success(const TaskSpec& task, const WorldState& state);

double shaped_reward(const TaskSpec& task, const WorldState& state);

/// Two slabs flanking the aperture, extending kFingerLength below the eef.
std::array<Aabb, 2> finger_slabs(const Vec3& eef, double aperture);

/// Drops every non-attached object onto the highest support beneath it.
void settle(WorldState& state);

/// Index of the primary object in state.objects.
std::size_t primary_index(const TaskSpec& task, const WorldState& state);

/// Position the task drives the primary object toward (bin center, cubeB top).
Vec3 goal_position(const TaskSpec& task, const WorldState& state);

}  // namespace sim
}  // namespace aor
