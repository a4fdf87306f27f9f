#include "aor/sim/world.hpp"

#include "aor/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aor::sim {

namespace c = constants;

std::string_view to_string(ColorClass col) {
  switch (col) {
    case ColorClass::Red: return "red";
    case ColorClass::Green: return "green";
    case ColorClass::DecoyRedMarker: return "decoy-red-marker";
    case ColorClass::Neutral: return "neutral";
  }
  return "neutral";
}

std::string_view to_string(TaskId t) {
  switch (t) {
    case TaskId::Lift: return "lift";
    case TaskId::PickPlace: return "pickplace";
    case TaskId::Stack: return "stack";
  }
  return "lift";
}

TaskId parse_task_id(std::string_view name) {
  if (name == "lift") return TaskId::Lift;
  if (name == "pickplace") return TaskId::PickPlace;
  if (name == "stack") return TaskId::Stack;
  throw ConfigError("unknown task id '" + std::string(name) + "'");
}

Aabb bounds(const ObjectState& o) {
  return Aabb{o.pose - o.half_extents, o.pose + o.half_extents};
}

const ObjectState* WorldState::find(std::string_view id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

std::optional<std::size_t> WorldState::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].id == id) return i;
  }
  return std::nullopt;
}

bool Action::finite() const {
  return std::isfinite(delta.x()) && std::isfinite(delta.y()) &&
         std::isfinite(delta.z()) && std::isfinite(grip);
}

TaskSpec make_task(TaskId id) {
  TaskSpec t;
  t.task_id = id;
  switch (id) {
    case TaskId::Lift:
      t.episode_step_budget = 500;
      t.primary_object = "cube";
      t.randomization_ranges = {{"cube", {-0.08, 0.08, -0.08, 0.08}}};
      break;
    case TaskId::PickPlace:
      t.episode_step_budget = 1000;
      t.primary_object = "can";
      t.randomization_ranges = {{"can", {-0.10, 0.10, -0.24, -0.14}}};
      break;
    case TaskId::Stack:
      t.episode_step_budget = 700;
      t.primary_object = "cubeA";
      t.randomization_ranges = {{"cubeA", {-0.08, 0.08, -0.15, -0.05}},
                                {"cubeB", {-0.08, 0.08, 0.05, 0.15}}};
      break;
  }
  return t;
}

namespace {

ObjectState cube(std::string id, ColorClass col) {
  return ObjectState{std::move(id), Shape::Box, Vec3::Constant(c::kCubeHalf), Vec3::Zero(),
                     col};
}

std::vector<ObjectState> scene_objects(TaskId id) {
  switch (id) {
    case TaskId::Lift:
      return {cube("cube", ColorClass::Red)};
    case TaskId::PickPlace: {
      ObjectState can{"can", Shape::Cylinder,
                      Vec3(c::kCanRadius, c::kCanRadius, c::kCanHalfHeight), Vec3::Zero(),
                      ColorClass::Red};
      ObjectState bin{"bin", Shape::Box,
                      Vec3(c::kBinHalf, c::kBinHalf, c::kBinHalfThickness),
                      Vec3(0.0, c::kBinCenterY, 0.0), ColorClass::Neutral};
      ObjectState marker{"marker", Shape::Box,
                         Vec3(c::kMarkerHalf, c::kMarkerHalf, c::kMarkerHalfThickness),
                         Vec3(0.05, c::kBinCenterY + 0.05, 0.0), ColorClass::DecoyRedMarker};
      return {can, bin, marker};
    }
    case TaskId::Stack:
      return {cube("cubeA", ColorClass::Red), cube("cubeB", ColorClass::Green)};
  }
  return {};
}

bool footprints_overlap(const ObjectState& a, const ObjectState& b) {
  return std::abs(a.pose.x() - b.pose.x()) < a.half_extents.x() + b.half_extents.x() &&
         std::abs(a.pose.y() - b.pose.y()) < a.half_extents.y() + b.half_extents.y();
}

double horizontal_distance(const Vec3& a, const Vec3& b) {
  return std::hypot(a.x() - b.x(), a.y() - b.y());
}

bool graspable(const ObjectState& o) {
  return (o.color_class == ColorClass::Red || o.color_class == ColorClass::Green) &&
         2.0 * o.half_extents.x() <= c::kApertureMax;
}

bool in_grasp_band(const Vec3& eef, const ObjectState& o) {
  return std::abs(eef.x() - o.pose.x()) <= o.half_extents.x() + c::kGraspXySlack &&
         std::abs(eef.y() - o.pose.y()) <= o.half_extents.y() + c::kGraspXySlack &&
         eef.z() >= o.top() - c::kGraspBelowTop && eef.z() <= o.top() + c::kGraspAboveTop;
}

Vec3 clip_to_workspace(Vec3 p, double table_top_z) {
  p.x() = std::clamp(p.x(), -c::kWorkspaceHalfXy, c::kWorkspaceHalfXy);
  p.y() = std::clamp(p.y(), -c::kWorkspaceHalfXy, c::kWorkspaceHalfXy);
  p.z() = std::clamp(p.z(), table_top_z, table_top_z + c::kWorkspaceHeight);
  return p;
}

std::optional<double> goal_distance(const TaskSpec& task, const WorldState& s) {
  if (task.task_id == TaskId::Lift) return std::nullopt;
  const auto& p = s.objects[primary_index(task, s)];
  return (p.pose - goal_position(task, s)).norm();
}

}  // namespace

std::size_t primary_index(const TaskSpec& task, const WorldState& state) {
  auto idx = state.index_of(task.primary_object);
  if (!idx) throw ConfigError("primary object '" + task.primary_object + "' missing");
  return *idx;
}

Vec3 goal_position(const TaskSpec& task, const WorldState& s) {
  const auto& p = s.objects[primary_index(task, s)];
  switch (task.task_id) {
    case TaskId::Lift:
      return Vec3(p.pose.x(), p.pose.y(), s.table_top_z + p.half_extents.z() + c::kLiftHeight);
    case TaskId::PickPlace: {
      const auto* bin = s.find("bin");
      return Vec3(bin->pose.x(), bin->pose.y(), bin->top() + p.half_extents.z());
    }
    case TaskId::Stack: {
      const auto* b = s.find("cubeB");
      return Vec3(b->pose.x(), b->pose.y(), b->top() + p.half_extents.z());
    }
  }
  return p.pose;
}

std::array<Aabb, 2> finger_slabs(const Vec3& eef, double aperture) {
  const double inner = aperture / 2.0;
  const double outer = inner + c::kFingerWidth;
  const double z_lo = eef.z() - c::kFingerLength;
  const double z_hi = eef.z();
  const double y_lo = eef.y() - c::kFingerHalfDepth;
  const double y_hi = eef.y() + c::kFingerHalfDepth;
  return {Aabb{Vec3(eef.x() - outer, y_lo, z_lo), Vec3(eef.x() - inner, y_hi, z_hi)},
          Aabb{Vec3(eef.x() + inner, y_lo, z_lo), Vec3(eef.x() + outer, y_hi, z_hi)}};
}

void settle(WorldState& state) {
  std::vector<std::size_t> order(state.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return state.objects[a].bottom() < state.objects[b].bottom();
  });
  std::vector<std::size_t> settled;
  for (std::size_t i : order) {
    if (state.attached_object == i) continue;
    auto& o = state.objects[i];
    double support = state.table_top_z;
    for (std::size_t j : settled) {
      const auto& s = state.objects[j];
      if (footprints_overlap(o, s) && s.top() <= o.pose.z() + 1e-12) {
        support = std::max(support, s.top());
      }
    }
    o.pose.z() = support + o.half_extents.z();
    settled.push_back(i);
  }
}

WorldState reset(const TaskSpec& task, std::uint64_t seed) {
  WorldState s;
  s.objects = scene_objects(task.task_id);
  if (s.objects.empty()) throw ConfigError("task has no scene");
  CounterRng rng(seed);
  for (const auto& [id, r] : task.randomization_ranges) {
    auto idx = s.index_of(id);
    if (!idx) throw ConfigError("randomization range for unknown object '" + id + "'");
    s.objects[*idx].pose.x() = rng.uniform(r.x_lo, r.x_hi);
    s.objects[*idx].pose.y() = rng.uniform(r.y_lo, r.y_hi);
  }
  // Flat objects start lowest so they end up beneath anything sharing their footprint.
  for (auto& o : s.objects) {
    o.pose.z() = o.half_extents.z() < 0.01 ? 1.0 + o.half_extents.z() : 2.0 + o.half_extents.z();
  }
  settle(s);
  s.eef_pos = Vec3(0.0, 0.0, s.table_top_z + c::kHomeHeight);
  s.gripper_aperture = c::kApertureMax;
  s.gripper_closing = false;
  s.step = 0;
  for (const auto& o : s.objects) s.reference_poses.push_back(o.pose);
  s.initial_goal_distance = goal_distance(task, s).value_or(0.0);
  return s;
}

StepResult step(const TaskSpec& task, const WorldState& state, const Action& action) {
  if (!action.finite()) throw StepError("non-finite action component");
  StepResult out{state, 0.0, false, {}};
  WorldState& s = out.state;
  StepInfo& info = out.info;

  const Vec3 commanded = action.delta * c::kDeltaScale;
  s.eef_pos = clip_to_workspace(s.eef_pos + commanded, s.table_top_z);

  const bool closing = action.grip >= 0.0;
  if (closing && !state.gripper_closing) {
    s.grasp_resolved = false;
    s.closure_max_descent = 0.0;
  }
  s.gripper_closing = closing;

  if (!closing && s.attached_object) {
    s.attached_object.reset();
    info.grasp_event = GraspEvent::Released;
  }

  if (closing) {
    if (!s.attached_object) {
      s.gripper_aperture = std::max(0.0, s.gripper_aperture - c::kApertureRate);
    }
    if (!s.grasp_resolved) {
      s.closure_max_descent = std::max(s.closure_max_descent, -commanded.z());
    }
  } else {
    s.gripper_aperture = std::min(c::kApertureMax, s.gripper_aperture + c::kApertureRate);
  }

  if (closing && !s.grasp_resolved && !s.attached_object) {
    std::optional<std::size_t> candidate;
    double best = 0.0;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto& o = s.objects[i];
      if (!graspable(o) || !in_grasp_band(s.eef_pos, o)) continue;
      const double d = horizontal_distance(s.eef_pos, o.pose);
      if (!candidate || d < best) {
        candidate = i;
        best = d;
      }
    }
    if (candidate) {
      auto& o = s.objects[*candidate];
      const double width = 2.0 * o.half_extents.x();
      if (s.gripper_aperture <= width) {
        s.grasp_resolved = true;
        if (s.closure_max_descent <= c::kMaxClosureDescent) {
          s.gripper_aperture = width;
          o.pose.x() = s.eef_pos.x();
          s.attach_offset = o.pose - s.eef_pos;
          s.attached_object = *candidate;
          info.grasp_event = GraspEvent::Attached;
          if (*candidate == primary_index(task, s)) {
            s.reference_poses.clear();
            for (const auto& obj : s.objects) s.reference_poses.push_back(obj.pose);
          }
        } else {
          Eigen::Vector2d dir(o.pose.x() - s.eef_pos.x(), o.pose.y() - s.eef_pos.y());
          if (dir.norm() < 1e-9) dir = Eigen::Vector2d(0.0, 1.0);
          dir.normalize();
          o.pose.x() += dir.x() * c::kDestabilizePush;
          o.pose.y() += dir.y() * c::kDestabilizePush;
          info.grasp_event = GraspEvent::Destabilized;
        }
      }
    } else if (s.gripper_aperture <= 0.0) {
      s.grasp_resolved = true;
    }
  }

  if (s.attached_object) {
    s.objects[*s.attached_object].pose = s.eef_pos + s.attach_offset;
  }

  const auto slabs = finger_slabs(s.eef_pos, s.gripper_aperture);
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (s.attached_object == i) continue;
    auto& o = s.objects[i];
    const Aabb box = bounds(o);
    const bool hit0 = slabs[0].intersects(box);
    const bool hit1 = slabs[1].intersects(box);
    if (hit0 == hit1) continue;  // untouched, or squeezed between both fingers
    const Aabb& slab = hit0 ? slabs[0] : slabs[1];
    const Vec3 slab_center = (slab.lo + slab.hi) / 2.0;
    auto push_along = [&](int axis) {
      return o.pose[axis] >= slab_center[axis] ? slab.hi[axis] - box.lo[axis]
                                               : -(box.hi[axis] - slab.lo[axis]);
    };
    const double px = push_along(0);
    const double py = push_along(1);
    const double push = std::min(std::abs(px), std::abs(py));
    if (std::abs(px) <= std::abs(py)) {
      o.pose.x() += px;
    } else {
      o.pose.y() += py;
    }
    if (push > info.contact_displacement) {
      info.contact_displacement = push;
      info.contacted_object = o.id;
    }
  }
  settle(s);

  const std::size_t primary = primary_index(task, s);
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (i == primary || i >= s.reference_poses.size()) continue;
    info.secondary_displacement = std::max(
        info.secondary_displacement, (s.objects[i].pose - s.reference_poses[i]).norm());
  }

  s.step = state.step + 1;
  info.success = check_success(task, s);
  out.reward = shaped_reward(task, s);
  out.done = info.success || s.step >= task.episode_step_budget;
  return out;
}

bool check_success(const TaskSpec& task, const WorldState& s) {
  const std::size_t pi = primary_index(task, s);
  const auto& p = s.objects[pi];
  const bool attached = s.attached_object == pi;
  switch (task.task_id) {
    case TaskId::Lift:
      return attached && p.pose.z() >= s.table_top_z + c::kLiftHeight;
    case TaskId::PickPlace: {
      const auto* bin = s.find("bin");
      if (attached || bin == nullptr) return false;
      const bool inside = std::abs(p.pose.x() - bin->pose.x()) <= bin->half_extents.x() &&
                          std::abs(p.pose.y() - bin->pose.y()) <= bin->half_extents.y();
      const bool resting = std::abs(p.bottom() - bin->top()) <= c::kStackGap;
      return inside && resting;
    }
    case TaskId::Stack: {
      const auto bi = s.index_of("cubeB");
      if (attached || !bi) return false;
      const auto& b = s.objects[*bi];
      const double offset = horizontal_distance(p.pose, b.pose);
      const double gap = p.bottom() - b.top();
      const Vec3 ref = *bi < s.reference_poses.size() ? s.reference_poses[*bi] : b.pose;
      return offset <= task.placement_tolerance && gap >= -1e-9 && gap <= c::kStackGap &&
             (b.pose - ref).norm() < c::kStackSupportDrift;
    }
  }
  return false;
}

double shaped_reward(const TaskSpec& task, const WorldState& s) {
  if (check_success(task, s)) return 1.0;
  const std::size_t pi = primary_index(task, s);
  const auto& p = s.objects[pi];
  const Vec3 grasp_site(p.pose.x(), p.pose.y(), p.top());
  const double reach = (s.eef_pos - grasp_site).norm();
  const bool attached = s.attached_object == pi;
  double progress = 0.0;
  if (task.task_id == TaskId::Lift) {
    const double rest = s.table_top_z + p.half_extents.z();
    progress = std::clamp((p.pose.z() - rest) / c::kLiftHeight, 0.0, 1.0);
  } else if (s.initial_goal_distance > 0.0) {
    const double d = (p.pose - goal_position(task, s)).norm();
    progress = std::clamp(1.0 - d / s.initial_goal_distance, 0.0, 1.0);
  }
  const auto& w = task.reward;
  const double r = w.reach * (1.0 - std::tanh(10.0 * reach)) + w.attached * (attached ? 1.0 : 0.0) +
                   w.progress * progress;
  return std::clamp(r, 0.0, std::nextafter(1.0, 0.0));
}

}  // namespace aor::sim
