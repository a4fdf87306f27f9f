#include "aor/loop/controllers.hpp"

#include <cstdio>

namespace aor::loop {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string flag(bool b) { return b ? "true" : "false"; }

memory::DiagnosisRecord diag(std::vector<std::string> tags, std::string reasoning, std::string strategy,
                             double confidence) {
  memory::DiagnosisRecord d;
  d.tags = std::move(tags);
  d.reasoning = std::move(reasoning);
  d.strategy = std::move(strategy);
  d.confidence = confidence;
  return d;
}

}  // namespace

std::string lift_controller(const LiftKnobs& k) {
  std::string s;
  s += "# Lift: hover over the cube, descend, close, raise.\n";
  s += "target cube { color = \"red\"; mode = \"largest\"; depth_bias = " + num(k.depth_bias) + "; }\n";
  s += "option ema_alpha = 0.4;\n\n";
  s += "const REST_Z = 0.82;      # cube centre when resting on the table\n";
  s += "const Z_TOL = 0.01;\n";
  s += "const HOVER = 0.08;\n";
  s += "const GRASP_DZ = 0.02;    # cube half height: close with the fingertips at the top face\n";
  s += "const LIFT_DZ = 0.12;\n";
  s += "const GAIN = 12.0;\n";
  s += "const REACH_TOL = 0.02;\n";
  s += "const MIN_AREA = " + std::to_string(k.min_area) + ";\n";
  s += "const CLOSE_STEPS = 12;\n";
  s += "const PRESS = " + num(k.press) + ";\n\n";
  s += R"(field phase = "reach";
field t = 0;
field goal = none;

fn enter(p) { phase = p; t = 0; }
fn toward(point, eef) { return (point - eef) * GAIN; }

fn reset() { phase = "reach"; t = 0; goal = none; }

fn get_action(f) {
  t = t + 1;
  if f.cube.detected and f.cube.area >= MIN_AREA { goal = f.cube.pos; }
  if goal == none { return [0, 0, 0, -1]; }
  if phase == "reach" {
    let hover = goal + [0, 0, HOVER];
    let d = toward(hover, f.eef);
    if dist_xy(f.eef, goal) < REACH_TOL and abs(f.eef.z - hover.z) < 0.02 and abs(goal.z - REST_Z) < Z_TOL {
      enter("descend");
    }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "descend" {
    let g = goal + [0, 0, GRASP_DZ];
    let d = toward(g, f.eef);
    if abs(f.eef.z - g.z) < 0.004 { enter("grasp"); }
    if t > 150 { enter("reach"); }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "grasp" {
    if t >= CLOSE_STEPS { enter("lift"); }
    return [0, 0, -PRESS, 1];
  }
  if phase == "lift" {
    let l = goal + [0, 0, LIFT_DZ];
    let d = toward(l, f.eef);
    return [d.x, d.y, d.z, 1];
  }
  return [0, 0, 0, -1];
}
)";
  return s;
}

std::string pickplace_controller(const PickPlaceKnobs& k) {
  std::string s;
  s += "# PickPlaceCan: grasp the can from above, carry it over the bin, let go.\n";
  s += "target can { color = \"" + k.color + "\"; mode = \"" + k.mode +
       "\"; depth_bias = 0.008; surface_offset = 0.04; }\n";
  s += R"(option ema_alpha = 0.4;

const REST_Z = 0.85;        # can centre when standing on the table
const Z_TOL = 0.02;
const HOVER = 0.10;
const GRASP_DZ = 0.055;
const CARRY_Z = 1.02;
const BIN = [0, 0.20];
const RELEASE_Z = 0.92;
const GAIN = 12.0;
const REACH_TOL = 0.015;
const MIN_AREA = 300;
const CLOSE_STEPS = 14;
const OPEN_STEPS = 10;

field phase = "reach";
field t = 0;
field goal = none;

fn enter(p) { phase = p; t = 0; }
fn toward(point, eef) { return (point - eef) * GAIN; }

fn reset() { phase = "reach"; t = 0; goal = none; }

fn get_action(f) {
  t = t + 1;
  if goal == none and f.can.detected and f.can.area >= MIN_AREA { goal = f.can.pos; }
  if goal == none { return [0, 0, 0, -1]; }
  if phase == "reach" {
    let hover = goal + [0, 0, HOVER];
    let d = toward(hover, f.eef);
    if dist_xy(f.eef, goal) < REACH_TOL and abs(f.eef.z - hover.z) < 0.02 and abs(goal.z - REST_Z) < Z_TOL {
      enter("descend");
    }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "descend" {
    let g = goal + [0, 0, GRASP_DZ];
    let d = toward(g, f.eef);
    if abs(f.eef.z - g.z) < 0.004 { enter("grasp"); }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "grasp" {
    if t >= CLOSE_STEPS { enter("lift"); }
    return [0, 0, 0, 1];
  }
  if phase == "lift" {
    let l = [f.eef.x, f.eef.y, CARRY_Z];
    let d = toward(l, f.eef);
    if abs(f.eef.z - CARRY_Z) < 0.01 { enter("carry"); }
    return [d.x, d.y, d.z, 1];
  }
  if phase == "carry" {
    let c = [BIN[0], BIN[1], CARRY_Z];
    let d = toward(c, f.eef);
    if dist_xy(f.eef, c) < 0.01 { enter("lower"); }
    return [d.x, d.y, d.z, 1];
  }
  if phase == "lower" {
    let c = [BIN[0], BIN[1], RELEASE_Z];
    let d = toward(c, f.eef);
    if abs(f.eef.z - c.z) < 0.005 { enter("release"); }
    return [d.x, d.y, d.z, 1];
  }
  if phase == "release" {
    if t >= OPEN_STEPS { enter("retreat"); }
    return [0, 0, 0, -1];
  }
  return [0, 0, 1, -1];
}
)";
  return s;
}

std::string stack_controller(const StackKnobs& k) {
  const std::string calib = k.per_cube_offsets ? "depth_bias = 0.003; surface_offset = 0.02;"
                                               : "depth_bias = " + num(k.depth_bias) + ";";
  std::string s;
  s += "# Stack: pick the red cube and set it on the green one.\n";
  s += "target cubeA { color = \"red\"; mode = \"largest\"; " + calib + " }\n";
  s += "target cubeB { color = \"green\"; mode = \"largest\"; " + calib + " }\n";
  s += "option ema_alpha = 0.4;\n";
  s += std::string("option backproject = \"") + (k.cv_backproject ? "cv" : "gl") + "\";\n";
  s += std::string("option extrinsic = \"") + (k.cv_extrinsic ? "cv_axis" : "direct") + "\";\n\n";
  s += R"(const REST_Z = 0.82;
const Z_TOL = 0.01;
const HOVER = 0.08;
const GRASP_DZ = 0.02;
const CARRY_Z = 0.98;
const PLACE_DZ = 0.061;     # eef above cubeB centre at release: half + full cube + 1 mm
const GAIN = 12.0;
const REACH_TOL = 0.015;
const MIN_AREA = 100;
const CLOSE_STEPS = 12;
const MAX_TRIES = 3;
)";
  s += "const RAMP = " + flag(k.ramp) + ";        # rise to carry height before moving sideways\n";
  s += "const RETRY = " + flag(k.retry) + ";       # reopen and re-approach when the jaw closes on nothing\n";
  s += "const FREEZE_B = " + flag(k.freeze_b) + ";    # stop refreshing the cubeB estimate once placing starts\n\n";
  s += R"(field phase = "reach";
field t = 0;
field a_goal = none;
field b_goal = none;
field tries = 0;

fn enter(p) { phase = p; t = 0; }
fn toward(point, eef) { return (point - eef) * GAIN; }
fn placing() { return phase == "place" or phase == "release"; }

fn reset() { phase = "reach"; t = 0; a_goal = none; b_goal = none; tries = 0; }

fn get_action(f) {
  t = t + 1;
  if a_goal == none and f.cubeA.detected and f.cubeA.area >= MIN_AREA { a_goal = f.cubeA.pos; }
  if f.cubeB.detected and f.cubeB.area >= MIN_AREA {
    if b_goal == none or not FREEZE_B or not placing() { b_goal = f.cubeB.pos; }
  }
  if a_goal == none or b_goal == none { return [0, 0, 0, -1]; }
  if phase == "reach" {
    let hover = a_goal + [0, 0, HOVER];
    let d = toward(hover, f.eef);
    if dist_xy(f.eef, a_goal) < REACH_TOL and abs(f.eef.z - hover.z) < 0.02 and abs(a_goal.z - REST_Z) < Z_TOL {
      enter("descend");
    }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "descend" {
    let g = a_goal + [0, 0, GRASP_DZ];
    let d = toward(g, f.eef);
    if abs(f.eef.z - g.z) < 0.004 { enter("grasp"); }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "grasp" {
    if t >= CLOSE_STEPS {
      if f.aperture < 0.02 and RETRY and tries < MAX_TRIES {
        tries = tries + 1;
        a_goal = none;
        enter("recover");
      } else {
        enter("lift");
      }
    }
    return [0, 0, 0, 1];
  }
  if phase == "recover" {
    let up = [f.eef.x, f.eef.y, CARRY_Z];
    let d = toward(up, f.eef);
    if abs(f.eef.z - CARRY_Z) < 0.01 { enter("reach"); }
    return [d.x, d.y, d.z, -1];
  }
  if phase == "lift" {
    if not RAMP {
      enter("place");
      return [0, 0, 0, 1];
    }
    let up = [f.eef.x, f.eef.y, CARRY_Z];
    let d = toward(up, f.eef);
    if abs(f.eef.z - CARRY_Z) < 0.01 { enter("carry"); }
    return [d.x, d.y, d.z, 1];
  }
  if phase == "carry" {
    let c = [b_goal.x, b_goal.y, CARRY_Z];
    let d = toward(c, f.eef);
    if dist_xy(f.eef, c) < 0.005 { enter("place"); }
    return [d.x, d.y, d.z, 1];
  }
  if phase == "place" {
    let p = b_goal + [0, 0, PLACE_DZ];
    let d = toward(p, f.eef);
    if abs(f.eef.z - p.z) < 0.003 and dist_xy(f.eef, p) < 0.004 { enter("release"); }
    return [d.x, d.y, d.z, 1];
  }
  return [0, 0, 0, -1];
}
)";
  return s;
}

std::string default_controller(sim::TaskId task) {
  switch (task) {
    case sim::TaskId::Lift: return lift_controller({});
    case sim::TaskId::PickPlace: return pickplace_controller({});
    case sim::TaskId::Stack: return stack_controller({});
  }
  return lift_controller({});
}

std::vector<ScriptedRewrite> rewrite_script(sim::TaskId task) {
  std::vector<ScriptedRewrite> out;
  switch (task) {
    case sim::TaskId::Lift: {
      LiftKnobs k;
      k.depth_bias = 0.02;
      out.push_back({diag({"misalignment", "vision_bias"},
                          "The arm hovers near the cube but never starts descending. The cube estimate sits about "
                          "2 cm below where a cube resting on the table should be, so the height check that gates "
                          "the descent never passes.",
                          "Add a 2 cm depth-bias correction to the cube target.", 0.72),
                     lift_controller(k)});
      k.press = 0.0;
      out.push_back({diag({"grasp_failure", "contact"},
                          "Reach and descent now complete, but the cube is knocked sideways as the jaw closes. The "
                          "controller keeps pushing down while closing.",
                          "Hold the arm still while the gripper closes.", 0.8),
                     lift_controller(k)});
      k.min_area = 120;
      out.push_back({diag({"perception", "detection_threshold"},
                          "On this layout the cube never counts as a trusted detection: its blob is a little smaller "
                          "than the area threshold, so no goal is ever set and the arm waits in reach.",
                          "Lower the trusted blob area from 180 to 120 px.", 0.75),
                     lift_controller(k)});
      break;
    }
    case sim::TaskId::PickPlace: {
      PickPlaceKnobs k;
      k.color = "red";
      out.push_back({diag({"perception", "segmentation"},
                          "The can target never registers a detection. The colour filter looks for a grey metallic "
                          "surface, but the can renders saturated red.",
                          "Segment the can with the red hue preset.", 0.85),
                     pickplace_controller(k)});
      k.mode = "largest";
      out.push_back({diag({"perception", "vision_bias", "distractor"},
                          "The can is detected but its estimated position lies on the table between the can and a "
                          "small red marker inside the bin. Averaging every red pixel mixes the two objects.",
                          "Target the largest connected red component instead of the mean of all red pixels.", 0.8),
                     pickplace_controller(k)});
      break;
    }
    case sim::TaskId::Stack: {
      StackKnobs k;
      k.cv_backproject = false;
      out.push_back({diag({"perception", "coordinate_frame"},
                          "Both cube estimates land far from the scene and the arm drives into the workspace limit. "
                          "The pixel row is flipped relative to the renderer's image origin.",
                          "Back-project with the renderer's row convention.", 0.6),
                     stack_controller(k)});
      k.cv_extrinsic = false;
      out.push_back({diag({"perception", "coordinate_frame"},
                          "Estimates still fall outside the table. The camera-to-world transform is applied as if "
                          "the camera looked down +z, which mirrors the depth axis.",
                          "Use the camera pose directly as the camera-to-world transform.", 0.6),
                     stack_controller(k)});
      k.depth_bias = 0.02;
      out.push_back({diag({"misalignment", "vision_bias"},
                          "The arm hovers above cubeA but never descends: the estimate sits about 2 cm below a "
                          "resting cube, so the height check fails.",
                          "Add a 2 cm depth-bias correction to both cube targets.", 0.7),
                     stack_controller(k)});
      k.ramp = true;
      out.push_back({diag({"collision", "cubeB-contact"},
                          "The grasp works, but the arm swings straight from the grasp height toward cubeB and the "
                          "fingers sweep it several centimetres across the table.",
                          "Rise to a carry height first, move over cubeB, then lower.", 0.7),
                     stack_controller(k)});
      k.retry = true;
      out.push_back({diag({"cubeB-contact", "grasp_failure"},
                          "cubeB still shifts during the place by about 2 cm. A missed grasp would also strand the "
                          "run, since nothing checks that the jaw actually holds the cube.",
                          "Reopen and re-approach when the jaw closes on nothing.", 0.5),
                     stack_controller(k)});
      k.per_cube_offsets = true;
      out.push_back({diag({"cubeB-contact", "vision_bias"},
                          "A finger lands on cubeB during the place. Both cube estimates are biased about 1 cm "
                          "toward the camera, and a flat z correction does not remove the lateral part.",
                          "Correct depth along the viewing ray for each cube before back-projection.", 0.65),
                     stack_controller(k)});
      k.freeze_b = true;
      out.push_back({diag({"cubeB-contact", "occlusion"},
                          "cubeB is nudged close to the 1 cm limit while cubeA comes down on it. Its estimate keeps "
                          "updating while the held cube blocks part of it.",
                          "Freeze the cubeB estimate when the place phase begins.", 0.55),
                     stack_controller(k)});
      break;
    }
  }
  return out;
}

std::string format_response(const memory::DiagnosisRecord& diagnosis, const std::string& source) {
  nlohmann::json d = memory::to_json(diagnosis);
  d.erase("produced_version");
  std::string out;
  out += "```diagnosis\n" + d.dump(2) + "\n```\n\n";
  out += "```controller\n" + source;
  if (!source.empty() && source.back() != '\n') out += "\n";
  out += "```\n";
  return out;
}

std::string mock_rewriter(sim::TaskId task, int iteration, const memory::History&) {
  const auto script = rewrite_script(task);
  const std::size_t i = static_cast<std::size_t>(std::max(iteration, 1)) - 1;
  const auto& step = script[std::min(i, script.size() - 1)];
  return format_response(step.diagnosis, step.source);
}

}  // namespace aor::loop
