#include "aor/ctl/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace aor::ctl {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Initial: return "initial";
    case Provenance::MockRewriter: return "mock-rewriter";
    case Provenance::Llm: return "llm";
  }
  return "initial";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "initial") return Provenance::Initial;
  if (s == "mock-rewriter") return Provenance::MockRewriter;
  if (s == "llm") return Provenance::Llm;
  throw ConfigError("unknown provenance '" + std::string(s) + "'");
}

std::string_view to_string(ValidationStage s) {
  switch (s) {
    case ValidationStage::Parse: return "parse";
    case ValidationStage::Interface: return "interface";
    case ValidationStage::Instantiate: return "instantiate";
    case ValidationStage::DryRun: return "dry-run";
    case ValidationStage::OutputShape: return "output-shape";
  }
  return "parse";
}

namespace {

constexpr std::size_t kMaxTargets = 8;
const std::set<std::string, std::less<>> kReservedFeatureNames = {"step", "eef", "aperture"};

double want_number(const Value& v, const std::string& what) {
  if (!v.is_num()) throw ConfigError(what + " must be a number");
  return v.num();
}

std::string want_string(const Value& v, const std::string& what) {
  if (!v.is_str()) throw ConfigError(what + " must be a string");
  return v.str();
}

vision::TargetSpec target_spec(const TargetDecl& decl) {
  vision::TargetSpec t;
  t.name = decl.name;
  if (kReservedFeatureNames.count(decl.name)) {
    throw ConfigError("target name '" + decl.name + "' collides with a feature field");
  }
  bool has_color = false;
  std::set<std::string> seen;
  for (const auto& [key, value] : decl.settings) {
    if (!seen.insert(key).second) throw ConfigError("target " + decl.name + ": duplicate key '" + key + "'");
  }
  for (const auto& [key, value] : decl.settings) {
    if (key == "color") {
      t.color = vision::ColorSpec::preset(want_string(value, "color"));
      has_color = true;
    }
  }
  for (const auto& [key, value] : decl.settings) {
    const std::string what = "target " + decl.name + ": " + key;
    if (key == "color") continue;
    if (key == "hue") {
      if (!value.is_vec() || value.vec().empty() || value.vec().size() % 2 != 0) {
        throw ConfigError(what + " must list [lo, hi] pairs");
      }
      t.color.hue.clear();
      for (std::size_t i = 0; i < value.vec().size(); i += 2) {
        t.color.hue.push_back({value.vec()[i], value.vec()[i + 1]});
      }
      has_color = true;
    } else if (key == "s_min") {
      t.color.s_min = want_number(value, what);
    } else if (key == "s_max") {
      t.color.s_max = want_number(value, what);
    } else if (key == "v_min") {
      t.color.v_min = want_number(value, what);
    } else if (key == "v_max") {
      t.color.v_max = want_number(value, what);
    } else if (key == "mode") {
      t.mode = vision::parse_centroid_mode(want_string(value, what));
    } else if (key == "depth_bias") {
      t.depth_bias = want_number(value, what);
      if (!std::isfinite(t.depth_bias) || std::abs(t.depth_bias) > 0.5) {
        throw ConfigError(what + " out of range");
      }
    } else if (key == "surface_offset") {
      t.surface_offset = want_number(value, what);
      if (!std::isfinite(t.surface_offset) || std::abs(t.surface_offset) > 0.5) {
        throw ConfigError(what + " out of range");
      }
    } else {
      throw ConfigError("target " + decl.name + ": unknown key '" + key + "'");
    }
  }
  if (!has_color) throw ConfigError("target " + decl.name + " needs a color or hue");
  t.color.validate();
  return t;
}

std::vector<double> to_vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

VisionConfig vision_config(const Program& program) {
  VisionConfig cfg;
  for (const auto& decl : targets(program)) cfg.targets.push_back(target_spec(decl));
  if (cfg.targets.size() > kMaxTargets) throw ConfigError("too many targets");
  std::set<std::string> seen;
  for (const auto& opt : options(program)) {
    if (!seen.insert(opt.name).second) throw ConfigError("duplicate option '" + opt.name + "'");
    if (opt.name == "ema_alpha") {
      cfg.ema_alpha = want_number(opt.value, "ema_alpha");
      if (!(cfg.ema_alpha >= 0.0 && cfg.ema_alpha <= 1.0)) throw ConfigError("ema_alpha must lie in [0, 1]");
    } else if (opt.name == "backproject") {
      const std::string v = want_string(opt.value, "backproject");
      if (v != "gl" && v != "cv") throw ConfigError("backproject must be \"gl\" or \"cv\"");
      cfg.backproject.flip_y = v == "cv";
    } else if (opt.name == "extrinsic") {
      const std::string v = want_string(opt.value, "extrinsic");
      if (v != "direct" && v != "cv_axis") throw ConfigError("extrinsic must be \"direct\" or \"cv_axis\"");
      cfg.backproject.cv_axis_extrinsic = v == "cv_axis";
    } else {
      throw ConfigError("unknown option '" + opt.name + "'");
    }
  }
  return cfg;
}

vision::FeatureFrame canned_features(const std::vector<std::string>& target_names) {
  vision::FeatureFrame f;
  f.eef_pos = Vec3(0.0, 0.0, 1.05);
  f.gripper_aperture = 0.08;
  f.step = 0;
  double y = -0.1;
  for (const auto& name : target_names) {
    vision::TargetFeature t;
    t.detected = true;
    t.object_pos = Vec3(0.0, y, 0.825);
    t.pixel_centroid = vision::PixelCentroid{128.0, 100.0};
    t.blob_area = 400;
    f.targets.emplace_back(name, t);
    y += 0.1;
  }
  return f;
}

Value features_to_value(const vision::FeatureFrame& frame, const VisionConfig& config) {
  std::map<std::string, Value, std::less<>> fields;
  fields["step"] = static_cast<double>(frame.step);
  fields["eef"] = to_vec(frame.eef_pos);
  fields["aperture"] = frame.gripper_aperture;
  for (const auto& spec : config.targets) {
    std::map<std::string, Value, std::less<>> t;
    const vision::TargetFeature* feat = frame.find(spec.name);
    const bool detected = feat != nullptr && feat->detected && feat->object_pos.has_value();
    t["detected"] = detected;
    t["area"] = feat != nullptr ? static_cast<double>(feat->blob_area) : 0.0;
    if (detected) {
      t["pos"] = to_vec(*feat->object_pos);
      if (feat->pixel_centroid) {
        t["pixel"] = std::vector<double>{feat->pixel_centroid->u, feat->pixel_centroid->v};
      }
    }
    fields[spec.name] = make_record(std::move(t));
  }
  return make_record(std::move(fields));
}

namespace {

std::optional<std::array<double, 4>> as_action(const Value& v) {
  if (!v.is_vec() || v.vec().size() != 4) return std::nullopt;
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!std::isfinite(v.vec()[i])) return std::nullopt;
    out[i] = v.vec()[i];
  }
  return out;
}

ValidationError fail(ValidationStage stage, std::string msg) { return {stage, std::move(msg)}; }

}  // namespace

ValidationResult validate(std::string_view source, Provenance provenance) {
  return validate(source, vision::FeatureFrame{}, provenance);
}

ValidationResult validate(std::string_view source, const vision::FeatureFrame& given, Provenance provenance) {
  try {
    std::shared_ptr<const Program> prog;
    try {
      prog = parse_program(source);
    } catch (const ParseError& e) {
      return fail(ValidationStage::Parse, e.what());
    }

    bool has_reset = false;
    bool has_get_action = false;
    for (const auto& f : functions(*prog)) {
      if (f.name == "reset") {
        if (f.arity != 0) return fail(ValidationStage::Interface, "reset() must take no arguments");
        has_reset = true;
      } else if (f.name == "get_action") {
        if (f.arity != 1) return fail(ValidationStage::Interface, "get_action must take one argument");
        has_get_action = true;
      }
    }
    if (!has_reset) return fail(ValidationStage::Interface, "missing fn reset()");
    if (!has_get_action) return fail(ValidationStage::Interface, "missing fn get_action(features)");

    ControllerProgram out;
    out.source = std::string(source);
    out.provenance = provenance;
    out.compiled = prog;
    Interpreter interp(prog);
    try {
      out.config = vision_config(*prog);
      interp.instantiate();
      interp.reset();
    } catch (const std::exception& e) {
      return fail(ValidationStage::Instantiate, e.what());
    }

    vision::FeatureFrame canned = given;
    if (canned.targets.empty()) {
      std::vector<std::string> names;
      for (const auto& t : out.config.targets) names.push_back(t.name);
      canned = canned_features(names);
    }
    Value result;
    try {
      result = interp.call("get_action", {features_to_value(canned, out.config)});
    } catch (const std::exception& e) {
      return fail(ValidationStage::DryRun, e.what());
    }
    if (!as_action(result)) {
      std::string got = result.type_name();
      if (result.is_vec()) got = "vector of length " + std::to_string(result.vec().size());
      return fail(ValidationStage::OutputShape, "get_action must return 4 finite numbers, got " + got);
    }
    return out;
  } catch (const std::exception& e) {
    return fail(ValidationStage::Parse, std::string("internal: ") + e.what());
  }
}

sim::Action clamp_action(const std::array<double, 4>& a) {
  // Non-finite components become 0 so the bounds hold for any input.
  auto c = [](double x, double lim) { return std::isfinite(x) ? std::clamp(x, -lim, lim) : 0.0; };
  sim::Action out;
  out.delta = Vec3(c(a[0], kMaxDelta), c(a[1], kMaxDelta), c(a[2], kMaxDelta));
  out.grip = c(a[3], kMaxGrip);
  return out;
}

sim::Action smooth_and_clamp(const std::array<double, 4>& raw, EmaState& ema) {
  std::array<double, 4> s{};
  for (std::size_t i = 0; i < 4; ++i) s[i] = ema.alpha * raw[i] + (1.0 - ema.alpha) * ema.prev[i];
  const sim::Action a = clamp_action(s);
  ema.prev = {a.delta.x(), a.delta.y(), a.delta.z(), a.grip};
  return a;
}

ControllerInstance::ControllerInstance(const ControllerProgram& program, std::uint64_t budget)
    : interp_(program.compiled), config_(program.config), budget_(budget) {
  ema_.alpha = config_.ema_alpha;
  interp_.instantiate(budget_);
}

void ControllerInstance::reset() {
  ema_.prev = {};
  consecutive_ = 0;
  total_ = 0;
  interp_.reset(budget_);
  read_phase();
}

void ControllerInstance::read_phase() {
  const Value p = interp_.field("phase");
  if (p.is_str()) phase_ = p.str();
}

StepOutput ControllerInstance::step(const vision::FeatureFrame& features) {
  StepOutput out;
  try {
    const Value v = interp_.call("get_action", {features_to_value(features, config_)}, budget_);
    const auto raw = as_action(v);
    if (!raw) throw ScriptError("get_action must return 4 finite numbers");
    out.action = smooth_and_clamp(*raw, ema_);
    consecutive_ = 0;
  } catch (const std::exception& e) {
    out.action = sim::Action::zero();
    ema_.prev = {};
    out.exception = true;
    out.error = e.what();
    ++consecutive_;
    ++total_;
  }
  read_phase();
  out.phase = phase_;
  return out;
}

StepOutput controller_step(ControllerInstance& instance, const vision::FeatureFrame& features) {
  return instance.step(features);
}

}  // namespace aor::ctl
