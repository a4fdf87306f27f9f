#include "aor/loop/bridge.hpp"

#include "aor/render/image_io.hpp"
#include "aor/util/base64.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace aor::loop {

using nlohmann::json;

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ProtocolError(std::string(what) + " must be a 3-vector");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ProtocolError(std::string(what) + " must hold numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

template <class T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ProtocolError(std::string("field '") + key + "' has the wrong type");
  }
}

std::vector<std::uint8_t> b64(const json& j, const char* key) {
  try {
    return util::base64_decode(field<std::string>(j, key));
  } catch (const util::Base64Error& e) {
    throw ProtocolError(std::string(key) + ": " + e.what());
  }
}

}  // namespace

json camera_to_json(const render::CameraModel& cam) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(cam.cam_rot(r, c));
  return {{"fx", cam.fx},         {"fy", cam.fy},     {"cx", cam.cx},
          {"cy", cam.cy},         {"width", cam.width}, {"height", cam.height},
          {"rotation", rot},      {"position", vec3_json(cam.cam_pos)},
          {"convention", std::string(render::to_string(cam.convention))}};
}

render::CameraModel camera_from_json(const json& j) {
  if (!j.is_object()) throw ProtocolError("camera must be an object");
  render::CameraModel cam;
  cam.fx = field<double>(j, "fx");
  cam.fy = field<double>(j, "fy");
  cam.cx = field<double>(j, "cx");
  cam.cy = field<double>(j, "cy");
  cam.width = field<int>(j, "width");
  cam.height = field<int>(j, "height");
  const auto rot = field<std::vector<double>>(j, "rotation");
  if (rot.size() != 9) throw ProtocolError("camera rotation must have 9 entries, row-major");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.cam_rot(r, c) = rot[static_cast<std::size_t>(3 * r + c)];
  cam.cam_pos = vec3_from(field<json>(j, "position"), "camera position");
  try {
    cam.convention = render::parse_convention(field<std::string>(j, "convention"));
    cam.validate();
  } catch (const ConfigError& e) {
    throw ProtocolError(std::string("camera: ") + e.what());
  }
  return cam;
}

std::string encode_message(const BridgeMessage& msg) {
  json j{{"protocol", kBridgeProtocol}};
  std::visit(
      [&j](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ResetRequest>) {
          j["type"] = "reset";
          j["seed"] = m.seed;
          j["task"] = m.task;
        } else if constexpr (std::is_same_v<T, StepRequest>) {
          j["type"] = "step";
          j["action"] = m.action;
        } else if constexpr (std::is_same_v<T, ErrorMessage>) {
          j["type"] = "error";
          j["message"] = m.message;
        } else {
          j["type"] = "obs";
          j["width"] = m.image.width;
          j["height"] = m.image.height;
          j["convention"] = std::string(render::to_string(m.image.convention));
          j["rgb_b64"] = util::base64_encode(render::encode_ppm(m.image));
          j["depth_b64"] = util::base64_encode(render::encode_depth(m.image));
          j["proprio"] = {{"eef_pos", vec3_json(m.eef_pos)}, {"gripper_aperture", m.gripper_aperture}};
          j["reward"] = m.reward;
          j["done"] = m.done;
          j["success"] = m.success;
          if (m.camera) j["camera"] = camera_to_json(*m.camera);
          if (m.object_pos) j["object_pos"] = vec3_json(*m.object_pos);
          if (m.secondary_displacement) j["secondary_displacement"] = *m.secondary_displacement;
        }
      },
      msg);
  return j.dump();
}

BridgeMessage decode_message(std::string_view line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("message is not a JSON object");
  const auto proto = j.find("protocol");
  if (proto == j.end() || !proto->is_number_integer() || proto->get<int>() != kBridgeProtocol) {
    throw ProtocolError("unsupported or missing protocol version");
  }
  const auto type = field<std::string>(j, "type");
  if (type == "reset") {
    // json converts a negative integer to uint64 silently.
    if (const auto it = j.find("seed"); it != j.end() && !it->is_number_unsigned()) {
      throw ProtocolError("field 'seed' must be a non-negative integer");
    }
    return ResetRequest{field<std::uint64_t>(j, "seed"), field<std::string>(j, "task")};
  }
  if (type == "step") {
    const auto a = field<std::vector<double>>(j, "action");
    if (a.size() != 4) throw ProtocolError("step action must have 4 entries");
    return StepRequest{{a[0], a[1], a[2], a[3]}};
  }
  if (type == "error") return ErrorMessage{field<std::string>(j, "message")};
  if (type != "obs") throw ProtocolError("unknown message type '" + type + "'");

  ObsMessage m;
  const int w = field<int>(j, "width");
  const int h = field<int>(j, "height");
  if (w <= 0 || h <= 0) throw ProtocolError("raster dimensions must be positive");
  render::ImageConvention conv;
  try {
    conv = render::parse_convention(field<std::string>(j, "convention"));
  } catch (const ConfigError& e) {
    throw ProtocolError(e.what());
  }
  try {
    m.image = render::decode_ppm(b64(j, "rgb_b64"), conv);
    if (m.image.width != w || m.image.height != h) {
      throw ProtocolError("rgb raster is " + std::to_string(m.image.width) + "x" + std::to_string(m.image.height) +
                          ", declared " + std::to_string(w) + "x" + std::to_string(h));
    }
    m.image.depth = render::decode_depth(b64(j, "depth_b64"), w, h);
  } catch (const render::ImageIoError& e) {
    throw ProtocolError(e.what());
  }
  const auto proprio = field<json>(j, "proprio");
  if (!proprio.is_object()) throw ProtocolError("proprio must be an object");
  m.eef_pos = vec3_from(field<json>(proprio, "eef_pos"), "eef_pos");
  m.gripper_aperture = field<double>(proprio, "gripper_aperture");
  m.reward = field<double>(j, "reward");
  m.done = field<bool>(j, "done");
  m.success = field<bool>(j, "success");
  if (j.contains("camera")) m.camera = camera_from_json(j["camera"]);
  if (j.contains("object_pos")) m.object_pos = vec3_from(j["object_pos"], "object_pos");
  if (j.contains("secondary_displacement")) m.secondary_displacement = field<double>(j, "secondary_displacement");
  return m;
}

BridgeEnv::BridgeEnv(std::string command, sim::TaskId task)
    : command_(std::move(command)), task_(sim::make_task(task)), cam_(render::default_camera()) {
  // A child that dies mid-write must surface as an error, not kill the harness.
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw BackendError(std::string("pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw BackendError(std::string("pipe: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_adddup2(&fa, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&fa, out_pipe[1], STDOUT_FILENO);
  for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) posix_spawn_file_actions_addclose(&fa, fd);

  std::string sh = "/bin/sh";
  std::string dash_c = "-c";
  char* argv[] = {sh.data(), dash_c.data(), command_.data(), nullptr};
  const int rc = posix_spawn(&pid_, "/bin/sh", &fa, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&fa);
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  if (rc != 0) {
    pid_ = -1;
    shutdown();
    throw BackendError("cannot start bridge command: " + std::string(std::strerror(rc)));
  }
}

BridgeEnv::~BridgeEnv() { shutdown(); }

void BridgeEnv::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  to_child_ = -1;
  if (from_child_ >= 0) close(from_child_);
  from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    // Closing stdin is the shutdown signal; a child that ignores it is killed.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      usleep(10000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

ObsMessage BridgeEnv::exchange(const BridgeMessage& request) {
  if (to_child_ < 0) throw BackendError("bridge process is not running");
  const std::string line = encode_message(request) + "\n";
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = write(to_child_, line.data() + sent, line.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BackendError(std::string("bridge write failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }

  std::size_t nl;
  while ((nl = buffer_.find('\n')) == std::string::npos) {
    char chunk[65536];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BackendError(std::string("bridge read failed: ") + std::strerror(errno));
    }
    if (n == 0) throw BackendError("bridge process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  const std::string reply = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);

  const BridgeMessage msg = decode_message(reply);
  if (const auto* err = std::get_if<ErrorMessage>(&msg)) throw BackendError("bridge error: " + err->message);
  const auto* obs = std::get_if<ObsMessage>(&msg);
  if (obs == nullptr) throw ProtocolError("bridge replied with a request message");
  return *obs;
}

Observation BridgeEnv::observation(const ObsMessage& m) {
  if (m.camera) {
    if (m.camera->width != m.image.width || m.camera->height != m.image.height) {
      throw ProtocolError("camera dimensions disagree with the raster");
    }
    cam_ = *m.camera;
  } else if (cam_.width != m.image.width || cam_.height != m.image.height) {
    throw ProtocolError("raster is not 256x256 and no camera was sent");
  }
  cam_.convention = m.image.convention;
  Observation o;
  o.image = m.image;
  o.proprio.eef_pos = m.eef_pos;
  o.proprio.gripper_aperture = m.gripper_aperture;
  o.primary_object = m.object_pos;
  o.secondary_displacement = m.secondary_displacement.value_or(0.0);
  return o;
}

Observation BridgeEnv::reset(std::uint64_t seed) {
  step_ = 0;
  auto o = observation(exchange(ResetRequest{seed, std::string(sim::to_string(task_.task_id))}));
  o.proprio.step = step_;
  return o;
}

EnvStep BridgeEnv::step(const sim::Action& action) {
  const ObsMessage m = exchange(StepRequest{{action.delta.x(), action.delta.y(), action.delta.z(), action.grip}});
  EnvStep out;
  out.obs = observation(m);
  out.obs.proprio.step = ++step_;
  out.reward = m.reward;
  out.done = m.done;
  out.success = m.success;
  return out;
}

}  // namespace aor::loop
