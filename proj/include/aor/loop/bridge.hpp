#pragma once

#include "aor/loop/env.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <string>
#include <string_view>
#include <sys/types.h>
#include <variant>

namespace aor::loop {

// Newline-delimited JSON spoken with an external simulator process over its
// stdin/stdout. Every message carries "protocol": 1 and a "type"; the payload
// fields sit beside them.

inline constexpr int kBridgeProtocol = 1;

class ProtocolError : public BackendError {
  using BackendError::BackendError;
};

struct ResetRequest {
  std::uint64_t seed = 0;
  std::string task;
  bool operator==(const ResetRequest&) const = default;
};

struct StepRequest {
  std::array<double, 4> action{};
  bool operator==(const StepRequest&) const = default;
};

struct ObsMessage {
  /// rgb from a base64 PPM, depth from base64 little-endian float32.
  render::RgbdImage image;
  Vec3 eef_pos = Vec3::Zero();
  double gripper_aperture = 0.0;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  // Optional extensions: the camera that produced the raster, and ground truth
  // used only for logging.
  std::optional<render::CameraModel> camera;
  std::optional<Vec3> object_pos;
  std::optional<double> secondary_displacement;
};

struct ErrorMessage {
  std::string message;
  bool operator==(const ErrorMessage&) const = default;
};

using BridgeMessage = std::variant<ResetRequest, StepRequest, ObsMessage, ErrorMessage>;

/// One line of JSON, without the trailing newline.
std::string encode_message(const BridgeMessage& msg);
/// Throws ProtocolError on malformed input, a wrong protocol number, or rasters
/// whose size disagrees with the declared dimensions.
BridgeMessage decode_message(std::string_view line);

nlohmann::json camera_to_json(const render::CameraModel& cam);
render::CameraModel camera_from_json(const nlohmann::json& j);

/// Environment served by a child process started with `/bin/sh -c command`.
class BridgeEnv : public Environment {
 public:
  BridgeEnv(std::string command, sim::TaskId task);
  ~BridgeEnv() override;
  BridgeEnv(const BridgeEnv&) = delete;
  BridgeEnv& operator=(const BridgeEnv&) = delete;

  Observation reset(std::uint64_t seed) override;
  EnvStep step(const sim::Action& action) override;
  const render::CameraModel& camera() const override { return cam_; }
  const sim::TaskSpec& task() const override { return task_; }

 private:
  std::string command_;
  sim::TaskSpec task_;
  render::CameraModel cam_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::int64_t step_ = 0;

  ObsMessage exchange(const BridgeMessage& request);
  Observation observation(const ObsMessage& m);
  void shutdown();
};

}  // namespace aor::loop
