#pragma once

#include "aor/sim/world.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <string_view>

namespace aor::render {

class ProjectionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Row storage order. GlBottomUp keeps row 0 at the bottom of the image.
enum class ImageConvention { GlBottomUp, CvTopDown };

std::string_view to_string(ImageConvention c);
ImageConvention parse_convention(std::string_view s);

/// Pinhole camera with y-up, z-back camera axes (the camera looks along -z).
struct CameraModel {
  double fx = 256.0;
  double fy = 256.0;
  double cx = 127.5;
  double cy = 127.5;
  int width = 256;
  int height = 256;
  /// World-from-camera rotation; columns are the camera axes in world coordinates.
  Eigen::Matrix3d cam_rot = Eigen::Matrix3d::Identity();
  Vec3 cam_pos = Vec3::Zero();
  ImageConvention convention = ImageConvention::GlBottomUp;

  /// Throws ConfigError when intrinsics or rotation are invalid.
  void validate() const;

  /// Converts a stored raster row coordinate to a bottom-up row coordinate
  /// (and back; the mapping is an involution).
  double row_up(double v_stored) const {
    return convention == ImageConvention::GlBottomUp ? v_stored : (height - 1) - v_stored;
  }
};

/// Agentview-like default: 60 degree pitch, 0.9 m from the table center,
/// looking along -x so world +y runs to the right of the image.
CameraModel default_camera(double table_top_z = 0.8);

/// Camera looking from `eye` toward `target` with world +z as up hint.
CameraModel look_at(const Vec3& eye, const Vec3& target, const CameraModel& intrinsics = {});

Eigen::Matrix4d world_from_cam(const CameraModel& cam);
Eigen::Matrix4d cam_from_world(const CameraModel& cam);

struct PixelProjection {
  double u;
  double v;  // stored-row coordinate, per cam.convention
  double d;  // depth along the viewing axis
};

/// Throws ProjectionError for points at or behind the camera plane.
PixelProjection project(const Vec3& world_point, const CameraModel& cam);

}  // namespace aor::render
