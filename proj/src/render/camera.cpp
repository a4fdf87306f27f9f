#include "aor/render/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <string>

namespace aor::render {

std::string_view to_string(ImageConvention c) {
  return c == ImageConvention::GlBottomUp ? "gl_bottom_up" : "cv_top_down";
}

ImageConvention parse_convention(std::string_view s) {
  if (s == "gl_bottom_up" || s == "opengl" || s == "gl") return ImageConvention::GlBottomUp;
  if (s == "cv_top_down" || s == "opencv" || s == "cv") return ImageConvention::CvTopDown;
  throw ConfigError("unknown image convention '" + std::string(s) + "'");
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("camera dimensions must be positive");
  const Eigen::Matrix3d err = cam_rot * cam_rot.transpose() - Eigen::Matrix3d::Identity();
  if (!(err.cwiseAbs().maxCoeff() < 1e-9)) throw ConfigError("camera rotation is not orthonormal");
  if (!cam_pos.allFinite()) throw ConfigError("camera position must be finite");
}

CameraModel look_at(const Vec3& eye, const Vec3& target, const CameraModel& intrinsics) {
  CameraModel cam = intrinsics;
  const Vec3 back = (eye - target).normalized();
  Vec3 right = Vec3::UnitZ().cross(back);
  if (right.norm() < 1e-9) right = Vec3::UnitY();
  right.normalize();
  const Vec3 up = back.cross(right);
  cam.cam_rot.col(0) = right;
  cam.cam_rot.col(1) = up;
  cam.cam_rot.col(2) = back;
  cam.cam_pos = eye;
  return cam;
}

CameraModel default_camera(double table_top_z) {
  const double pitch = M_PI / 3.0;
  const double range = 0.9;
  const Vec3 target(0.0, 0.0, table_top_z);
  const Vec3 eye = target + range * Vec3(std::cos(pitch), 0.0, std::sin(pitch));
  return look_at(eye, target);
}

Eigen::Matrix4d world_from_cam(const CameraModel& cam) {
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() = cam.cam_rot;
  t.topRightCorner<3, 1>() = cam.cam_pos;
  return t;
}

Eigen::Matrix4d cam_from_world(const CameraModel& cam) {
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() = cam.cam_rot.transpose();
  t.topRightCorner<3, 1>() = -cam.cam_rot.transpose() * cam.cam_pos;
  return t;
}

PixelProjection project(const Vec3& world_point, const CameraModel& cam) {
  const Vec3 p = cam.cam_rot.transpose() * (world_point - cam.cam_pos);
  const double d = -p.z();
  if (!(d > 0.0)) throw ProjectionError("point is behind the camera");
  const double u = cam.fx * p.x() / d + cam.cx;
  const double v_up = cam.fy * p.y() / d + cam.cy;
  return {u, cam.row_up(v_up), d};
}

}  // namespace aor::render
