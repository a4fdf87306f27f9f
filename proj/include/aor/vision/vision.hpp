#pragma once

#include "aor/render/camera.hpp"
#include "aor/render/render.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace aor::vision {

class InvalidDepthError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Hsv {
  double h;  // degrees in [0, 360)
  double s;  // [0, 1]
  double v;  // [0, 1]
};

/// Hexcone conversion; hue is reported as 0 for achromatic pixels.
Hsv rgb_to_hsv(const render::Rgb& px);

struct HueWindow {
  double lo;  // inclusive, degrees
  double hi;  // inclusive, degrees
};

struct ColorSpec {
  std::vector<HueWindow> hue;
  double s_min = 0.0;
  double v_min = 0.0;
  double s_max = 1.0;
  double v_max = 1.0;

  bool matches(const Hsv& p) const;
  /// Throws ConfigError when windows or thresholds are out of range.
  void validate() const;

  static ColorSpec red();
  static ColorSpec green();
  /// Low-saturation bright pixels: what a metallic can would look like.
  static ColorSpec silver();
  /// Looks up a named preset ("red", "green", "silver").
  static ColorSpec preset(std::string_view name);
};

struct BitMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool on = true) {
    bits[static_cast<std::size_t>(v) * width + u] = on ? 1 : 0;
  }
  std::size_t count() const;
};

BitMask segment_color(const render::RgbdImage& img, const ColorSpec& spec);

struct PixelCentroid {
  double u;
  double v;
};

struct Component {
  PixelCentroid centroid;
  std::size_t area = 0;
  /// Row-major raster indices, first entry is the component's top-left pixel.
  std::vector<std::size_t> pixels;
};

/// All 4-connected components in row-major discovery order.
std::vector<Component> connected_components(const BitMask& mask);

/// Maximal-area component; ties go to the one whose first pixel comes first
/// in row-major order of the stored raster.
std::optional<Component> largest_component(const BitMask& mask);

/// Unweighted mean of all set pixels.
std::optional<PixelCentroid> mean_centroid(const BitMask& mask);

/// Pipeline deviations that reproduce known camera-convention bugs.
struct BackprojectOptions {
  /// Uses -y_p (the top-down image formula) on bottom-up rows.
  bool flip_y = false;
  /// Applies an (x, -y, -z) axis correction before the world transform.
  bool cv_axis_extrinsic = false;
};

/// Pixel (u, stored row v) at depth d to world coordinates.
/// Throws InvalidDepthError when d <= 0 or d is not finite.
Vec3 backproject(double u, double v, double d, const render::CameraModel& cam,
                 const BackprojectOptions& opts = {});

/// Median of the non-zero depths in the 3x3 window around (u, v).
std::optional<double> sample_depth(const render::RgbdImage& img, int u, int v);

enum class CentroidMode { Largest, Mean };

std::string_view to_string(CentroidMode m);
CentroidMode parse_centroid_mode(std::string_view s);

struct TargetSpec {
  std::string name;
  ColorSpec color;
  CentroidMode mode = CentroidMode::Largest;
  /// Subtracted from the back-projected z.
  double depth_bias = 0.0;
  /// Added to the sampled depth, moving the estimate from the visible
  /// surface toward the object's interior along the viewing ray.
  double surface_offset = 0.0;
};

struct TargetFeature {
  bool detected = false;
  std::optional<Vec3> object_pos;
  std::optional<PixelCentroid> pixel_centroid;
  std::size_t blob_area = 0;
};

struct Proprio {
  Vec3 eef_pos = Vec3::Zero();
  double gripper_aperture = 0.0;
  std::int64_t step = 0;
};

struct FeatureFrame {
  std::vector<std::pair<std::string, TargetFeature>> targets;
  Vec3 eef_pos = Vec3::Zero();
  double gripper_aperture = 0.0;
  std::int64_t step = 0;

  const TargetFeature* find(std::string_view name) const;
};

TargetFeature locate_target(const render::RgbdImage& img, const render::CameraModel& cam,
                            const TargetSpec& target, const BackprojectOptions& opts = {});

FeatureFrame extract_features(const render::RgbdImage& img, const render::CameraModel& cam,
                              const Proprio& proprio, const std::vector<TargetSpec>& targets,
                              const BackprojectOptions& opts = {});

}  // namespace aor::vision
