#include "aor/vision/vision.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace aor::vision {

Hsv rgb_to_hsv(const render::Rgb& px) {
  const double r = px[0] / 255.0;
  const double g = px[1] / 255.0;
  const double b = px[2] / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out{0.0, mx > 0.0 ? delta / mx : 0.0, mx};
  if (delta <= 0.0) return out;
  double h;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / delta, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / delta + 2.0);
  } else {
    h = 60.0 * ((r - g) / delta + 4.0);
  }
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  out.h = h;
  return out;
}

bool ColorSpec::matches(const Hsv& p) const {
  if (p.s < s_min || p.s > s_max || p.v < v_min || p.v > v_max) return false;
  return std::any_of(hue.begin(), hue.end(),
                     [&](const HueWindow& w) { return p.h >= w.lo && p.h <= w.hi; });
}

void ColorSpec::validate() const {
  if (hue.empty()) throw ConfigError("color spec needs at least one hue window");
  for (const auto& w : hue) {
    if (!(w.lo >= 0.0 && w.hi <= 360.0 && w.lo <= w.hi)) {
      throw ConfigError("hue window outside [0, 360]");
    }
  }
  for (double t : {s_min, v_min, s_max, v_max}) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("saturation/value thresholds must be in [0, 1]");
  }
}

ColorSpec ColorSpec::red() { return {{{0.0, 10.0}, {350.0, 360.0}}, 0.5, 0.3}; }
ColorSpec ColorSpec::green() { return {{{90.0, 150.0}}, 0.5, 0.3}; }
ColorSpec ColorSpec::silver() { return {{{0.0, 360.0}}, 0.0, 0.75, 0.15, 1.0}; }

ColorSpec ColorSpec::preset(std::string_view name) {
  if (name == "red") return red();
  if (name == "green") return green();
  if (name == "silver") return silver();
  throw ConfigError("unknown color preset '" + std::string(name) + "'");
}

std::size_t BitMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BitMask segment_color(const render::RgbdImage& img, const ColorSpec& spec) {
  BitMask mask(img.width, img.height);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (spec.matches(rgb_to_hsv(img.pixel(u, v)))) mask.set(u, v);
    }
  }
  return mask;
}

std::vector<Component> connected_components(const BitMask& mask) {
  const int w = mask.width;
  const int h = mask.height;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  std::vector<Component> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.bits.size(); ++start) {
    if (!mask.bits[start] || seen[start]) continue;
    Component comp;
    double su = 0.0, sv = 0.0;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comp.pixels.push_back(i);
      const int u = static_cast<int>(i % w);
      const int v = static_cast<int>(i / w);
      su += u;
      sv += v;
      const int nbr[4][2] = {{u - 1, v}, {u + 1, v}, {u, v - 1}, {u, v + 1}};
      for (const auto& n : nbr) {
        if (n[0] < 0 || n[0] >= w || n[1] < 0 || n[1] >= h) continue;
        const std::size_t j = static_cast<std::size_t>(n[1]) * w + n[0];
        if (mask.bits[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    comp.area = comp.pixels.size();
    comp.centroid = {su / comp.area, sv / comp.area};
    out.push_back(std::move(comp));
  }
  return out;
}

std::optional<Component> largest_component(const BitMask& mask) {
  auto comps = connected_components(mask);
  if (comps.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < comps.size(); ++i) {
    // Discovery order is row-major by first pixel, so strict > keeps the earliest on ties.
    if (comps[i].area > comps[best].area) best = i;
  }
  return std::move(comps[best]);
}

std::optional<PixelCentroid> mean_centroid(const BitMask& mask) {
  double su = 0.0, sv = 0.0;
  std::size_t n = 0;
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (mask.at(u, v)) {
        su += u;
        sv += v;
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return PixelCentroid{su / n, sv / n};
}

Vec3 backproject(double u, double v, double d, const render::CameraModel& cam,
                 const BackprojectOptions& opts) {
  if (!(d > 0.0) || !std::isfinite(d)) throw InvalidDepthError("depth must be positive");
  const double v_up = cam.row_up(v);
  const double x_p = (u - cam.cx) * d / cam.fx;
  double y_p = (v_up - cam.cy) * d / cam.fy;
  if (opts.flip_y) y_p = -y_p;
  Eigen::Vector4d p_cam(x_p, y_p, -d, 1.0);
  if (opts.cv_axis_extrinsic) {
    p_cam.y() = -p_cam.y();
    p_cam.z() = -p_cam.z();
  }
  const Eigen::Vector4d world = render::world_from_cam(cam) * p_cam;
  return world.head<3>();
}

std::optional<double> sample_depth(const render::RgbdImage& img, int u, int v) {
  std::vector<double> vals;
  vals.reserve(9);
  for (int dv = -1; dv <= 1; ++dv) {
    for (int du = -1; du <= 1; ++du) {
      const int x = u + du;
      const int y = v + dv;
      if (x < 0 || x >= img.width || y < 0 || y >= img.height) continue;
      const float z = img.depth_at(x, y);
      if (z > 0.0f) vals.push_back(z);
    }
  }
  if (vals.empty()) return std::nullopt;
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  return n % 2 == 1 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

std::string_view to_string(CentroidMode m) { return m == CentroidMode::Largest ? "largest" : "mean"; }

CentroidMode parse_centroid_mode(std::string_view s) {
  if (s == "largest") return CentroidMode::Largest;
  if (s == "mean") return CentroidMode::Mean;
  throw ConfigError("unknown centroid mode '" + std::string(s) + "'");
}

const TargetFeature* FeatureFrame::find(std::string_view name) const {
  for (const auto& [n, f] : targets) {
    if (n == name) return &f;
  }
  return nullptr;
}

TargetFeature locate_target(const render::RgbdImage& img, const render::CameraModel& cam,
                            const TargetSpec& target, const BackprojectOptions& opts) {
  TargetFeature feat;
  const BitMask mask = segment_color(img, target.color);
  std::optional<PixelCentroid> centroid;
  if (target.mode == CentroidMode::Largest) {
    if (auto comp = largest_component(mask)) {
      centroid = comp->centroid;
      feat.blob_area = comp->area;
    }
  } else {
    centroid = mean_centroid(mask);
    feat.blob_area = mask.count();
  }
  if (!centroid) return feat;
  feat.pixel_centroid = centroid;
  const int pu = static_cast<int>(std::lround(centroid->u));
  const int pv = static_cast<int>(std::lround(centroid->v));
  const auto depth = sample_depth(img, pu, pv);
  if (!depth) return feat;
  Vec3 world = backproject(centroid->u, centroid->v, *depth + target.surface_offset, cam, opts);
  world.z() -= target.depth_bias;
  if (!world.allFinite()) return feat;
  feat.object_pos = world;
  feat.detected = true;
  return feat;
}

FeatureFrame extract_features(const render::RgbdImage& img, const render::CameraModel& cam,
                              const Proprio& proprio, const std::vector<TargetSpec>& targets,
                              const BackprojectOptions& opts) {
  FeatureFrame frame;
  frame.eef_pos = proprio.eef_pos;
  frame.gripper_aperture = proprio.gripper_aperture;
  frame.step = proprio.step;
  for (const auto& t : targets) frame.targets.emplace_back(t.name, locate_target(img, cam, t, opts));
  return frame;
}

}  // namespace aor::vision
