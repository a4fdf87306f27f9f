#include "aor/render/render.hpp"

#include "aor/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aor::render {

namespace c = sim::constants;

Rgb color_of(sim::ColorClass col) {
  switch (col) {
    case sim::ColorClass::Red: return palette::kRed;
    case sim::ColorClass::Green: return palette::kGreen;
    case sim::ColorClass::DecoyRedMarker: return palette::kDecoy;
    case sim::ColorClass::Neutral: return palette::kNeutral;
  }
  return palette::kNeutral;
}

namespace {

struct Primitive {
  enum class Kind { Box, Cylinder } kind;
  Vec3 center;
  Vec3 half;  // cylinder: (r, r, half height)
  Rgb color;
  int label;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

double hit_box(const Vec3& o, const Vec3& dir, const Vec3& lo, const Vec3& hi) {
  double t0 = 0.0;
  double t1 = kInf;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return kInf;
      continue;
    }
    double ta = (lo[a] - o[a]) / dir[a];
    double tb = (hi[a] - o[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return kInf;
  }
  return t0 > 0.0 ? t0 : kInf;
}

double hit_cylinder(const Vec3& o, const Vec3& dir, const Vec3& center, double r, double hh) {
  double best = kInf;
  const double z_lo = center.z() - hh;
  const double z_hi = center.z() + hh;
  // Side wall.
  const double ox = o.x() - center.x();
  const double oy = o.y() - center.y();
  const double a = dir.x() * dir.x() + dir.y() * dir.y();
  if (a > 1e-18) {
    const double b = 2.0 * (ox * dir.x() + oy * dir.y());
    const double cc = ox * ox + oy * oy - r * r;
    const double disc = b * b - 4.0 * a * cc;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (t <= 0.0) continue;
        const double z = o.z() + t * dir.z();
        if (z >= z_lo && z <= z_hi) {
          best = std::min(best, t);
          break;
        }
      }
    }
  }
  // Caps.
  if (std::abs(dir.z()) > 1e-15) {
    for (double zc : {z_lo, z_hi}) {
      const double t = (zc - o.z()) / dir.z();
      if (t <= 0.0 || t >= best) continue;
      const double x = ox + t * dir.x();
      const double y = oy + t * dir.y();
      if (x * x + y * y <= r * r) best = t;
    }
  }
  return best;
}

std::vector<Primitive> scene_primitives(const sim::WorldState& s, const RenderOptions& opts) {
  std::vector<Primitive> prims;
  if (opts.draw_table) {
    const double th = 0.025;
    prims.push_back({Primitive::Kind::Box, Vec3(0.0, 0.0, s.table_top_z - th),
                     Vec3(0.6, 0.6, th), palette::kTable, label::kTable});
  }
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    prims.push_back({o.shape == sim::Shape::Box ? Primitive::Kind::Box : Primitive::Kind::Cylinder,
                     o.pose, o.half_extents, color_of(o.color_class), static_cast<int>(i)});
  }
  if (opts.draw_gripper) {
    for (const auto& slab : sim::finger_slabs(s.eef_pos, s.gripper_aperture)) {
      prims.push_back({Primitive::Kind::Box, (slab.lo + slab.hi) / 2.0, (slab.hi - slab.lo) / 2.0,
                       palette::kGripper, label::kGripper});
    }
    const double palm_half_x = c::kApertureMax / 2.0 + c::kFingerWidth;
    prims.push_back({Primitive::Kind::Box, s.eef_pos + Vec3(0.0, 0.0, 0.02),
                     Vec3(palm_half_x, 0.02, 0.02), palette::kGripper, label::kGripper});
  }
  return prims;
}

struct PixelBox {
  int u0, u1, r0, r1;  // inclusive bounds in bottom-up rows
  bool empty() const { return u0 > u1 || r0 > r1; }
};

/// Screen-space bounds of a primitive; full image when any corner is behind the camera.
PixelBox screen_bounds(const Primitive& p, const CameraModel& cam) {
  PixelBox full{0, cam.width - 1, 0, cam.height - 1};
  double umin = kInf, umax = -kInf, vmin = kInf, vmax = -kInf;
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner = p.center + Vec3((k & 1) ? p.half.x() : -p.half.x(),
                                        (k & 2) ? p.half.y() : -p.half.y(),
                                        (k & 4) ? p.half.z() : -p.half.z());
    const Vec3 pc = cam.cam_rot.transpose() * (corner - cam.cam_pos);
    const double d = -pc.z();
    if (d <= 1e-6) return full;
    const double u = cam.fx * pc.x() / d + cam.cx;
    const double v = cam.fy * pc.y() / d + cam.cy;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  PixelBox b{static_cast<int>(std::floor(umin)) - 1, static_cast<int>(std::ceil(umax)) + 1,
             static_cast<int>(std::floor(vmin)) - 1, static_cast<int>(std::ceil(vmax)) + 1};
  b.u0 = std::max(b.u0, 0);
  b.r0 = std::max(b.r0, 0);
  b.u1 = std::min(b.u1, cam.width - 1);
  b.r1 = std::min(b.r1, cam.height - 1);
  return b;
}

}  // namespace

RenderResult render_labeled(const sim::WorldState& state, const CameraModel& cam,
                            const RenderOptions& opts) {
  const int w = cam.width;
  const int h = cam.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> zbuf(n, kInf);
  std::vector<int> labels(n, label::kNone);
  std::vector<Rgb> colors(n, palette::kBackground);

  const auto prims = scene_primitives(state, opts);
  for (const auto& p : prims) {
    const PixelBox box = screen_bounds(p, cam);
    if (box.empty()) continue;
    const Vec3 lo = p.center - p.half;
    const Vec3 hi = p.center + p.half;
    for (int r = box.r0; r <= box.r1; ++r) {
      for (int u = box.u0; u <= box.u1; ++u) {
        // Camera-frame ray with unit depth, so the hit parameter is the depth.
        const Vec3 dir_cam((u - cam.cx) / cam.fx, (r - cam.cy) / cam.fy, -1.0);
        const Vec3 dir = cam.cam_rot * dir_cam;
        const double t = p.kind == Primitive::Kind::Box
                             ? hit_box(cam.cam_pos, dir, lo, hi)
                             : hit_cylinder(cam.cam_pos, dir, p.center, p.half.x(), p.half.z());
        const std::size_t idx = static_cast<std::size_t>(r) * w + u;
        if (t < zbuf[idx]) {
          zbuf[idx] = t;
          labels[idx] = p.label;
          colors[idx] = p.color;
        }
      }
    }
  }

  RenderResult out;
  RgbdImage& img = out.image;
  img.width = w;
  img.height = h;
  img.convention = cam.convention;
  img.rgb.resize(3 * n);
  img.depth.resize(n);
  out.labels.resize(n);
  CounterRng jitter(opts.jitter_seed);
  for (int r = 0; r < h; ++r) {
    const int stored = static_cast<int>(cam.row_up(r));
    for (int u = 0; u < w; ++u) {
      const std::size_t src = static_cast<std::size_t>(r) * w + u;
      const std::size_t dst = static_cast<std::size_t>(stored) * w + u;
      Rgb col = colors[src];
      if (opts.color_jitter > 0) {
        for (int ch = 0; ch < 3; ++ch) {
          const auto span = static_cast<std::uint64_t>(2 * opts.color_jitter + 1);
          const int offset = static_cast<int>(jitter.at(3 * src + ch) % span) - opts.color_jitter;
          col[ch] = static_cast<std::uint8_t>(std::clamp(col[ch] + offset, 0, 255));
        }
      }
      std::copy(col.begin(), col.end(), img.rgb.begin() + 3 * dst);
      img.depth[dst] = std::isfinite(zbuf[src]) ? static_cast<float>(zbuf[src]) : 0.0f;
      out.labels[dst] = labels[src];
    }
  }
  return out;
}

RgbdImage flip_rows(const RgbdImage& img) {
  RgbdImage out = img;
  out.convention = img.convention == ImageConvention::GlBottomUp ? ImageConvention::CvTopDown
                                                                 : ImageConvention::GlBottomUp;
  const std::size_t row_bytes = 3 * static_cast<std::size_t>(img.width);
  for (int r = 0; r < img.height; ++r) {
    const int m = img.height - 1 - r;
    std::copy_n(img.rgb.begin() + r * row_bytes, row_bytes, out.rgb.begin() + m * row_bytes);
    std::copy_n(img.depth.begin() + static_cast<std::size_t>(r) * img.width, img.width,
                out.depth.begin() + static_cast<std::size_t>(m) * img.width);
  }
  return out;
}

}  // namespace aor::render
