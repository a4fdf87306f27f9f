#pragma once

#include "aor/render/camera.hpp"
#include "aor/sim/world.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace aor::render {

using Rgb = std::array<std::uint8_t, 3>;

struct RgbdImage {
  int width = 0;
  int height = 0;
  /// Row-major, rows in `convention` order, 3 bytes per pixel.
  std::vector<std::uint8_t> rgb;
  /// Meters along the viewing axis; 0 where nothing was hit.
  std::vector<float> depth;
  ImageConvention convention = ImageConvention::GlBottomUp;

  Rgb pixel(int u, int v) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(v) * width + u);
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  float depth_at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
};

namespace palette {
inline constexpr Rgb kBackground{128, 128, 128};
inline constexpr Rgb kTable{139, 90, 43};
inline constexpr Rgb kRed{200, 30, 30};
inline constexpr Rgb kGreen{30, 160, 30};
inline constexpr Rgb kDecoy{200, 40, 40};
inline constexpr Rgb kNeutral{90, 90, 100};
inline constexpr Rgb kGripper{60, 60, 60};
}  // namespace palette

Rgb color_of(sim::ColorClass c);

/// Per-pixel label of the surface that won the z-buffer.
namespace label {
inline constexpr int kNone = -1;
inline constexpr int kTable = -2;
inline constexpr int kGripper = -3;
}  // namespace label

struct RenderOptions {
  /// Maximum absolute additive jitter per channel; 0 disables jitter.
  int color_jitter = 0;
  std::uint64_t jitter_seed = 0;
  bool draw_gripper = true;
  bool draw_table = true;
};

struct RenderResult {
  RgbdImage image;
  /// Object index into WorldState::objects, or one of the label constants.
  std::vector<int> labels;
};

RenderResult render_labeled(const sim::WorldState& state, const CameraModel& cam,
                            const RenderOptions& opts = {});

inline RgbdImage render(const sim::WorldState& state, const CameraModel& cam,
                        const RenderOptions& opts = {}) {
  return render_labeled(state, cam, opts).image;
}

/// Swaps row order and the convention tag.
RgbdImage flip_rows(const RgbdImage& img);

}  // namespace aor::render
