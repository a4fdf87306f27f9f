#include "aor/render/render.hpp"
#include "aor/sim/world.hpp"
#include "aor/vision/vision.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

using namespace aor;
using namespace aor::vision;

namespace {

render::RgbdImage gray_image(int w = 256, int h = 256) {
  render::RgbdImage img;
  img.width = w;
  img.height = h;
  img.rgb.assign(static_cast<std::size_t>(w) * h * 3, 128);
  img.depth.assign(static_cast<std::size_t>(w) * h, 0.8f);
  return img;
}

// Naive labeler: repeated relaxation of the minimum neighbour label until
// nothing changes. Slow, obviously correct.
std::map<int, std::vector<std::size_t>> brute_components(const BitMask& m) {
  const int w = m.width;
  const int h = m.height;
  std::vector<int> lab(static_cast<std::size_t>(w) * h, -1);
  for (std::size_t i = 0; i < lab.size(); ++i)
    if (m.bits[i]) lab[i] = static_cast<int>(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const std::size_t i = static_cast<std::size_t>(v) * w + u;
        if (lab[i] < 0) continue;
        const int nb[4][2] = {{u - 1, v}, {u + 1, v}, {u, v - 1}, {u, v + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
          const std::size_t j = static_cast<std::size_t>(n[1]) * w + n[0];
          if (lab[j] >= 0 && lab[j] < lab[i]) {
            lab[i] = lab[j];
            changed = true;
          }
        }
      }
    }
  }
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < lab.size(); ++i)
    if (lab[i] >= 0) out[lab[i]].push_back(i);
  return out;
}

BitMask random_mask(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(1, 32);
  std::uniform_real_distribution<double> fill(0.1, 0.7);
  BitMask m(dim(rng), dim(rng));
  const double p = fill(rng);
  std::bernoulli_distribution bit(p);
  for (auto& b : m.bits) b = bit(rng) ? 1 : 0;
  return m;
}

void paint_rect(BitMask& m, int u0, int v0, int w, int h) {
  for (int v = v0; v < v0 + h; ++v)
    for (int u = u0; u < u0 + w; ++u) m.set(u, v);
}

}  // namespace

TEST(Hsv, Primaries) {
  const auto red = rgb_to_hsv({255, 0, 0});
  EXPECT_DOUBLE_EQ(red.h, 0.0);
  EXPECT_DOUBLE_EQ(red.s, 1.0);
  EXPECT_DOUBLE_EQ(red.v, 1.0);
  const auto green = rgb_to_hsv({0, 255, 0});
  EXPECT_DOUBLE_EQ(green.h, 120.0);
  EXPECT_DOUBLE_EQ(green.s, 1.0);
  EXPECT_DOUBLE_EQ(green.v, 1.0);
  const auto gray = rgb_to_hsv({128, 128, 128});
  EXPECT_DOUBLE_EQ(gray.h, 0.0);
  EXPECT_DOUBLE_EQ(gray.s, 0.0);
  EXPECT_NEAR(gray.v, 0.502, 5e-4);
}

TEST(Hsv, HueStaysInRange) {
  for (int r = 0; r < 256; r += 15)
    for (int g = 0; g < 256; g += 15)
      for (int b = 0; b < 256; b += 15) {
        const auto p = rgb_to_hsv({std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)});
        ASSERT_GE(p.h, 0.0);
        ASSERT_LT(p.h, 360.0);
        ASSERT_GE(p.s, 0.0);
        ASSERT_LE(p.s, 1.0);
      }
}

TEST(ColorSpec, RedWrapsAndValidates) {
  const auto red = ColorSpec::red();
  EXPECT_TRUE(red.matches({355.0, 0.8, 0.8}));
  EXPECT_TRUE(red.matches({5.0, 0.8, 0.8}));
  EXPECT_FALSE(red.matches({60.0, 0.8, 0.8}));
  EXPECT_NO_THROW(red.validate());
  ColorSpec bad = red;
  bad.s_min = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = red;
  bad.hue = {{10.0, 400.0}};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(ColorSpec::preset("purple"), ConfigError);
}

TEST(Segment, GrayImageIsEmpty) {
  const auto m = segment_color(gray_image(), ColorSpec::red());
  EXPECT_EQ(m.width, 256);
  EXPECT_EQ(m.height, 256);
  EXPECT_EQ(m.count(), 0u);
}

TEST(Segment, CubeMaskMatchesRasterLabels) {
  const auto cam = render::default_camera();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto state = sim::reset(sim::make_task(sim::TaskId::Lift), seed);
    const auto r = render::render_labeled(state, cam);
    const auto m = segment_color(r.image, ColorSpec::red());
    const auto labelled = static_cast<double>(std::count(r.labels.begin(), r.labels.end(), 0));
    ASSERT_GT(labelled, 0);
    EXPECT_NEAR(static_cast<double>(m.count()), labelled, 0.1 * labelled);
    // Determinism: same image, same mask.
    EXPECT_EQ(segment_color(r.image, ColorSpec::red()).bits, m.bits);
  }
}

TEST(Segment, PickPlaceRedHasCanAndDecoy) {
  const auto cam = render::default_camera();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto state = sim::reset(sim::make_task(sim::TaskId::PickPlace), seed);
    const auto comps = connected_components(segment_color(render::render(state, cam), ColorSpec::red()));
    EXPECT_EQ(comps.size(), 2u) << "seed " << seed;
  }
}

TEST(Components, EmptyAndSinglePixel) {
  BitMask m(16, 16);
  EXPECT_FALSE(largest_component(m));
  EXPECT_FALSE(mean_centroid(m));
  m.set(7, 9);
  const auto c = largest_component(m);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->area, 1u);
  EXPECT_DOUBLE_EQ(c->centroid.u, 7.0);
  EXPECT_DOUBLE_EQ(c->centroid.v, 9.0);
}

TEST(Components, LargestWinsOverDecoy) {
  BitMask m(64, 64);
  paint_rect(m, 2, 2, 20, 15);   // 300 px
  paint_rect(m, 40, 40, 8, 5);   // 40 px
  const auto c = largest_component(m);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->area, 300u);
  EXPECT_DOUBLE_EQ(c->centroid.u, 2 + 9.5);
  EXPECT_DOUBLE_EQ(c->centroid.v, 2 + 7.0);
}

TEST(Components, MeanIsAreaWeighted) {
  BitMask m(64, 64);
  paint_rect(m, 2, 2, 20, 15);
  paint_rect(m, 40, 40, 8, 5);
  const double a1 = 300, a2 = 40;
  const double u1 = 11.5, v1 = 9.0, u2 = 43.5, v2 = 42.0;
  const auto mean = mean_centroid(m);
  ASSERT_TRUE(mean);
  EXPECT_NEAR(mean->u, (a1 * u1 + a2 * u2) / (a1 + a2), 1e-12);
  EXPECT_NEAR(mean->v, (a1 * v1 + a2 * v2) / (a1 + a2), 1e-12);
  // Pulled from the big blob toward the small one.
  EXPECT_GT(mean->u, u1);
  EXPECT_GT(mean->v, v1);
}

TEST(Components, TieGoesToFirstRowMajor) {
  BitMask m(20, 20);
  paint_rect(m, 10, 2, 3, 3);
  paint_rect(m, 1, 10, 3, 3);
  paint_rect(m, 15, 2, 3, 3);
  const auto c = largest_component(m);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->pixels.front(), static_cast<std::size_t>(2 * 20 + 10));
}

TEST(Components, MatchBruteForceLabeler) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = random_mask(rng);
    const auto oracle = brute_components(m);
    const auto comps = connected_components(m);
    ASSERT_EQ(comps.size(), oracle.size());
    std::size_t best = 0;
    std::size_t best_first = 0;
    for (const auto& [root, pix] : oracle) {
      // Roots are the smallest raster index, so map order is row-major order of first pixels.
      if (pix.size() > best) {
        best = pix.size();
        best_first = pix.front();
      }
    }
    for (const auto& c : comps) {
      const auto it = oracle.find(static_cast<int>(c.pixels.front()));
      ASSERT_NE(it, oracle.end());
      auto sorted = c.pixels;
      std::sort(sorted.begin(), sorted.end());
      ASSERT_EQ(sorted, it->second);
      ASSERT_EQ(c.area, it->second.size());
    }
    const auto largest = largest_component(m);
    if (oracle.empty()) {
      ASSERT_FALSE(largest);
      continue;
    }
    ASSERT_TRUE(largest);
    ASSERT_EQ(largest->area, best);
    ASSERT_EQ(largest->pixels.front(), best_first);
    for (const auto& c : comps) ASSERT_GE(largest->area, c.area);
    if (oracle.size() == 1) {
      const auto mean = mean_centroid(m);
      ASSERT_NEAR(mean->u, largest->centroid.u, 1e-9);
      ASSERT_NEAR(mean->v, largest->centroid.v, 1e-9);
    }
  }
}

TEST(Backproject, PrincipalPointIdentityCamera) {
  render::CameraModel cam;
  const Vec3 p = backproject(cam.cx, cam.cy, 0.5, cam);
  EXPECT_NEAR(p.x(), 0.0, 1e-15);
  EXPECT_NEAR(p.y(), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(p.z(), -0.5);
}

TEST(Backproject, InvalidDepthThrows) {
  render::CameraModel cam;
  EXPECT_THROW(backproject(1, 1, 0.0, cam), InvalidDepthError);
  EXPECT_THROW(backproject(1, 1, -0.1, cam), InvalidDepthError);
  EXPECT_THROW(backproject(1, 1, std::nan(""), cam), InvalidDepthError);
}

TEST(Backproject, FlipErrorLaw) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> px(0.0, 255.0);
  std::uniform_real_distribution<double> depth(0.2, 2.0);
  BackprojectOptions flipped;
  flipped.flip_y = true;
  for (auto conv : {render::ImageConvention::GlBottomUp, render::ImageConvention::CvTopDown}) {
    auto cam = render::default_camera();
    cam.convention = conv;
    for (int i = 0; i < 1000; ++i) {
      const double u = px(rng), v = px(rng), d = depth(rng);
      const double err = (backproject(u, v, d, cam, flipped) - backproject(u, v, d, cam)).norm();
      const double law = 2.0 * std::abs(v - cam.cy) * d / cam.fy;
      EXPECT_NEAR(err, law, 1e-9 * std::max(law, 1e-12) + 1e-15);
    }
  }
}

TEST(SampleDepth, MedianIgnoresZeros) {
  auto img = gray_image(5, 5);
  std::fill(img.depth.begin(), img.depth.end(), 0.0f);
  EXPECT_FALSE(sample_depth(img, 2, 2));
  img.depth[2 * 5 + 2] = 1.0f;
  img.depth[1 * 5 + 1] = 3.0f;
  img.depth[3 * 5 + 3] = 2.0f;
  EXPECT_DOUBLE_EQ(*sample_depth(img, 2, 2), 2.0);
  // Corner window is clipped to the raster.
  img.depth[0] = 4.0f;
  EXPECT_TRUE(sample_depth(img, 0, 0));
}

TEST(Features, GrayFrameDetectsNothing) {
  const auto cam = render::default_camera();
  Proprio pr;
  pr.eef_pos = Vec3(0.1, 0.2, 1.0);
  pr.gripper_aperture = 0.05;
  pr.step = 12;
  const auto f = extract_features(gray_image(), cam, pr,
                                  {TargetSpec{"cube", ColorSpec::red()}, TargetSpec{"cubeB", ColorSpec::green()}});
  ASSERT_EQ(f.targets.size(), 2u);
  for (const auto& [name, t] : f.targets) {
    EXPECT_FALSE(t.detected);
    EXPECT_FALSE(t.object_pos);
  }
  EXPECT_EQ(f.eef_pos, pr.eef_pos);
  EXPECT_EQ(f.gripper_aperture, 0.05);
  EXPECT_EQ(f.step, 12);
}

TEST(Features, CalibratedLiftEstimateWithinTwoCentimetres) {
  const auto cam = render::default_camera();
  TargetSpec t{"cube", ColorSpec::red()};
  t.depth_bias = 0.02;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto state = sim::reset(sim::make_task(sim::TaskId::Lift), seed);
    const auto f = locate_target(render::render(state, cam), cam, t);
    ASSERT_TRUE(f.detected);
    EXPECT_LT((*f.object_pos - state.objects[0].pose).norm(), 0.02) << "seed " << seed;
  }
}

TEST(Features, DepthBiasShiftsZExactly) {
  const auto cam = render::default_camera();
  const auto img = render::render(sim::reset(sim::make_task(sim::TaskId::Lift), 4), cam);
  TargetSpec plain{"cube", ColorSpec::red()};
  TargetSpec biased = plain;
  biased.depth_bias = 0.025;
  const auto a = locate_target(img, cam, plain);
  const auto b = locate_target(img, cam, biased);
  ASSERT_TRUE(a.detected && b.detected);
  EXPECT_DOUBLE_EQ(b.object_pos->z(), a.object_pos->z() - 0.025);
  EXPECT_DOUBLE_EQ(b.object_pos->x(), a.object_pos->x());
  EXPECT_DOUBLE_EQ(b.object_pos->y(), a.object_pos->y());
}

TEST(Features, NoDepthMeansNotDetected) {
  const auto cam = render::default_camera();
  auto img = render::render(sim::reset(sim::make_task(sim::TaskId::Lift), 4), cam);
  std::fill(img.depth.begin(), img.depth.end(), 0.0f);
  const auto f = locate_target(img, cam, TargetSpec{"cube", ColorSpec::red()});
  EXPECT_FALSE(f.detected);
  EXPECT_FALSE(f.object_pos);
}

TEST(Features, SilverFindsNothingOnRedCan) {
  const auto cam = render::default_camera();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto img = render::render(sim::reset(sim::make_task(sim::TaskId::PickPlace), seed), cam);
    EXPECT_FALSE(locate_target(img, cam, TargetSpec{"can", ColorSpec::silver()}).detected);
  }
}
