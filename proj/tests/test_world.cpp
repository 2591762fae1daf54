#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "umbra/dataset.hpp"
#include "umbra/rng.hpp"
#include "umbra/world.hpp"

using namespace umbra;
using namespace umbra::world;
using test_support::light;

namespace {

double mask_iou(const MaskGray& a, const MaskGray& b) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const bool pa = a.values()[i] > 0.5f, pb = b.values()[i] > 0.5f;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

/// Max over set pixels of the pixel-center projection onto `dir`.
double max_projection(const MaskGray& m, Vec2 dir) {
  double best = -1e300;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(y, x) > 0.5f) best = std::max(best, (x + 0.5) * dir.x + (y + 0.5) * dir.y);
  return best;
}

/// Random object + light whose shadow stays well inside a 96x96 frame.
std::pair<ObjectSpec, LightSpec> random_case(Rng& rng, bool with_polygons = true) {
  const int kind = static_cast<int>(rng.uniform_int(0, with_polygons ? 2 : 1));
  const double cx = std::round(rng.uniform(40, 56) * 8) / 8, cy = std::round(rng.uniform(40, 56) * 8) / 8;
  const double r = std::round(rng.uniform(3, 7) * 8) / 8;
  ObjectSpec o;
  if (kind == 0) {
    o.footprint = Circle{{cx, cy}, r};
  } else if (kind == 1) {
    o.footprint = Rectangle{{cx - r, cy - r * 0.7}, {cx + r, cy + r * 0.7}};
  } else {
    ConvexPolygon p;
    for (int i = 0; i < 6; ++i) {
      const double a = 2 * std::numbers::pi * i / 6 + 0.3;
      p.vertices.push_back({std::round((cx + r * std::cos(a)) * 8) / 8, std::round((cy + r * std::sin(a)) * 8) / 8});
    }
    o.footprint = p;
  }
  o.height_px = std::round(rng.uniform(4, 12) * 8) / 8;
  LightSpec l = light(rng.uniform(0, 359.9), rng.uniform(25, 65));
  return {o, l};
}

}  // namespace

TEST(SampleSceneSpec, DeterministicForSeed) {
  const auto a = sample_scene_spec(7, {64, 64});
  const auto b = sample_scene_spec(7, {64, 64});
  EXPECT_EQ(dataset::to_json(a).dump(), dataset::to_json(b).dump());
  EXPECT_EQ(a, b);
}

TEST(SampleSceneSpec, SeedSensitive) {
  EXPECT_NE(dataset::to_json(sample_scene_spec(7, {64, 64})).dump(), dataset::to_json(sample_scene_spec(8, {64, 64})).dump());
}

TEST(SampleSceneSpec, ElevationsWithinRangeForHundredSeeds) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto spec = sample_scene_spec(seed, {64, 64});
    const double deg = spec.light.elevation_rad * 180.0 / std::numbers::pi;
    EXPECT_GE(deg, 20.0) << "seed " << seed;
    EXPECT_LE(deg, 70.0) << "seed " << seed;
    EXPECT_GE(spec.objects.size(), 1u);
    EXPECT_LE(spec.objects.size(), 4u);
    for (const auto& o : spec.objects) EXPECT_GE(shadow_in_frame_fraction(o, spec.light, spec.resolution), 0.9);
  }
}

TEST(SampleSceneSpec, RejectsTinyResolution) { EXPECT_THROW(sample_scene_spec(1, {16, 16}), InvalidArgument); }

TEST(ProjectShadow, VerticalSegmentAtFortyFiveDegrees) {
  // One-pixel-wide column footprint at x in [10, 11], rows 20..29.
  const auto obj = test_support::rect(10, 20, 11, 30, 10);
  const MaskGray m = project_shadow(obj, light(0, 45), {64, 64});
  for (int y = 20; y < 30; ++y) {
    int last = -1;
    for (int x = 0; x < 64; ++x)
      if (m(y, x) > 0.5f) last = x;
    EXPECT_EQ(last - 10, 10) << "row " << y;
    EXPECT_EQ(m(y, 9), 0.0f);
  }
  EXPECT_EQ(m(19, 15), 0.0f);
  EXPECT_EQ(m(30, 15), 0.0f);
}

TEST(ProjectShadow, OverheadLightEqualsFootprint) {
  const auto obj = test_support::circle(30, 30, 6.5, 12);
  EXPECT_EQ(project_shadow(obj, light(30, 90), {64, 64}), rasterize_footprint(obj, {64, 64}));
}

TEST(ProjectShadow, RejectsNonPositiveElevation) {
  auto l = light(0, 45);
  l.elevation_rad = 0.0;
  EXPECT_THROW(project_shadow(test_support::circle(30, 30, 4, 5), l, {64, 64}), InvalidArgument);
}

TEST(ProjectShadow, MirrorSymmetryOnRandomSpecs) {
  Rng rng(2024);
  for (int i = 0; i < 20; ++i) {
    const auto [obj, l] = random_case(rng);
    const Resolution res{96, 96};
    const MaskGray direct = flip_x(project_shadow(obj, l, res));
    const MaskGray mirrored = project_shadow(mirrored_x(obj, res.width), mirrored_azimuth(l), res);
    EXPECT_EQ(direct, mirrored) << "case " << i;
  }
}

TEST(ProjectShadow, OffsetMatchesHeightOverTanElevation) {
  Rng rng(99);
  for (int i = 0; i < 20; ++i) {
    const auto [obj, l] = random_case(rng);
    const Resolution res{96, 96};
    const MaskGray shadow = project_shadow(obj, l, res);
    const MaskGray footprint = rasterize_footprint(obj, res);
    const Vec2 d = l.direction();
    const double measured = max_projection(shadow, d) - max_projection(footprint, d);
    const double expected = obj.height_px / std::tan(l.elevation_rad);
    EXPECT_NEAR(measured, expected, 1.0) << "case " << i;
  }
}

TEST(ProjectShadow, HigherElevationShrinksArea) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto [obj, l] = random_case(rng);
    std::size_t previous = SIZE_MAX;
    for (double elev : {20.0, 35.0, 50.0, 65.0}) {
      l.elevation_rad = elev * std::numbers::pi / 180.0;
      const std::size_t area = count_above(project_shadow(obj, l, {96, 96}));
      EXPECT_LT(area, previous) << "case " << i << " elevation " << elev;
      previous = area;
    }
  }
}

TEST(ProjectShadow, SoftShadowStaysInUnitRange) {
  const MaskGray m = project_shadow(test_support::circle(30, 30, 5, 10), light(30, 40, 2.0), {64, 64});
  EXPECT_TRUE(in_unit_range(m));
  bool has_fraction = false;
  for (float v : m.values()) has_fraction |= (v > 0.05f && v < 0.95f);
  EXPECT_TRUE(has_fraction);
}

TEST(RenderScene, ZeroStrengthLeavesImageUnshadowed) {
  auto l = light(20, 40);
  l.shadow_strength = 0.0;
  const auto s = render_scene(test_support::scene({test_support::circle(30, 30, 5, 10)}, l));
  EXPECT_EQ(s.image_shadowed, s.image_shadowfree);
}

TEST(RenderScene, RejectsBlackTint) {
  auto l = light(20, 40);
  l.shadow_strength = 1.0;
  l.shadow_tint = {0.0, 0.0, 0.0};
  EXPECT_THROW(l.validate(), InvalidArgument);
  EXPECT_THROW(render_scene(test_support::scene({test_support::circle(30, 30, 5, 10)}, l)), InvalidArgument);
}

TEST(RenderScene, WhiteTintMeansNoDarkening) {
  // I = I_free * (1 - 0.5 * (1 - 1) * mask) = I_free.
  ImageRGB gray(16, 16, 0.8f);
  MaskGray mask(16, 16, 1.0f);
  auto l = light(0, 45);
  l.shadow_strength = 0.5;
  l.shadow_tint = {1.0, 1.0, 1.0};
  EXPECT_EQ(composite_shadow(gray, mask, l), gray);
}

TEST(RenderScene, PixelsOutsideShadowsAreUntouched) {
  for (std::uint64_t seed : {3u, 11u, 19u}) {
    const auto s = render_scene(sample_scene_spec(seed, {64, 64}));
    const MaskGray u = s.shadow_union();
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (u(y, x) == 0.0f)
          for (int c = 0; c < 3; ++c) ASSERT_EQ(s.image_shadowed(y, x, c), s.image_shadowfree(y, x, c));
  }
}

TEST(RenderScene, SampleInvariants) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto s = render_scene(sample_scene_spec(seed, {64, 64}));
    ASSERT_EQ(s.object_masks.size(), s.shadow_masks.size());
    EXPECT_TRUE(in_unit_range(s.image_shadowed));
    EXPECT_TRUE(in_unit_range(s.image_shadowfree));
    for (std::size_t a = 0; a < s.object_masks.size(); ++a)
      for (std::size_t b = a + 1; b < s.object_masks.size(); ++b)
        for (std::size_t i = 0; i < s.object_masks[a].values().size(); ++i)
          ASSERT_FALSE(s.object_masks[a].values()[i] > 0.5f && s.object_masks[b].values()[i] > 0.5f);
  }
}

TEST(RenderScene, FlipEquivariance) {
  Rng rng(77);
  for (int i = 0; i < 10; ++i) {
    auto spec = sample_scene_spec(rng.next_u64(), {64, 64});
    spec.light.softness_px = 0.0;
    const auto direct = render_scene(spec);
    const auto mirrored = render_scene(mirrored_x(spec));
    EXPECT_EQ(flip_x(direct.image_shadowed), mirrored.image_shadowed) << i;
    EXPECT_EQ(flip_x(direct.image_shadowfree), mirrored.image_shadowfree) << i;
    for (std::size_t k = 0; k < spec.objects.size(); ++k) EXPECT_EQ(flip_x(direct.shadow_masks[k]), mirrored.shadow_masks[k]);
  }
}

TEST(Relocation, ZeroOffsetIsIdentity) {
  const auto s = render_scene(sample_scene_spec(4, {64, 64}));
  const auto [before, after] = make_relocation_pair(s, 0, {0, 0});
  EXPECT_EQ(before.image_shadowed, after.image_shadowed);
  EXPECT_EQ(before.image_shadowfree, after.image_shadowfree);
  EXPECT_EQ(before.shadow_masks, after.shadow_masks);
  EXPECT_EQ(before.object_masks, after.object_masks);
}

TEST(Relocation, ShadowIsTranslationEquivariant) {
  const auto s = render_scene(test_support::scene({test_support::circle(24, 30, 5, 8)}, light(10, 40)));
  const auto [before, after] = make_relocation_pair(s, 0, {5, 0});
  EXPECT_GE(mask_iou(after.shadow_masks[0], shift(before.shadow_masks[0], 5, 0)), 0.98);
  EXPECT_EQ(after.object_masks[0], shift(before.object_masks[0], 5, 0));
}

TEST(Relocation, TranslationEquivarianceOnRandomObjects) {
  Rng rng(31);
  for (int i = 0; i < 10; ++i) {
    auto [obj, l] = random_case(rng);
    auto spec = test_support::scene({obj}, l, 96);
    const auto s = render_scene(spec);
    const int dx = static_cast<int>(rng.uniform_int(-6, 6)), dy = static_cast<int>(rng.uniform_int(-6, 6));
    const auto [before, after] = make_relocation_pair(s, 0, {dx, dy});
    EXPECT_GE(mask_iou(after.shadow_masks[0], shift(before.shadow_masks[0], dx, dy)), 0.98) << i;
  }
}

TEST(Relocation, OffFrameIsRejected) {
  const auto s = render_scene(test_support::scene({test_support::circle(50, 30, 5, 8)}, light(0, 30)));
  EXPECT_THROW(make_relocation_pair(s, 0, {12, 0}), OutOfFrameError);
  EXPECT_THROW(make_relocation_pair(s, 0, {0, 40}), OutOfFrameError);
}

TEST(Relocation, CollisionIsRejected) {
  const auto s = render_scene(test_support::scene({test_support::circle(20, 30, 5, 8), test_support::circle(40, 30, 5, 8)}, light(90, 50)));
  EXPECT_THROW(make_relocation_pair(s, 0, {18, 0}), InvalidArgument);
}
