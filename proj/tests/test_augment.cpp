#include <gtest/gtest.h>

#include "oracles/spline_oracle.hpp"
#include "test_support.hpp"
#include "umbra/augment.hpp"

using namespace umbra;
using namespace test_support;

namespace {

world::SceneSample two_object_sample() {
  return world::render_scene(scene({circle(18, 40, 5, 10), rect(38, 34, 46, 42, 8)}, light(200, 45, 1.0)));
}

float max_abs_diff(const ImageRGB& a, const ImageRGB& b) {
  float d = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

}  // namespace

TEST(AugmentIntensity, ZeroRemovesShadowsAndOneIsIdentity) {
  const auto s = two_object_sample();
  EXPECT_LE(max_abs_diff(data::augment_intensity(s, 0.0).image_shadowed, s.image_shadowfree), 1e-6f);
  EXPECT_LE(max_abs_diff(data::augment_intensity(s, 1.0).image_shadowed, s.image_shadowed), 1e-6f);
}

TEST(AugmentIntensity, HalfIsMidpointOfShadowedAndFree) {
  const auto s = two_object_sample();
  const auto half = data::augment_intensity(s, 0.5);
  for (std::size_t i = 0; i < s.image_shadowed.values().size(); ++i) {
    const float mid = 0.5f * (s.image_shadowed.values()[i] + s.image_shadowfree.values()[i]);
    EXPECT_NEAR(half.image_shadowed.values()[i], mid, 1e-5f);
  }
}

TEST(AugmentIntensity, InverseFactorRestoresImage) {
  const auto s = two_object_sample();
  for (double k : {0.4, 0.7, 1.2}) {
    const auto back = data::augment_intensity(data::augment_intensity(s, k), 1.0 / k);
    EXPECT_LE(max_abs_diff(back.image_shadowed, s.image_shadowed), 1e-5f) << k;
    EXPECT_NEAR(back.shadow_gain, 1.0, 1e-12);
  }
}

TEST(AugmentIntensity, RejectsNegativeAndInvertingFactors) {
  const auto s = two_object_sample();
  EXPECT_THROW(data::augment_intensity(s, -0.1), InvalidArgument);
  EXPECT_THROW(data::augment_intensity(s, 10.0), InvalidArgument);
}

TEST(ToneCurve, IdentityIsIdentity) {
  const auto id = data::ToneCurve::identity();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i <= 100; ++i) EXPECT_NEAR(id.evaluate(c, i / 100.0), i / 100.0, 1e-12);
  const auto s = two_object_sample();
  EXPECT_LE(max_abs_diff(data::augment_color_curve(s, id).image_shadowed, s.image_shadowed), 1e-6f);
}

TEST(ToneCurve, MatchesDirectHermiteWhenUnlimited) {
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const double x1 = rng.uniform(0.25, 0.4), x2 = rng.uniform(0.6, 0.75);
    const double y1 = x1 + rng.uniform(-0.05, 0.05), y2 = x2 + rng.uniform(-0.05, 0.05);
    const std::array<oracle::P, 4> p{{{0, 0}, {x1, y1}, {x2, y2}, {1, 1}}};
    // Skip configurations where the monotonicity limiter would engage.
    bool limited = false;
    for (int i = 0; i < 3; ++i) {
      const double sec = (p[i + 1].y - p[i].y) / (p[i + 1].x - p[i].x);
      auto tangent = [&](int k) {
        if (k == 0) return (p[1].y - p[0].y) / (p[1].x - p[0].x);
        if (k == 3) return (p[3].y - p[2].y) / (p[3].x - p[2].x);
        return (p[k + 1].y - p[k - 1].y) / (p[k + 1].x - p[k - 1].x);
      };
      const double a = tangent(i) / sec, b = tangent(i + 1) / sec;
      if (a * a + b * b > 9.0) limited = true;
    }
    if (limited) continue;
    data::ToneCurve curve;
    for (auto& ch : curve.channels) ch = {{{0, 0}, {x1, y1}, {x2, y2}, {1, 1}}};
    curve.validate();
    for (int i = 0; i <= 64; ++i) {
      const double x = i / 64.0;
      EXPECT_NEAR(curve.evaluate(1, x), std::clamp(oracle::catmull_rom(p, x), 0.0, 1.0), 1e-12);
    }
    ++checked;
  }
  EXPECT_GT(checked, 25);
}

TEST(ToneCurve, RejectsNonMonotoneAndUnpinned) {
  auto c = data::ToneCurve::identity();
  c.channels[0][2].y = 0.2;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = data::ToneCurve::identity();
  c.channels[2][3] = {1.0, 0.9};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = data::ToneCurve::identity();
  c.channels[1][2].x = c.channels[1][1].x;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(ToneCurve, RandomCurvesAreValidAndMonotone) {
  Rng rng(11);
  data::AugmentationParams params;
  for (int trial = 0; trial < 100; ++trial) {
    const auto curve = data::random_curve(rng, params);
    EXPECT_NO_THROW(curve.validate());
    for (int c = 0; c < 3; ++c) {
      double prev = -1.0;
      for (int i = 0; i <= 50; ++i) {
        const double y = curve.evaluate(c, i / 50.0);
        EXPECT_GE(y, prev - 1e-12);
        prev = y;
      }
    }
  }
}

TEST(ColorCurve, ZeroMaskLeavesImageUntouched) {
  auto s = world::render_scene(scene({circle(32, 32, 5, 6)}, light(0, 90)));
  s = data::augment_intensity(s, 0.0);
  for (auto& m : s.shadow_masks) m = MaskGray(s.height(), s.width());
  data::ToneCurve curve = data::ToneCurve::identity();
  curve.channels[0][1].y = 0.5;
  EXPECT_EQ(data::augment_color_curve(s, curve).image_shadowed, s.image_shadowed);
}

TEST(ShadowDrop, ZeroesMaskAndRestoresBackgroundUnderIt) {
  const auto s = two_object_sample();
  const auto d = data::augment_shadow_drop(s, 0);
  EXPECT_TRUE(is_all_zero(d.shadow_masks[0]));
  EXPECT_EQ(d.shadow_masks[1], s.shadow_masks[1]);
  const ImageRGB expected = world::composite_shadow(s.image_shadowfree, s.shadow_masks[1], s.spec.light);
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        if (s.shadow_masks[0](y, x) > 0.0f)
          EXPECT_NEAR(d.image_shadowed(y, x, c), expected(y, x, c), 1e-6f);
        else
          EXPECT_EQ(d.image_shadowed(y, x, c), s.image_shadowed(y, x, c));
      }
}

TEST(ShadowDrop, DroppingEveryShadowGivesShadowFree) {
  auto s = two_object_sample();
  s = data::augment_shadow_drop(data::augment_shadow_drop(s, 0), 1);
  EXPECT_LE(max_abs_diff(s.image_shadowed, s.image_shadowfree), 1e-6f);
  EXPECT_THROW(data::augment_shadow_drop(s, 2), InvalidArgument);
}

TEST(Flip, IsInvolution) {
  const auto s = two_object_sample();
  const auto ff = data::flip_horizontal(data::flip_horizontal(s));
  EXPECT_EQ(ff.image_shadowed, s.image_shadowed);
  EXPECT_NEAR(ff.spec.light.azimuth_rad, s.spec.light.azimuth_rad, 1e-12);
  EXPECT_EQ(ff.spec.objects, s.spec.objects);
  EXPECT_EQ(ff.shadow_masks, s.shadow_masks);
}

TEST(Flip, MatchesRenderOfMirroredScene) {
  Rng rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    const auto spec = world::sample_scene_spec(rng.next_u64(), {64, 64});
    const auto flipped = data::flip_horizontal(world::render_scene(spec));
    const auto rerendered = world::render_scene(world::mirrored_x(spec));
    EXPECT_LE(max_abs_diff(flipped.image_shadowed, rerendered.image_shadowed), 1e-5f);
    ASSERT_EQ(flipped.shadow_masks.size(), rerendered.shadow_masks.size());
    for (std::size_t k = 0; k < flipped.shadow_masks.size(); ++k) {
      float d = 0;
      for (std::size_t i = 0; i < flipped.shadow_masks[k].values().size(); ++i)
        d = std::max(d, std::abs(flipped.shadow_masks[k].values()[i] - rerendered.shadow_masks[k].values()[i]));
      EXPECT_LE(d, 1e-5f);
    }
  }
}

TEST(AugmentForTraining, KeepsInvariants) {
  Rng rng(4);
  data::AugmentationParams params;
  params.validate();
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = world::render_scene(world::sample_scene_spec(rng.next_u64(), {64, 64}));
    const auto a = data::augment_for_training(s, params, rng);
    EXPECT_TRUE(in_unit_range(a.image_shadowed));
    EXPECT_EQ(a.shadow_masks.size(), s.shadow_masks.size());
    EXPECT_EQ(a.object_masks.size(), s.object_masks.size());
  }
}

TEST(AugmentationParams, Validation) {
  data::AugmentationParams p;
  p.k_min = 1.3;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = {};
  p.p_flip = 1.5;
  EXPECT_THROW(p.validate(), InvalidArgument);
}
