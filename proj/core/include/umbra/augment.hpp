#pragma once

#include <array>

#include "umbra/rng.hpp"
#include "umbra/world.hpp"

/// Shadow-specific training augmentations. Each one recomposites through the
/// renderer's multiplicative shadow model, so their results can be checked
/// against a fresh render.
namespace umbra::data {

/// Per-channel monotone tone curve through four control points; the first and
/// last are pinned to (0, 0) and (1, 1). Interpolation is Catmull-Rom with
/// Fritsch-Carlson tangent limiting, output clamped to [0, 1].
struct ToneCurve {
  using Points = std::array<world::Vec2, 4>;
  std::array<Points, 3> channels;

  static ToneCurve identity();
  /// Throws InvalidArgument for unpinned endpoints or non-monotone points.
  void validate() const;
  double evaluate(int channel, double x) const;
};

struct AugmentationParams {
  double k_min = 0.4;
  double k_max = 1.2;
  double p_intensity = 0.5;
  double p_curve = 0.5;
  double curve_jitter = 0.08;
  double p_drop = 0.2;
  double p_flip = 0.5;

  void validate() const;
};

/// Rescales the baked-in shadow strength by `k` (k = 0 removes all shadows).
world::SceneSample augment_intensity(const world::SceneSample& sample, double k);
/// Applies `curve` inside the soft shadow union, blended by the mask value.
world::SceneSample augment_color_curve(const world::SceneSample& sample, const ToneCurve& curve);
/// Removes one object's shadow from the shadowed image and zeroes its mask.
world::SceneSample augment_shadow_drop(const world::SceneSample& sample, int object_index);
/// Mirrors every raster and the scene description about the vertical axis.
world::SceneSample flip_horizontal(const world::SceneSample& sample);

ToneCurve random_curve(Rng& rng, const AugmentationParams& params);

/// Drop, intensity, curve and flip, each drawn with its configured probability.
/// Drop runs first because only the pristine photometric model inverts exactly.
world::SceneSample augment_for_training(const world::SceneSample& sample, const AugmentationParams& params, Rng& rng);

}  // namespace umbra::data
