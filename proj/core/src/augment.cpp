#include "umbra/augment.hpp"

#include <cmath>

namespace umbra::data {
using world::SceneSample;

ToneCurve ToneCurve::identity() {
  ToneCurve c;
  for (auto& ch : c.channels) ch = {{{0.0, 0.0}, {1.0 / 3.0, 1.0 / 3.0}, {2.0 / 3.0, 2.0 / 3.0}, {1.0, 1.0}}};
  return c;
}

void ToneCurve::validate() const {
  for (const auto& pts : channels) {
    if (pts.front().x != 0.0 || pts.front().y != 0.0 || pts.back().x != 1.0 || pts.back().y != 1.0)
      throw InvalidArgument("tone curve endpoints must be (0,0) and (1,1)");
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (!(pts[i].x > pts[i - 1].x)) throw InvalidArgument("tone curve control points must increase strictly in x");
      if (pts[i].y < pts[i - 1].y) throw InvalidArgument("tone curve control points must be monotone in y");
      if (pts[i].y < 0.0 || pts[i].y > 1.0) throw InvalidArgument("tone curve control points must lie in [0,1]^2");
    }
  }
}

double ToneCurve::evaluate(int channel, double x) const {
  const auto& p = channels[channel];
  constexpr int n = 4;
  std::array<double, n> m{};
  std::array<double, n - 1> secant{};
  for (int i = 0; i < n - 1; ++i) secant[i] = (p[i + 1].y - p[i].y) / (p[i + 1].x - p[i].x);
  m[0] = secant[0];
  m[n - 1] = secant[n - 2];
  for (int i = 1; i < n - 1; ++i) m[i] = (p[i + 1].y - p[i - 1].y) / (p[i + 1].x - p[i - 1].x);
  for (int i = 0; i < n - 1; ++i) {
    if (secant[i] == 0.0) {
      m[i] = m[i + 1] = 0.0;
      continue;
    }
    const double a = m[i] / secant[i], b = m[i + 1] / secant[i];
    const double r = a * a + b * b;
    if (r > 9.0) {
      const double tau = 3.0 / std::sqrt(r);
      m[i] = tau * a * secant[i];
      m[i + 1] = tau * b * secant[i];
    }
  }
  x = std::clamp(x, 0.0, 1.0);
  int seg = 0;
  while (seg < n - 2 && x > p[seg + 1].x) ++seg;
  const double h = p[seg + 1].x - p[seg].x;
  const double t = (x - p[seg].x) / h;
  const double t2 = t * t, t3 = t2 * t;
  const double y = (2 * t3 - 3 * t2 + 1) * p[seg].y + (t3 - 2 * t2 + t) * h * m[seg] + (-2 * t3 + 3 * t2) * p[seg + 1].y +
                   (t3 - t2) * h * m[seg + 1];
  return std::clamp(y, 0.0, 1.0);
}

void AugmentationParams::validate() const {
  if (!(k_min >= 0.0 && k_min <= k_max && k_max <= 1.5)) throw InvalidArgument("intensity range must satisfy 0 <= k_min <= k_max <= 1.5");
  for (double p : {p_intensity, p_curve, p_drop, p_flip})
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("augmentation probabilities must lie in [0, 1]");
  if (!(curve_jitter >= 0.0 && curve_jitter < 0.2)) throw InvalidArgument("curve_jitter must lie in [0, 0.2)");
}

SceneSample augment_intensity(const SceneSample& sample, double k) {
  if (!(k >= 0.0) || !std::isfinite(k)) throw InvalidArgument("augment_intensity: k must be finite and >= 0");
  SceneSample out = sample;
  out.shadow_gain = sample.shadow_gain * k;
  const auto& light = sample.spec.light;
  for (double t : light.shadow_tint)
    if (out.shadow_gain * light.shadow_strength * (1.0 - t) > 1.0)
      throw InvalidArgument("augment_intensity: rescaled shadow would invert pixel values");
  out.image_shadowed = world::composite_shadow(sample.image_shadowfree, sample.shadow_union(), sample.spec.light, out.shadow_gain);
  return out;
}

SceneSample augment_color_curve(const SceneSample& sample, const ToneCurve& curve) {
  curve.validate();
  SceneSample out = sample;
  const MaskGray mask = sample.shadow_union();
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const double m = mask(y, x);
      if (m <= 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        const double v = sample.image_shadowed(y, x, c);
        out.image_shadowed(y, x, c) = static_cast<float>((1.0 - m) * v + m * curve.evaluate(c, v));
      }
    }
  return out;
}

SceneSample augment_shadow_drop(const SceneSample& sample, int object_index) {
  if (object_index < 0 || object_index >= static_cast<int>(sample.shadow_masks.size()))
    throw InvalidArgument("augment_shadow_drop: object index out of range");
  SceneSample out = sample;
  const MaskGray dropped = sample.shadow_masks[object_index];
  out.shadow_masks[object_index] = MaskGray(sample.height(), sample.width());
  const MaskGray rest = out.shadow_union();
  const ImageRGB recomposited = world::composite_shadow(sample.image_shadowfree, rest, sample.spec.light, sample.shadow_gain);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      if (dropped(y, x) > 0.0f)
        for (int c = 0; c < 3; ++c) out.image_shadowed(y, x, c) = recomposited(y, x, c);
  return out;
}

SceneSample flip_horizontal(const SceneSample& sample) {
  SceneSample out;
  out.image_shadowed = flip_x(sample.image_shadowed);
  out.image_shadowfree = flip_x(sample.image_shadowfree);
  for (const auto& m : sample.object_masks) out.object_masks.push_back(flip_x(m));
  for (const auto& m : sample.shadow_masks) out.shadow_masks.push_back(flip_x(m));
  out.spec = world::mirrored_x(sample.spec);
  out.annotation = sample.annotation;
  out.shadow_gain = sample.shadow_gain;
  return out;
}

ToneCurve random_curve(Rng& rng, const AugmentationParams& params) {
  ToneCurve curve;
  for (auto& pts : curve.channels) {
    const double x1 = rng.uniform(0.25, 0.4), x2 = rng.uniform(0.6, 0.75);
    const double y1 = std::clamp(x1 + rng.uniform(-params.curve_jitter, params.curve_jitter), 0.0, 1.0);
    const double y2 = std::clamp(x2 + rng.uniform(-params.curve_jitter, params.curve_jitter), y1, 1.0);
    pts = {{{0.0, 0.0}, {x1, y1}, {x2, y2}, {1.0, 1.0}}};
  }
  return curve;
}

SceneSample augment_for_training(const SceneSample& sample, const AugmentationParams& params, Rng& rng) {
  SceneSample out = sample;
  if (!out.shadow_masks.empty() && out.annotation == world::Annotation::full && rng.bernoulli(params.p_drop))
    out = augment_shadow_drop(out, static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(out.shadow_masks.size()) - 1)));
  if (rng.bernoulli(params.p_intensity)) out = augment_intensity(out, rng.uniform(params.k_min, params.k_max));
  if (rng.bernoulli(params.p_curve)) out = augment_color_curve(out, random_curve(rng, params));
  if (rng.bernoulli(params.p_flip)) out = flip_horizontal(out);
  return out;
}

}  // namespace umbra::data
