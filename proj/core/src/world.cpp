#include "umbra/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "umbra/rng.hpp"

namespace umbra::world {
namespace {

constexpr double kPi = std::numbers::pi;

// Footprint coordinates live on a 1/8 pixel lattice so that mirroring and
// integer translation are exact in floating point.
double snap(double v) { return std::round(v * 8.0) / 8.0; }

struct Bounds {
  double x0, y0, x1, y1;
};

Bounds bounds_of(const Footprint& fp) {
  return std::visit(
      [](const auto& s) -> Bounds {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Circle>) {
          return {s.center.x - s.radius, s.center.y - s.radius, s.center.x + s.radius, s.center.y + s.radius};
        } else if constexpr (std::is_same_v<T, Rectangle>) {
          return {s.min.x, s.min.y, s.max.x, s.max.y};
        } else {
          Bounds b{1e300, 1e300, -1e300, -1e300};
          for (const auto& v : s.vertices) {
            b.x0 = std::min(b.x0, v.x), b.y0 = std::min(b.y0, v.y);
            b.x1 = std::max(b.x1, v.x), b.y1 = std::max(b.y1, v.y);
          }
          return b;
        }
      },
      fp);
}

struct HalfPlane {
  Vec2 normal;  // outward
  Vec2 anchor;
};

std::vector<HalfPlane> half_planes(const std::vector<Vec2>& verts) {
  Vec2 centroid;
  for (const auto& v : verts) centroid.x += v.x, centroid.y += v.y;
  centroid.x /= static_cast<double>(verts.size());
  centroid.y /= static_cast<double>(verts.size());
  std::vector<HalfPlane> planes;
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const Vec2& a = verts[i];
    const Vec2& b = verts[(i + 1) % verts.size()];
    Vec2 n{b.y - a.y, -(b.x - a.x)};
    if (n.x * (centroid.x - a.x) + n.y * (centroid.y - a.y) > 0) n = {-n.x, -n.y};
    planes.push_back({n, a});
  }
  return planes;
}

/// Point-in-swept-shape predicate: q is shadowed when q - u*sweep lies in the
/// footprint for some u in [0, 1]. A zero sweep tests the footprint itself.
class SweptShape {
 public:
  SweptShape(const Footprint& fp, Vec2 sweep) : fp_(fp), sweep_(sweep) {
    if (const auto* r = std::get_if<Rectangle>(&fp)) {
      planes_ = half_planes({r->min, {r->max.x, r->min.y}, r->max, {r->min.x, r->max.y}});
    } else if (const auto* p = std::get_if<ConvexPolygon>(&fp)) {
      planes_ = half_planes(p->vertices);
    }
    const Bounds b = bounds_of(fp);
    bounds_ = {std::min(b.x0, b.x0 + sweep.x), std::min(b.y0, b.y0 + sweep.y), std::max(b.x1, b.x1 + sweep.x),
               std::max(b.y1, b.y1 + sweep.y)};
  }

  const Bounds& bounds() const { return bounds_; }

  bool contains(double qx, double qy) const {
    if (const auto* c = std::get_if<Circle>(&fp_)) {
      // distance from q to the segment [c, c + sweep]
      const double px = qx - c->center.x, py = qy - c->center.y;
      const double len2 = sweep_.x * sweep_.x + sweep_.y * sweep_.y;
      double u = 0.0;
      if (len2 > 0.0) u = std::clamp((px * sweep_.x + py * sweep_.y) / len2, 0.0, 1.0);
      const double dx = px - u * sweep_.x, dy = py - u * sweep_.y;
      return dx * dx + dy * dy <= c->radius * c->radius;
    }
    double lo = 0.0, hi = 1.0;
    for (const auto& hp : planes_) {
      const double s = hp.normal.x * (qx - hp.anchor.x) + hp.normal.y * (qy - hp.anchor.y);
      const double t = hp.normal.x * sweep_.x + hp.normal.y * sweep_.y;
      if (t == 0.0) {
        if (s > 0.0) return false;
      } else if (t > 0.0) {
        lo = std::max(lo, s / t);
      } else {
        hi = std::min(hi, s / t);
      }
      if (lo > hi) return false;
    }
    return true;
  }

 private:
  Footprint fp_;
  Vec2 sweep_;
  std::vector<HalfPlane> planes_;
  Bounds bounds_{};
};

/// Rasterizes on the window [x0, x0 + w) x [y0, y0 + h) of pixel indices.
MaskGray rasterize(const SweptShape& shape, int x0, int y0, int h, int w) {
  MaskGray out(h, w);
  const Bounds& b = shape.bounds();
  const int ylo = std::max(0, static_cast<int>(std::floor(b.y0 - 1)) - y0);
  const int yhi = std::min(h - 1, static_cast<int>(std::ceil(b.y1 + 1)) - y0);
  const int xlo = std::max(0, static_cast<int>(std::floor(b.x0 - 1)) - x0);
  const int xhi = std::min(w - 1, static_cast<int>(std::ceil(b.x1 + 1)) - x0);
  for (int y = ylo; y <= yhi; ++y)
    for (int x = xlo; x <= xhi; ++x)
      if (shape.contains(x0 + x + 0.5, y0 + y + 0.5)) out(y, x) = 1.0f;
  return out;
}

Vec2 sweep_vector(const ObjectSpec& object, const LightSpec& light) {
  const Vec2 d = light.direction();
  const double len = light.shadow_length(object.height_px);
  return {d.x * len, d.y * len};
}

void check_rgb(const Rgb& c, double lo, double hi, const char* what) {
  for (double v : c)
    if (!(v >= lo && v <= hi)) throw InvalidArgument(std::string(what) + " component out of range");
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

void LightSpec::validate() const {
  if (!(azimuth_rad >= 0.0 && azimuth_rad < 2.0 * kPi)) throw InvalidArgument("light.azimuth_rad must lie in [0, 2pi)");
  if (!(elevation_rad > 0.0 && elevation_rad <= kPi / 2)) throw InvalidArgument("light.elevation_rad must lie in (0, pi/2]");
  if (!(shadow_strength >= 0.0 && shadow_strength <= 1.0)) throw InvalidArgument("light.shadow_strength must lie in [0, 1]");
  check_rgb(shadow_tint, 0.5, 1.0, "light.shadow_tint");
  if (!(softness_px >= 0.0) || !std::isfinite(softness_px)) throw InvalidArgument("light.softness_px must be >= 0");
}

Vec2 LightSpec::direction() const { return {std::cos(azimuth_rad), std::sin(azimuth_rad)}; }

double LightSpec::shadow_length(double height) const {
  if (!(elevation_rad > 0.0)) throw InvalidArgument("light elevation must be positive");
  if (elevation_rad >= kPi / 2) return 0.0;
  return height / std::tan(elevation_rad);
}

void ObjectSpec::validate(Resolution res) const {
  if (!(height_px > 0.0) || height_px > res.height) throw InvalidArgument("object.height_px must lie in (0, H]");
  check_rgb(albedo, 0.0, 1.0, "object.albedo");
  if (const auto* c = std::get_if<Circle>(&footprint); c && !(c->radius > 0.0))
    throw InvalidArgument("circle radius must be positive");
  if (const auto* r = std::get_if<Rectangle>(&footprint); r && !(r->max.x >= r->min.x && r->max.y >= r->min.y))
    throw InvalidArgument("rectangle min must not exceed max");
  if (const auto* p = std::get_if<ConvexPolygon>(&footprint); p && p->vertices.size() < 3)
    throw InvalidArgument("convex polygon needs at least 3 vertices");
  const Bounds b = bounds_of(footprint);
  if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > res.width || b.y1 > res.height)
    throw OutOfFrameError("object footprint leaves the frame");
}

void SceneSpec::validate() const {
  if (resolution.height <= 0 || resolution.width <= 0) throw InvalidArgument("resolution must be positive");
  check_rgb(ground_albedo, 0.0, 1.0, "ground_albedo");
  light.validate();
  if (objects.empty()) throw InvalidArgument("scene needs at least one object");
  for (const auto& o : objects) o.validate(resolution);
}

MaskGray SceneSample::shadow_union() const { return union_max(shadow_masks, height(), width()); }
MaskGray SceneSample::object_union() const { return union_max(object_masks, height(), width()); }

MaskGray rasterize_footprint(const ObjectSpec& object, Resolution res) {
  return rasterize(SweptShape(object.footprint, {0.0, 0.0}), 0, 0, res.height, res.width);
}

MaskGray project_shadow(const ObjectSpec& object, const LightSpec& light, Resolution res) {
  if (!(light.elevation_rad > 0.0)) throw InvalidArgument("project_shadow: elevation must be positive");
  const SweptShape shape(object.footprint, sweep_vector(object, light));
  if (light.softness_px <= 0.0) return rasterize(shape, 0, 0, res.height, res.width);
  // Blur on a padded canvas so the penumbra sees the shadow beyond the frame.
  const int pad = static_cast<int>(std::ceil(3.0 * light.softness_px)) + 1;
  const MaskGray hard = rasterize(shape, -pad, -pad, res.height + 2 * pad, res.width + 2 * pad);
  const MaskGray soft = gaussian_blur(hard, light.softness_px);
  MaskGray out(res.height, res.width);
  for (int y = 0; y < res.height; ++y)
    for (int x = 0; x < res.width; ++x) out(y, x) = soft(y + pad, x + pad);
  return out;
}

double shadow_in_frame_fraction(const ObjectSpec& object, const LightSpec& light, Resolution res) {
  const SweptShape shape(object.footprint, sweep_vector(object, light));
  const Bounds& b = shape.bounds();
  std::size_t total = 0, inside = 0;
  for (int y = static_cast<int>(std::floor(b.y0)) - 1; y <= static_cast<int>(std::ceil(b.y1)); ++y)
    for (int x = static_cast<int>(std::floor(b.x0)) - 1; x <= static_cast<int>(std::ceil(b.x1)); ++x)
      if (shape.contains(x + 0.5, y + 0.5)) {
        ++total;
        if (x >= 0 && y >= 0 && x < res.width && y < res.height) ++inside;
      }
  return total == 0 ? 1.0 : static_cast<double>(inside) / static_cast<double>(total);
}

ImageRGB render_ground(const SceneSpec& spec) {
  const int h = spec.resolution.height, w = spec.resolution.width;
  constexpr double kCell = 8.0;
  constexpr double kAmplitude = 0.22;
  const int gw = static_cast<int>(std::ceil(w / kCell)) + 2;
  const int gh = static_cast<int>(std::ceil(h / kCell)) + 2;
  Rng rng(spec.ground_texture_seed);
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
  auto node = [&](int gx, int gy) { return lattice[static_cast<std::size_t>(gy) * gw + gx]; };

  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y) {
    const double fy = (y + 0.5) / kCell;
    const int iy = static_cast<int>(std::floor(fy));
    const double ty = smoothstep(fy - iy);
    for (int x = 0; x < w; ++x) {
      const double px = spec.ground_mirrored ? w - (x + 0.5) : x + 0.5;
      const double fx = px / kCell;
      const int ix = static_cast<int>(std::floor(fx));
      const double tx = smoothstep(fx - ix);
      const double top = node(ix, iy) + tx * (node(ix + 1, iy) - node(ix, iy));
      const double bottom = node(ix, iy + 1) + tx * (node(ix + 1, iy + 1) - node(ix, iy + 1));
      const double n = top + ty * (bottom - top);
      for (int c = 0; c < 3; ++c)
        out(y, x, c) = static_cast<float>(std::clamp(spec.ground_albedo[c] * (1.0 + kAmplitude * n), 0.0, 1.0));
    }
  }
  return out;
}

ImageRGB composite_shadow(const ImageRGB& shadowfree, const MaskGray& shadow, const LightSpec& light, double gain) {
  require_same_shape(shadowfree, shadow, "composite_shadow");
  ImageRGB out(shadowfree.height(), shadowfree.width());
  std::array<double, 3> darkening{};
  for (int c = 0; c < 3; ++c) darkening[c] = gain * light.shadow_strength * (1.0 - light.shadow_tint[c]);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const double m = shadow(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = shadowfree(y, x, c) * (1.0 - darkening[c] * m);
        out(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return out;
}

SceneSample render_scene(const SceneSpec& spec) {
  spec.validate();
  SceneSample s;
  s.spec = spec;
  s.annotation = Annotation::full;
  s.image_shadowfree = render_ground(spec);
  for (const auto& object : spec.objects) {
    MaskGray mask = rasterize_footprint(object, spec.resolution);
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x)
        if (mask(y, x) > 0.5f)
          for (int c = 0; c < 3; ++c) s.image_shadowfree(y, x, c) = static_cast<float>(object.albedo[c]);
    s.object_masks.push_back(std::move(mask));
  }
  const MaskGray objects = union_max(s.object_masks, spec.resolution.height, spec.resolution.width);
  for (const auto& object : spec.objects) {
    // Shadows fall on the ground only; object tops are never darkened.
    MaskGray shadow = project_shadow(object, spec.light, spec.resolution);
    for (int y = 0; y < shadow.height(); ++y)
      for (int x = 0; x < shadow.width(); ++x) shadow(y, x) *= 1.0f - objects(y, x);
    s.shadow_masks.push_back(std::move(shadow));
  }
  s.image_shadowed = composite_shadow(s.image_shadowfree, union_max(s.shadow_masks, spec.resolution.height, spec.resolution.width), spec.light);
  return s;
}

ObjectSpec translated(const ObjectSpec& object, double dx, double dy) {
  ObjectSpec out = object;
  std::visit(
      [&](auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Circle>) {
          s.center.x += dx, s.center.y += dy;
        } else if constexpr (std::is_same_v<T, Rectangle>) {
          s.min.x += dx, s.min.y += dy, s.max.x += dx, s.max.y += dy;
        } else {
          for (auto& v : s.vertices) v.x += dx, v.y += dy;
        }
      },
      out.footprint);
  return out;
}

ObjectSpec mirrored_x(const ObjectSpec& object, int width) {
  ObjectSpec out = object;
  const double w = width;
  std::visit(
      [&](auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Circle>) {
          s.center.x = w - s.center.x;
        } else if constexpr (std::is_same_v<T, Rectangle>) {
          const double x0 = w - s.max.x, x1 = w - s.min.x;
          s.min.x = x0, s.max.x = x1;
        } else {
          for (auto& v : s.vertices) v.x = w - v.x;
          std::reverse(s.vertices.begin(), s.vertices.end());
        }
      },
      out.footprint);
  return out;
}

LightSpec mirrored_azimuth(const LightSpec& light) {
  LightSpec out = light;
  double az = kPi - light.azimuth_rad;
  if (az < 0.0) az += 2.0 * kPi;
  if (az >= 2.0 * kPi) az -= 2.0 * kPi;
  out.azimuth_rad = az;
  return out;
}

SceneSpec mirrored_x(const SceneSpec& spec) {
  SceneSpec out = spec;
  out.light = mirrored_azimuth(spec.light);
  out.ground_mirrored = !spec.ground_mirrored;
  for (auto& o : out.objects) o = mirrored_x(o, spec.resolution.width);
  return out;
}

SceneSpec sample_scene_spec(std::uint64_t seed, Resolution res, const SceneSampling& cfg) {
  if (res.height < 32 || res.width < 32) throw InvalidArgument("sample_scene_spec: resolution must be at least 32x32");
  Rng rng(seed);
  SceneSpec spec;
  spec.resolution = res;
  spec.ground_texture_seed = rng.next_u64();
  for (double& c : spec.ground_albedo) c = rng.uniform(0.45, 0.85);

  LightSpec& light = spec.light;
  light.azimuth_rad = rng.uniform(0.0, 2.0 * kPi);
  light.elevation_rad = rng.uniform(cfg.min_elevation_deg, cfg.max_elevation_deg) * kPi / 180.0;
  light.shadow_strength = rng.uniform(cfg.min_strength, cfg.max_strength);
  const double tint_base = rng.uniform(0.5, 0.8);
  light.shadow_tint = {tint_base, std::min(1.0, tint_base + rng.uniform(0.0, 0.1)), std::min(1.0, tint_base + rng.uniform(0.05, 0.25))};
  light.softness_px = rng.uniform(0.0, cfg.max_softness_px);

  const int count = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  std::vector<MaskGray> placed;
  for (int k = 0; k < count; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const double radius = snap(rng.uniform(cfg.min_size_frac, cfg.max_size_frac) * res.width);
      const Vec2 c{snap(rng.uniform(radius + 1, res.width - radius - 1)), snap(rng.uniform(radius + 1, res.height - radius - 1))};
      ObjectSpec obj;
      obj.height_px = snap(rng.uniform(cfg.min_height_frac, cfg.max_height_frac) * res.height);
      for (double& a : obj.albedo) a = rng.uniform(0.05, 0.95);
      switch (rng.uniform_int(0, 2)) {
        case 0:
          obj.footprint = Circle{c, radius};
          break;
        case 1: {
          const double hx = snap(radius * rng.uniform(0.6, 1.0)), hy = snap(radius * rng.uniform(0.6, 1.0));
          obj.footprint = Rectangle{{c.x - hx, c.y - hy}, {c.x + hx, c.y + hy}};
          break;
        }
        default: {
          // Points on a circle in angular order always form a convex polygon.
          const int n = static_cast<int>(rng.uniform_int(5, 7));
          const double phase = rng.uniform(0.0, 2.0 * kPi);
          ConvexPolygon poly;
          for (int i = 0; i < n; ++i) {
            const double a = phase + 2.0 * kPi * (i + rng.uniform(-0.2, 0.2)) / n;
            poly.vertices.push_back({snap(c.x + radius * std::cos(a)), snap(c.y + radius * std::sin(a))});
          }
          obj.footprint = std::move(poly);
          break;
        }
      }
      const Bounds b = bounds_of(obj.footprint);
      if (b.x0 < 0 || b.y0 < 0 || b.x1 > res.width || b.y1 > res.height) continue;
      if (shadow_in_frame_fraction(obj, light, res) < cfg.min_in_frame) continue;
      MaskGray mask = dilate(rasterize_footprint(obj, res), 1);
      const bool collides = std::any_of(placed.begin(), placed.end(), [&](const MaskGray& other) {
        for (std::size_t i = 0; i < mask.values().size(); ++i)
          if (mask.values()[i] > 0.5f && other.values()[i] > 0.5f) return true;
        return false;
      });
      if (collides) continue;
      placed.push_back(std::move(mask));
      spec.objects.push_back(std::move(obj));
      ok = true;
    }
    if (!ok) throw GenerationError("sample_scene_spec: could not place object " + std::to_string(k) + " after 100 attempts");
  }
  return spec;
}

std::pair<SceneSample, SceneSample> make_relocation_pair(const SceneSample& sample, int object_index, Offset offset) {
  const SceneSpec& spec = sample.spec;
  if (object_index < 0 || object_index >= static_cast<int>(spec.objects.size()))
    throw InvalidArgument("make_relocation_pair: object index out of range");
  SceneSpec moved = spec;
  ObjectSpec& obj = moved.objects[object_index];
  obj = translated(obj, offset.dx, offset.dy);
  const Bounds b = bounds_of(obj.footprint);
  if (b.x0 < 0 || b.y0 < 0 || b.x1 > spec.resolution.width || b.y1 > spec.resolution.height)
    throw OutOfFrameError("relocated object leaves the frame");
  if (shadow_in_frame_fraction(obj, spec.light, spec.resolution) < 0.9)
    throw OutOfFrameError("relocated object's shadow leaves the frame");
  const MaskGray mask = rasterize_footprint(obj, spec.resolution);
  for (int k = 0; k < static_cast<int>(spec.objects.size()); ++k) {
    if (k == object_index) continue;
    const MaskGray other = rasterize_footprint(spec.objects[k], spec.resolution);
    for (std::size_t i = 0; i < mask.values().size(); ++i)
      if (mask.values()[i] > 0.5f && other.values()[i] > 0.5f)
        throw InvalidArgument("relocated object collides with object " + std::to_string(k));
  }
  SceneSample after = render_scene(moved);
  if (sample.shadow_gain != 1.0) {
    after.shadow_gain = sample.shadow_gain;
    after.image_shadowed = composite_shadow(after.image_shadowfree, after.shadow_union(), moved.light, sample.shadow_gain);
  }
  after.annotation = sample.annotation;
  return {sample, std::move(after)};
}

}  // namespace umbra::world
