#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "umbra/raster.hpp"

/// Flat-ground 2.5D scene model: object footprints with implied heights cast
/// analytic shadows under a directional light. Produces paired shadowed /
/// shadow-free renders with exact per-object masks.
namespace umbra::world {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

using Rgb = std::array<double, 3>;

struct Resolution {
  int height = 64;
  int width = 64;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct LightSpec {
  double azimuth_rad = 0.0;    ///< [0, 2pi); shadows fall along (cos, sin) in image axes
  double elevation_rad = 0.7;  ///< (0, pi/2]
  double shadow_strength = 0.6;
  Rgb shadow_tint{0.8, 0.85, 1.0};
  double softness_px = 0.0;  ///< Gaussian sigma of the penumbra

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
  Vec2 direction() const;
  /// Horizontal distance covered by the shadow of a point at `height`.
  double shadow_length(double height) const;

  friend bool operator==(const LightSpec&, const LightSpec&) = default;
};

struct Circle {
  Vec2 center;
  double radius = 1.0;
  friend bool operator==(const Circle&, const Circle&) = default;
};

struct Rectangle {
  Vec2 min;
  Vec2 max;
  friend bool operator==(const Rectangle&, const Rectangle&) = default;
};

/// Vertices in either winding; must describe a convex polygon.
struct ConvexPolygon {
  std::vector<Vec2> vertices;
  friend bool operator==(const ConvexPolygon&, const ConvexPolygon&) = default;
};

using Footprint = std::variant<Circle, Rectangle, ConvexPolygon>;

enum class ShapeKind { circle, rectangle, convex_polygon };

struct ObjectSpec {
  Footprint footprint;
  double height_px = 8.0;
  Rgb albedo{0.5, 0.5, 0.5};

  ShapeKind shape() const { return static_cast<ShapeKind>(footprint.index()); }
  void validate(Resolution res) const;
  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

struct SceneSpec {
  Resolution resolution;
  Rgb ground_albedo{0.7, 0.68, 0.62};
  std::uint64_t ground_texture_seed = 0;
  /// Evaluate the ground texture mirrored about the vertical axis.
  bool ground_mirrored = false;
  LightSpec light;
  std::vector<ObjectSpec> objects;

  void validate() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

enum class Annotation { full, partial };

struct SceneSample {
  ImageRGB image_shadowed;
  ImageRGB image_shadowfree;
  std::vector<MaskGray> object_masks;
  std::vector<MaskGray> shadow_masks;
  SceneSpec spec;
  Annotation annotation = Annotation::full;
  /// Multiplier on the light's shadow strength currently baked into
  /// image_shadowed (1 for a pristine render; changed by intensity augmentation).
  double shadow_gain = 1.0;

  int height() const { return image_shadowed.height(); }
  int width() const { return image_shadowed.width(); }
  MaskGray shadow_union() const;
  MaskGray object_union() const;
};

/// Ranges used by sample_scene_spec.
struct SceneSampling {
  int min_objects = 1;
  int max_objects = 4;
  double min_elevation_deg = 20.0;
  double max_elevation_deg = 70.0;
  double min_strength = 0.4;
  double max_strength = 0.9;
  double max_softness_px = 1.5;
  double min_size_frac = 0.06;  ///< footprint radius as a fraction of width
  double max_size_frac = 0.12;
  double min_height_frac = 0.08;
  double max_height_frac = 0.2;
  double min_in_frame = 0.9;
};

SceneSpec sample_scene_spec(std::uint64_t seed, Resolution res, const SceneSampling& cfg = {});

MaskGray rasterize_footprint(const ObjectSpec& object, Resolution res);
/// Hard shadow swept by the footprint (footprint included), blurred by the
/// light's softness. Values in [0, 1].
MaskGray project_shadow(const ObjectSpec& object, const LightSpec& light, Resolution res);
/// Fraction of the hard shadow's pixel area that lies inside the frame.
double shadow_in_frame_fraction(const ObjectSpec& object, const LightSpec& light, Resolution res);

SceneSample render_scene(const SceneSpec& spec);
ImageRGB render_ground(const SceneSpec& spec);

/// Multiplicative shadow model: free * (1 - gain * strength * (1 - tint) * mask).
ImageRGB composite_shadow(const ImageRGB& shadowfree, const MaskGray& shadow, const LightSpec& light, double gain = 1.0);

struct Offset {
  int dx = 0;
  int dy = 0;
};

ObjectSpec translated(const ObjectSpec& object, double dx, double dy);
ObjectSpec mirrored_x(const ObjectSpec& object, int width);
LightSpec mirrored_azimuth(const LightSpec& light);
SceneSpec mirrored_x(const SceneSpec& spec);

/// Re-renders the scene with one object moved. Throws OutOfFrameError when the
/// moved footprint leaves the frame or less than 90% of its shadow stays in it,
/// and InvalidArgument when it collides with another object.
std::pair<SceneSample, SceneSample> make_relocation_pair(const SceneSample& sample, int object_index, Offset offset);

}  // namespace umbra::world
