#pragma once

// Fixed overfit set shared by the acceptance runs: four object geometries, each
// rendered under a light and under its left-right mirrored twin. The twins have
// identical shadow-free images, so only the reference tells them apart.

#include <numbers>
#include <vector>

#include "umbra/world.hpp"

namespace acceptance {

struct Case {
  umbra::world::SceneSample before;
  umbra::world::SceneSample after;
  int geometry = 0;
  bool mirrored_light = false;
};

inline umbra::world::LightSpec base_light() {
  umbra::world::LightSpec l;
  l.azimuth_rad = 0.35;
  l.elevation_rad = std::numbers::pi / 4;
  l.shadow_strength = 0.75;
  l.shadow_tint = {0.55, 0.6, 0.75};
  l.softness_px = 0.8;
  return l;
}

inline std::vector<Case> cases(int resolution = 128) {
  using namespace umbra::world;
  const double s = resolution / 128.0;
  auto object = [&](Footprint f, double height, Rgb albedo) {
    ObjectSpec o;
    o.footprint = std::move(f);
    o.height_px = height * s;
    o.albedo = albedo;
    return o;
  };
  auto off = [&](int v) { return static_cast<int>(v * s); };
  struct Geometry {
    ObjectSpec object;
    Offset offset;
  };
  const std::vector<Geometry> geometries{
      {object(Circle{{52 * s, 60 * s}, 9 * s}, 16, {0.25, 0.35, 0.8}), {off(10), off(-8)}},
      {object(Rectangle{{46 * s, 50 * s}, {60 * s, 64 * s}}, 14, {0.8, 0.3, 0.25}), {off(-8), off(10)}},
      {object(ConvexPolygon{{{56 * s, 52 * s}, {66 * s, 62 * s}, {60 * s, 74 * s}, {48 * s, 70 * s}, {46 * s, 58 * s}}}, 18,
              {0.3, 0.75, 0.35}),
       {off(12), off(6)}},
      {object(Circle{{62 * s, 70 * s}, 7 * s}, 20, {0.85, 0.8, 0.2}), {off(-10), off(-6)}},
  };
  std::vector<Case> out;
  for (std::size_t g = 0; g < geometries.size(); ++g) {
    for (bool mirrored : {false, true}) {
      SceneSpec spec;
      spec.resolution = {resolution, resolution};
      spec.ground_texture_seed = 100 + g;
      spec.light = mirrored ? mirrored_azimuth(base_light()) : base_light();
      spec.objects = {geometries[g].object};
      auto [before, after] = make_relocation_pair(render_scene(spec), 0, geometries[g].offset);
      out.push_back({std::move(before), std::move(after), static_cast<int>(g), mirrored});
    }
  }
  return out;
}

}  // namespace acceptance
