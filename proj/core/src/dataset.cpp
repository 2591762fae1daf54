#include "umbra/dataset.hpp"

#include <fmt/format.h>

#include <fstream>

#include "umbra/png_io.hpp"
#include "umbra/rng.hpp"

namespace umbra::dataset {
namespace fs = std::filesystem;
using world::Annotation;

namespace {

json vec2(const world::Vec2& v) { return json::array({v.x, v.y}); }

// --- schema helpers -------------------------------------------------------

const json& field(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(path + "." + key, "missing field");
  return *it;
}

double number(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_number()) throw SchemaError(path + "." + key, "expected a number");
  return v.get<double>();
}

std::string text(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_string()) throw SchemaError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

world::Rgb rgb(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_array() || v.size() != 3) throw SchemaError(path + "." + key, "expected an array of 3 numbers");
  world::Rgb out{};
  for (int i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw SchemaError(fmt::format("{}.{}[{}]", path, key, i), "expected a number");
    out[i] = v[i].get<double>();
  }
  return out;
}

world::Vec2 point(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw SchemaError(path, "expected [x, y]");
  return {v[0].get<double>(), v[1].get<double>()};
}

std::vector<std::string> string_list(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_array()) throw SchemaError(path + "." + key, "expected an array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) throw SchemaError(fmt::format("{}.{}[{}]", path, key, i), "expected a string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

json read_json(const fs::path& path, const std::string& label) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(label, std::string("invalid JSON: ") + e.what());
  }
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

}  // namespace

json to_json(const world::SceneSpec& spec) {
  json objects = json::array();
  for (const auto& o : spec.objects) {
    json obj;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, world::Circle>) {
            obj["shape"] = "circle";
            obj["footprint"] = {{"center", vec2(s.center)}, {"radius", s.radius}};
          } else if constexpr (std::is_same_v<T, world::Rectangle>) {
            obj["shape"] = "rectangle";
            obj["footprint"] = {{"min", vec2(s.min)}, {"max", vec2(s.max)}};
          } else {
            obj["shape"] = "convex_polygon";
            json verts = json::array();
            for (const auto& v : s.vertices) verts.push_back(vec2(v));
            obj["footprint"] = {{"vertices", verts}};
          }
        },
        o.footprint);
    obj["height_px"] = o.height_px;
    obj["albedo"] = o.albedo;
    objects.push_back(obj);
  }
  return {{"resolution", {spec.resolution.height, spec.resolution.width}},
          {"ground_albedo", spec.ground_albedo},
          {"ground_texture_seed", spec.ground_texture_seed},
          {"ground_mirrored", spec.ground_mirrored},
          {"light",
           {{"azimuth_rad", spec.light.azimuth_rad},
            {"elevation_rad", spec.light.elevation_rad},
            {"shadow_strength", spec.light.shadow_strength},
            {"shadow_tint", spec.light.shadow_tint},
            {"softness_px", spec.light.softness_px}}},
          {"objects", objects}};
}

world::SceneSpec scene_spec_from_json(const json& j, const std::string& path) {
  world::SceneSpec spec;
  const json& res = field(j, path, "resolution");
  if (!res.is_array() || res.size() != 2 || !res[0].is_number_integer() || !res[1].is_number_integer())
    throw SchemaError(path + ".resolution", "expected [H, W] integers");
  spec.resolution = {res[0].get<int>(), res[1].get<int>()};
  spec.ground_albedo = rgb(j, path, "ground_albedo");
  const json& seed = field(j, path, "ground_texture_seed");
  if (!seed.is_number_unsigned() && !seed.is_number_integer())
    throw SchemaError(path + ".ground_texture_seed", "expected an integer");
  spec.ground_texture_seed = seed.get<std::uint64_t>();
  if (j.contains("ground_mirrored")) {
    if (!j["ground_mirrored"].is_boolean()) throw SchemaError(path + ".ground_mirrored", "expected a boolean");
    spec.ground_mirrored = j["ground_mirrored"].get<bool>();
  }
  const std::string lp = path + ".light";
  const json& light = field(j, path, "light");
  spec.light.azimuth_rad = number(light, lp, "azimuth_rad");
  spec.light.elevation_rad = number(light, lp, "elevation_rad");
  spec.light.shadow_strength = number(light, lp, "shadow_strength");
  spec.light.shadow_tint = rgb(light, lp, "shadow_tint");
  spec.light.softness_px = number(light, lp, "softness_px");

  const json& objects = field(j, path, "objects");
  if (!objects.is_array()) throw SchemaError(path + ".objects", "expected an array");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string op = fmt::format("{}.objects[{}]", path, i);
    const json& o = objects[i];
    world::ObjectSpec obj;
    const std::string shape = text(o, op, "shape");
    const json& fp = field(o, op, "footprint");
    const std::string fpp = op + ".footprint";
    if (shape == "circle") {
      obj.footprint = world::Circle{point(field(fp, fpp, "center"), fpp + ".center"), number(fp, fpp, "radius")};
    } else if (shape == "rectangle") {
      obj.footprint = world::Rectangle{point(field(fp, fpp, "min"), fpp + ".min"), point(field(fp, fpp, "max"), fpp + ".max")};
    } else if (shape == "convex_polygon") {
      const json& verts = field(fp, fpp, "vertices");
      if (!verts.is_array()) throw SchemaError(fpp + ".vertices", "expected an array");
      world::ConvexPolygon poly;
      for (std::size_t k = 0; k < verts.size(); ++k) poly.vertices.push_back(point(verts[k], fmt::format("{}.vertices[{}]", fpp, k)));
      obj.footprint = std::move(poly);
    } else {
      throw SchemaError(op + ".shape", "unknown shape '" + shape + "'");
    }
    obj.height_px = number(o, op, "height_px");
    obj.albedo = rgb(o, op, "albedo");
    spec.objects.push_back(std::move(obj));
  }
  return spec;
}

void write_dataset(const std::vector<Entry>& entries, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json manifest_samples = json::array();
  for (const auto& e : entries) {
    const auto& s = e.sample;
    const fs::path sd = dir / e.id;
    fs::create_directories(sd, ec);
    if (ec) throw IoError("cannot create " + sd.string() + ": " + ec.message());
    png::write(sd / "image.png", s.image_shadowed);
    png::write(sd / "shadowfree.png", s.image_shadowfree);
    json objmasks = json::array(), shadmasks = json::array();
    for (std::size_t k = 0; k < s.object_masks.size(); ++k) {
      const std::string name = fmt::format("objmask_{}.png", k);
      png::write(sd / name, s.object_masks[k]);
      objmasks.push_back(name);
    }
    for (std::size_t k = 0; k < s.shadow_masks.size(); ++k) {
      const std::string name = fmt::format("shadmask_{}.png", k);
      png::write(sd / name, s.shadow_masks[k]);
      shadmasks.push_back(name);
    }
    const json meta = {{"id", e.id},
                       {"annotation", s.annotation == Annotation::full ? "full" : "partial"},
                       {"shadow_gain", s.shadow_gain},
                       {"spec", to_json(s.spec)},
                       {"files",
                        {{"image", "image.png"},
                         {"shadowfree", "shadowfree.png"},
                         {"object_masks", objmasks},
                         {"shadow_masks", shadmasks}}}};
    write_text(sd / "meta.json", meta.dump(2) + "\n");
    manifest_samples.push_back({{"id", e.id}, {"dir", e.id}, {"split", split_name(e.split)}});
  }
  const json manifest = {{"format", "umbra-dataset"}, {"version", kFormatVersion}, {"samples", manifest_samples}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<Entry> read_dataset(const fs::path& dir) {
  std::vector<Entry> out;
  if (!fs::exists(dir / "manifest.json")) {
    if (fs::is_directory(dir) && fs::is_empty(dir)) return out;
    if (!fs::exists(dir)) throw IoError("dataset directory does not exist: " + dir.string());
    throw SchemaError("manifest", "manifest.json not found in " + dir.string());
  }
  const json manifest = read_json(dir / "manifest.json", "manifest");
  if (text(manifest, "manifest", "format") != "umbra-dataset") throw SchemaError("manifest.format", "unexpected format tag");
  const json& version = field(manifest, "manifest", "version");
  if (!version.is_number_integer() || version.get<int>() != kFormatVersion)
    throw SchemaError("manifest.version", "unsupported version");
  const json& samples = field(manifest, "manifest", "samples");
  if (!samples.is_array()) throw SchemaError("manifest.samples", "expected an array");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string mp = fmt::format("manifest.samples[{}]", i);
    Entry e;
    e.id = text(samples[i], mp, "id");
    const std::string sub = text(samples[i], mp, "dir");
    const std::string split = text(samples[i], mp, "split");
    if (split == "train") e.split = Split::train;
    else if (split == "test") e.split = Split::test;
    else throw SchemaError(mp + ".split", "expected 'train' or 'test'");

    const fs::path sd = dir / sub;
    const std::string label = e.id + "/meta.json";
    const json meta = read_json(sd / "meta.json", label);
    auto& s = e.sample;
    s.spec = scene_spec_from_json(field(meta, label, "spec"), label + ".spec");
    const std::string ann = text(meta, label, "annotation");
    if (ann == "full") s.annotation = Annotation::full;
    else if (ann == "partial") s.annotation = Annotation::partial;
    else throw SchemaError(label + ".annotation", "expected 'full' or 'partial'");
    if (meta.contains("shadow_gain")) s.shadow_gain = number(meta, label, "shadow_gain");
    const json& files = field(meta, label, "files");
    const std::string fp = label + ".files";
    s.image_shadowed = png::read_rgb(sd / text(files, fp, "image"));
    s.image_shadowfree = png::read_rgb(sd / text(files, fp, "shadowfree"));
    for (const auto& name : string_list(files, fp, "object_masks")) s.object_masks.push_back(png::read_gray(sd / name));
    for (const auto& name : string_list(files, fp, "shadow_masks")) s.shadow_masks.push_back(png::read_gray(sd / name));
    if (s.annotation == Annotation::full && s.object_masks.size() != s.shadow_masks.size())
      throw SchemaError(fp + ".shadow_masks", "full annotation needs one shadow mask per object mask");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Entry> generate(int count, std::uint64_t seed, world::Resolution res, const world::SceneSampling& cfg) {
  std::vector<Entry> out;
  for (int i = 0; i < count; ++i) {
    Entry e;
    e.id = fmt::format("scene_{:05d}", i);
    e.sample = world::render_scene(world::sample_scene_spec(Rng::mix(seed, static_cast<std::uint64_t>(i)), res, cfg));
    e.split = (i % 5 == 4) ? Split::test : Split::train;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace umbra::dataset
