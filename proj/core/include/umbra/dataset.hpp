#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umbra/world.hpp"

namespace umbra::dataset {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

enum class Split { train, test };

struct Entry {
  std::string id;
  world::SceneSample sample;
  Split split = Split::train;
};

json to_json(const world::SceneSpec& spec);
/// `path` prefixes field names in SchemaError messages.
world::SceneSpec scene_spec_from_json(const json& j, const std::string& path = "spec");

/// Layout: <dir>/manifest.json plus one directory per sample holding
/// image.png, shadowfree.png, objmask_<k>.png, shadmask_<k>.png and meta.json.
void write_dataset(const std::vector<Entry>& entries, const std::filesystem::path& dir);
/// Empty or missing manifest-less directories read as an empty dataset.
std::vector<Entry> read_dataset(const std::filesystem::path& dir);

/// Renders `count` scenes with seeds derived from `seed`; every fifth scene is a test split.
std::vector<Entry> generate(int count, std::uint64_t seed, world::Resolution res, const world::SceneSampling& cfg = {});

}  // namespace umbra::dataset
