#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "umbra/dataset.hpp"

using namespace umbra;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("umbra_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Dataset, RoundTripWithinQuantization) {
  const auto entries = dataset::generate(4, 42, {64, 64});
  const fs::path dir = fresh_dir("roundtrip");
  dataset::write_dataset(entries, dir);
  const auto back = dataset::read_dataset(dir);
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& a = entries[i].sample;
    const auto& b = back[i].sample;
    EXPECT_EQ(back[i].id, entries[i].id);
    EXPECT_EQ(back[i].split, entries[i].split);
    EXPECT_EQ(a.spec, b.spec);
    ASSERT_EQ(a.object_masks.size(), b.object_masks.size());
    auto max_diff = [](const auto& x, const auto& y) {
      float d = 0;
      for (std::size_t k = 0; k < x.values().size(); ++k) d = std::max(d, std::abs(x.values()[k] - y.values()[k]));
      return d;
    };
    EXPECT_LE(max_diff(a.image_shadowed, b.image_shadowed), 1.0f / 255.0f);
    EXPECT_LE(max_diff(a.image_shadowfree, b.image_shadowfree), 1.0f / 255.0f);
    for (std::size_t k = 0; k < a.object_masks.size(); ++k) {
      EXPECT_LE(max_diff(a.object_masks[k], b.object_masks[k]), 1.0f / 255.0f);
      EXPECT_LE(max_diff(a.shadow_masks[k], b.shadow_masks[k]), 1.0f / 255.0f);
    }
  }
}

TEST(Dataset, GenerationIsBitIdentical) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  dataset::write_dataset(dataset::generate(3, 9, {64, 64}), a);
  dataset::write_dataset(dataset::generate(3, 9, {64, 64}), b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 3u * 5u);
}

TEST(Dataset, EmptyDirectoryReadsAsEmpty) {
  const fs::path dir = fresh_dir("empty");
  fs::create_directories(dir);
  EXPECT_TRUE(dataset::read_dataset(dir).empty());
}

TEST(Dataset, CorruptManifestNamesField) {
  const fs::path dir = fresh_dir("corrupt");
  dataset::write_dataset(dataset::generate(1, 1, {64, 64}), dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << R"({"format": "umbra-dataset", "version": 1, "samples": [{"id": "scene_00000", "split": "train"}]})";
  }
  try {
    dataset::read_dataset(dir);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), "manifest.samples[0].dir");
  }
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << "{ not json";
  }
  EXPECT_THROW(dataset::read_dataset(dir), SchemaError);
}

TEST(Dataset, CorruptMetaNamesField) {
  const fs::path dir = fresh_dir("corrupt_meta");
  dataset::write_dataset(dataset::generate(1, 1, {64, 64}), dir);
  auto meta = nlohmann::json::parse(slurp(dir / "scene_00000" / "meta.json"));
  meta["spec"]["light"].erase("elevation_rad");
  std::ofstream(dir / "scene_00000" / "meta.json", std::ios::trunc) << meta.dump();
  try {
    dataset::read_dataset(dir);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), "scene_00000/meta.json.spec.light.elevation_rad");
  }
}

TEST(Dataset, SpecJsonRoundTrip) {
  for (std::uint64_t seed = 1; seed < 20; ++seed) {
    const auto spec = world::sample_scene_spec(seed, {64, 64});
    EXPECT_EQ(dataset::scene_spec_from_json(dataset::to_json(spec)), spec);
  }
}
