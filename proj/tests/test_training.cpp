#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <torch/torch.h>

#include "test_support.hpp"
#include "umbra/analyzer_train.hpp"
#include "umbra/checkpoint.hpp"
#include "umbra/errors.hpp"

using namespace umbra;
using namespace umbra::analyzer;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("umbra_train_" + std::to_string(::getpid()) + "_" + name);
}

data::SamplingPolicy tiny_policy() {
  auto pool = std::make_shared<std::vector<world::SceneSample>>();
  for (double az : {10.0, 100.0, 200.0, 300.0}) {
    const auto spec = test_support::scene({test_support::circle(7, 8, 2.5, 3)}, test_support::light(az, 50, 0.5), 16);
    pool->push_back(world::render_scene(spec));
  }
  data::SamplingPolicy p;
  p.sources = {{pool, world::Annotation::full, 1}};
  return p;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.steps = 10;
  t.batch_size = 2;
  t.seed = 3;
  return t;
}

std::vector<double> run(Trainer& tr, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    const auto l = tr.step();
    out.push_back(l.g_total);
    out.push_back(l.d_total);
  }
  return out;
}

}  // namespace

TEST(AnalyzerTraining, SeededRunsAreIdentical) {
  Trainer a(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  Trainer b(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  EXPECT_EQ(run(a, 10), run(b, 10));
}

TEST(AnalyzerTraining, ResumeMatchesUninterruptedRun) {
  const auto path = temp_path("resume.ckp");
  Trainer full(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  const auto ref = run(full, 10);
  Trainer first(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  run(first, 5);
  first.save(path);
  Trainer second(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  second.restore(path);
  EXPECT_EQ(second.step_index(), 5);
  EXPECT_EQ(run(second, 5), std::vector<double>(ref.begin() + 10, ref.end()));
  EXPECT_EQ(ckpt::weight_hash(*second.net()), ckpt::weight_hash(*full.net()));
  EXPECT_EQ(ckpt::weight_hash(*second.discriminator()), ckpt::weight_hash(*full.discriminator()));
  std::filesystem::remove(path);
}

TEST(AnalyzerTraining, RestoreRejectsOtherSeedOrConfig) {
  const auto path = temp_path("other.ckp");
  Trainer a(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  a.save(path);
  auto t = tiny_train();
  t.seed = 4;
  Trainer b(AnalyzerConfig::tiny(), t, tiny_policy());
  EXPECT_THROW(b.restore(path), CheckpointError);
  auto cfg = AnalyzerConfig::tiny();
  cfg.style_dim = 6;
  Trainer c(cfg, tiny_train(), tiny_policy());
  EXPECT_THROW(c.restore(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(AnalyzerTraining, LogsOneJsonLinePerStepAndLazyR1) {
  auto t = tiny_train();
  t.steps = 17;
  Trainer tr(AnalyzerConfig::tiny(), t, tiny_policy());
  std::ostringstream log;
  tr.run(&log);
  std::istringstream in(log.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), n);
    EXPECT_EQ(j.at("r1_applied").get<bool>(), n % 16 == 0);
    for (const char* k : {"g_total", "l1", "perceptual", "adv_g", "dice", "d_total", "adv_d", "r1"})
      EXPECT_TRUE(std::isfinite(j.at(k).get<double>())) << k;
    ++n;
  }
  EXPECT_EQ(n, 17);
}

TEST(AnalyzerTraining, NonFiniteLossDumpsTheBatch) {
  auto t = tiny_train();
  t.lr = 1e30;
  t.steps = 50;
  Trainer tr(AnalyzerConfig::tiny(), t, tiny_policy());
  tr.nan_dump_path = temp_path("nan.ckp");
  EXPECT_THROW(tr.run(), TrainingError);
  ASSERT_TRUE(std::filesystem::exists(tr.nan_dump_path));
  const auto dump = ckpt::load(tr.nan_dump_path);
  EXPECT_EQ(dump.kind, "nan_batch");
  EXPECT_EQ(dump.tensors.at("image").size(0), 2);
  EXPECT_TRUE(dump.tensors.count("z"));
  std::filesystem::remove(tr.nan_dump_path);
}

TEST(AnalyzerTraining, RejectsSamplesAtTheWrongResolution) {
  auto pool = std::make_shared<std::vector<world::SceneSample>>();
  pool->push_back(world::render_scene(test_support::scene({test_support::circle(16, 16, 4, 4)}, test_support::light(0, 45), 32)));
  data::SamplingPolicy p;
  p.sources = {{pool, world::Annotation::full, 1}};
  EXPECT_THROW(Trainer(AnalyzerConfig::tiny(), tiny_train(), p), InvalidArgument);
}

TEST(AnalyzerTraining, LoadedAnalyzerIsFrozenAndHashed) {
  const auto path = temp_path("load.ckp");
  Trainer tr(AnalyzerConfig::tiny(), tiny_train(), tiny_policy());
  run(tr, 2);
  tr.save(path);
  const auto a = load_analyzer(path);
  EXPECT_EQ(a.weight_hash, ckpt::weight_hash(*tr.net()));
  EXPECT_FALSE(a.net->is_training());
  for (const auto& p : a.net->parameters()) EXPECT_FALSE(p.requires_grad());
  std::filesystem::remove(path);
}

TEST(TrainConfig, JsonRoundTripAndErrors) {
  auto t = tiny_train();
  t.augmentation.p_flip = 0.25;
  EXPECT_EQ(TrainConfig::from_json(t.to_json()).to_json(), t.to_json());
  try {
    TrainConfig::from_json({{"augmentation", {{"p_drop", "often"}}}});
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("train.augmentation.p_drop"), std::string::npos);
  }
  EXPECT_THROW(TrainConfig::from_json({{"batch_size", 0}}), InvalidArgument);
}

TEST(Checkpoint, RoundTripsTensorsAndMeta) {
  const auto path = temp_path("rt.ckp");
  ckpt::Checkpoint c;
  c.kind = "test";
  c.meta = {{"answer", 42}};
  c.tensors["a"] = torch::randn({2, 3});
  c.tensors["b"] = torch::randn({4}, torch::kFloat64);
  c.tensors["c"] = torch::arange(5, torch::kInt64);
  c.tensors["scalar"] = torch::tensor(1.5f);
  ckpt::save(path, c);
  const auto d = ckpt::load(path);
  EXPECT_EQ(d.kind, "test");
  EXPECT_EQ(d.meta, c.meta);
  ASSERT_EQ(d.tensors.size(), c.tensors.size());
  for (const auto& [k, v] : c.tensors) EXPECT_TRUE(torch::equal(d.tensors.at(k), v)) << k;
  EXPECT_TRUE(ckpt::load_header(path).tensors.empty());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto path = temp_path("bad.ckp");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPT and some bytes";
  }
  EXPECT_THROW(ckpt::load(path), CheckpointError);
  ckpt::Checkpoint c;
  c.kind = "test";
  c.tensors["a"] = torch::randn({64});
  ckpt::save(path, c);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  EXPECT_THROW(ckpt::load(path), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(ckpt::load(path), CheckpointError);
}

TEST(Checkpoint, ModuleShapeMismatchAndHash) {
  torch::nn::Linear a(3, 4), b(3, 5);
  ckpt::Checkpoint c;
  ckpt::put_module(c, "m", *a);
  EXPECT_THROW(ckpt::get_module(c, "m", *b), CheckpointError);
  torch::nn::Linear a2(3, 4);
  ckpt::get_module(c, "m", *a2);
  EXPECT_EQ(ckpt::weight_hash(*a), ckpt::weight_hash(*a2));
  {
    torch::NoGradGuard g;
    a2->weight[0][0] += 1e-3;
  }
  EXPECT_NE(ckpt::weight_hash(*a), ckpt::weight_hash(*a2));
}
