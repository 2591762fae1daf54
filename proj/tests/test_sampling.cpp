#include <gtest/gtest.h>

#include "umbra/sampling.hpp"

using namespace umbra;

namespace {

std::shared_ptr<const std::vector<world::SceneSample>> make_pool(int count, std::uint64_t seed, bool partial = false) {
  auto pool = std::make_shared<std::vector<world::SceneSample>>();
  for (int i = 0; i < count; ++i) {
    auto s = world::render_scene(world::sample_scene_spec(Rng::mix(seed, i), {32, 32}));
    pool->push_back(partial ? data::as_partial(s) : std::move(s));
  }
  return pool;
}

}  // namespace

TEST(Sampling, PartialSourcesGiveEmptyObjectMaskAndUnionTarget) {
  data::SamplingPolicy policy;
  policy.sources = {{make_pool(4, 1, true), world::Annotation::partial, 1}};
  policy.batch_size = 32;
  Rng rng(2);
  for (const auto& ex : data::sample_analyzer_batch(policy, rng)) {
    EXPECT_TRUE(is_all_zero(ex.object_mask));
    EXPECT_EQ(ex.object_index, -1);
    EXPECT_EQ(ex.target_shadow_mask, (*policy.sources[0].samples)[ex.sample_index].shadow_masks[0]);
  }
}

TEST(Sampling, NoEmptyModeMeansTargetsMatchObject) {
  const auto pool = make_pool(6, 3);
  data::SamplingPolicy policy;
  policy.sources = {{pool, world::Annotation::full, 1}};
  policy.p_empty_object_mask = 0.0;
  policy.batch_size = 64;
  Rng rng(4);
  for (const auto& ex : data::sample_analyzer_batch(policy, rng)) {
    ASSERT_GE(ex.object_index, 0);
    const auto& s = (*pool)[ex.sample_index];
    EXPECT_EQ(ex.object_mask, s.object_masks[ex.object_index]);
    EXPECT_EQ(ex.target_shadow_mask, s.shadow_masks[ex.object_index]);
  }
}

TEST(Sampling, EmptyModeFrequency) {
  data::SamplingPolicy policy;
  policy.sources = {{make_pool(3, 5), world::Annotation::full, 1}};
  policy.p_empty_object_mask = 0.3;
  policy.batch_size = 1000;
  Rng rng(6);
  int empty = 0, total = 0;
  for (int round = 0; round < 10; ++round)
    for (const auto& ex : data::sample_analyzer_batch(policy, rng)) {
      empty += ex.object_index < 0;
      ++total;
    }
  EXPECT_NEAR(static_cast<double>(empty) / total, 0.3, 0.02);
}

TEST(Sampling, SourceFrequenciesFollowSizeTimesRepeat) {
  data::SamplingPolicy policy;
  policy.sources = {{make_pool(2, 7), world::Annotation::full, 1},
                    {make_pool(4, 8, true), world::Annotation::partial, 2},
                    {make_pool(3, 9), world::Annotation::full, 1}};
  policy.batch_size = 1000;
  Rng rng(10);
  std::array<double, 3> observed{};
  for (int round = 0; round < 10; ++round)
    for (const auto& ex : data::sample_analyzer_batch(policy, rng)) observed[ex.source] += 1;
  const std::array<double, 3> weight{2, 8, 3};
  double chi2 = 0;
  for (int i = 0; i < 3; ++i) {
    const double expected = 10000.0 * weight[i] / 13.0;
    chi2 += (observed[i] - expected) * (observed[i] - expected) / expected;
  }
  // 99th percentile of chi-square with two degrees of freedom.
  EXPECT_LT(chi2, 9.21);
}

TEST(Sampling, EmptyObjectExampleTargetsAllShadows) {
  const auto pool = make_pool(1, 12);
  const auto ex = data::make_example((*pool)[0], -1);
  EXPECT_EQ(ex.target_shadowfree, (*pool)[0].image_shadowfree);
  EXPECT_EQ(ex.target_shadow_mask, (*pool)[0].shadow_union());
}

TEST(Sampling, DeterministicForSeed) {
  data::SamplingPolicy policy;
  policy.sources = {{make_pool(4, 13), world::Annotation::full, 1}};
  policy.batch_size = 8;
  data::AugmentationParams aug;
  Rng a(99), b(99);
  const auto x = data::sample_analyzer_batch(policy, a, &aug);
  const auto y = data::sample_analyzer_batch(policy, b, &aug);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].image, y[i].image);
    EXPECT_EQ(x[i].target_shadow_mask, y[i].target_shadow_mask);
  }
}

TEST(Sampling, RejectsBadPolicy) {
  data::SamplingPolicy policy;
  Rng rng(1);
  EXPECT_THROW(data::sample_analyzer_batch(policy, rng), InvalidArgument);
  policy.sources = {{make_pool(1, 1), world::Annotation::full, 0}};
  EXPECT_THROW(policy.validate(), InvalidArgument);
}
