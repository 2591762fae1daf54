#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "umbra/analyzer_train.hpp"
#include "umbra/dataset.hpp"
#include "umbra/metrics.hpp"
#include "umbra/pipeline.hpp"
#include "umbra/synthesizer.hpp"
#include "umbra/tensor_bridge.hpp"

using namespace umbra;

namespace {

world::SceneSample desk_scene(int res = 128) { return world::render_scene(world::sample_scene_spec(7, {res, res})); }

void BM_RenderScene(benchmark::State& state) {
  const auto spec = world::sample_scene_spec(7, {static_cast<int>(state.range(0)), static_cast<int>(state.range(0))});
  for (auto _ : state) benchmark::DoNotOptimize(world::render_scene(spec));
}
BENCHMARK(BM_RenderScene)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_RemovalMetrics(benchmark::State& state) {
  const auto s = desk_scene();
  std::vector<metrics::EvalCase> cases;
  for (std::size_t k = 0; k < s.object_masks.size(); ++k)
    cases.push_back({std::to_string(k), s.image_shadowed, s.shadow_masks[k], s.image_shadowfree, s.shadow_masks[k]});
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate(metrics::Task::removal, cases, 128));
}
BENCHMARK(BM_RemovalMetrics)->Unit(benchmark::kMillisecond);

void BM_AnalyzerForward(benchmark::State& state) {
  torch::NoGradGuard g;
  const auto cfg = analyzer::AnalyzerConfig::desk();
  analyzer::AnalyzerNet net(cfg);
  net->eval();
  const auto s = desk_scene();
  const auto img = tensor::from_raster(s.image_shadowed).unsqueeze(0);
  const auto mask = tensor::from_raster(s.object_masks[0]).unsqueeze(0);
  const auto z = analyzer::noise(1, cfg.noise_dim, 0);
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(img, mask, z));
}
BENCHMARK(BM_AnalyzerForward)->Unit(benchmark::kMillisecond);

void BM_FewStepSampling(benchmark::State& state) {
  torch::NoGradGuard g;
  const auto cfg = synth::SynthConfig::desk();
  synth::SynthModel model(cfg);
  model->eval();
  const auto comp = torch::rand({1, 3, cfg.resolution, cfg.resolution});
  const auto mask = torch::zeros({1, 1, cfg.resolution, cfg.resolution});
  const auto emb = model->embed(torch::randn({1, cfg.fms_channels, cfg.fms_grid, cfg.fms_grid}), 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(synth::sample_few_step(model, comp, mask, mask, emb, static_cast<int>(state.range(0)), 0));
}
BENCHMARK(BM_FewStepSampling)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_HarmonicFill(benchmark::State& state) {
  const auto s = desk_scene();
  const auto hole = dilate(s.object_masks[0], 1);
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::harmonic_fill(s.image_shadowed, hole));
}
BENCHMARK(BM_HarmonicFill)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
