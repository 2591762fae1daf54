#include "umbra/sampling.hpp"

namespace umbra::data {
using world::Annotation;
using world::SceneSample;

void SamplingPolicy::validate() const {
  if (sources.empty()) throw InvalidArgument("sampling policy has no sources");
  for (const auto& s : sources) {
    if (!s.samples || s.samples->empty()) throw InvalidArgument("sampling source is empty");
    if (s.repeat < 1) throw InvalidArgument("repeat factor must be >= 1");
  }
  if (!(p_empty_object_mask >= 0.0 && p_empty_object_mask <= 1.0))
    throw InvalidArgument("p_empty_object_mask must lie in [0, 1]");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
}

AnalyzerExample make_example(const SceneSample& sample, int object_index) {
  AnalyzerExample ex;
  ex.image = sample.image_shadowed;
  ex.object_index = object_index;
  if (object_index < 0) {
    ex.object_mask = MaskGray(sample.height(), sample.width());
    ex.target_shadowfree = sample.image_shadowfree;
    ex.target_shadow_mask = sample.shadow_union();
    return ex;
  }
  if (sample.annotation != Annotation::full || object_index >= static_cast<int>(sample.object_masks.size()))
    throw InvalidArgument("make_example: object index needs a fully annotated sample");
  ex.object_mask = sample.object_masks[object_index];
  ex.target_shadowfree = augment_shadow_drop(sample, object_index).image_shadowed;
  ex.target_shadow_mask = sample.shadow_masks[object_index];
  return ex;
}

SceneSample as_partial(const SceneSample& sample) {
  SceneSample out = sample;
  out.annotation = Annotation::partial;
  out.object_masks.clear();
  out.shadow_masks = {sample.shadow_union()};
  return out;
}

std::vector<AnalyzerExample> sample_analyzer_batch(const SamplingPolicy& policy, Rng& rng, const AugmentationParams* augment) {
  if (policy.sources.empty()) throw InvalidArgument("sample_analyzer_batch: no sources registered");
  policy.validate();
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& s : policy.sources) {
    total += static_cast<double>(s.samples->size()) * s.repeat;
    cumulative.push_back(total);
  }
  std::vector<AnalyzerExample> batch;
  batch.reserve(policy.batch_size);
  for (int b = 0; b < policy.batch_size; ++b) {
    const double u = rng.uniform() * total;
    int src = 0;
    while (src + 1 < static_cast<int>(cumulative.size()) && u >= cumulative[src]) ++src;
    const Source& source = policy.sources[src];
    const int idx = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(source.samples->size()) - 1));
    SceneSample sample = (*source.samples)[idx];
    if (augment) sample = augment_for_training(sample, *augment, rng);

    int object = -1;
    if (source.annotation == Annotation::full && !sample.object_masks.empty()) {
      object = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(sample.object_masks.size()) - 1));
      if (rng.bernoulli(policy.p_empty_object_mask)) object = -1;
    }
    AnalyzerExample ex = make_example(sample, object);
    ex.source = src;
    ex.sample_index = idx;
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace umbra::data
