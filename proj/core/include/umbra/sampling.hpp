#pragma once

#include <memory>
#include <vector>

#include "umbra/augment.hpp"
#include "umbra/world.hpp"

namespace umbra::data {

struct Source {
  std::shared_ptr<const std::vector<world::SceneSample>> samples;
  world::Annotation annotation = world::Annotation::full;
  int repeat = 1;
};

/// Multi-source draw policy. Sources are picked with probability proportional
/// to size x repeat; full-annotation draws switch to the empty-object-mask
/// (all shadows) target with probability p_empty_object_mask.
struct SamplingPolicy {
  std::vector<Source> sources;
  double p_empty_object_mask = 0.3;
  int batch_size = 16;

  void validate() const;
};

/// One analyzer training example. object_index is -1 for the empty-mask mode.
struct AnalyzerExample {
  ImageRGB image;
  MaskGray object_mask;
  ImageRGB target_shadowfree;
  MaskGray target_shadow_mask;
  int source = 0;
  int sample_index = 0;
  int object_index = -1;
};

/// Targets for one object (its shadow only) or, with object_index = -1, for
/// all shadows with an all-zero object mask.
AnalyzerExample make_example(const world::SceneSample& sample, int object_index);

/// Strips per-object annotation: no object masks, a single union shadow mask.
world::SceneSample as_partial(const world::SceneSample& sample);

std::vector<AnalyzerExample> sample_analyzer_batch(const SamplingPolicy& policy, Rng& rng,
                                                   const AugmentationParams* augment = nullptr);

}  // namespace umbra::data
