#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>

#include <torch/optim/adam.h>

#include "umbra/analyzer.hpp"
#include "umbra/checkpoint.hpp"
#include "umbra/sampling.hpp"

namespace umbra::analyzer {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.99;
  std::uint64_t seed = 0;
  double p_empty_object_mask = 0.3;
  bool augment = true;
  data::AugmentationParams augmentation;
  int log_every = 1;
  /// 0 disables periodic checkpoints.
  int checkpoint_every = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Batch tensors for a list of examples: image, object mask, target shadow-free
/// image and target shadow mask.
struct BatchTensors {
  torch::Tensor image, object_mask, target_shadowfree, target_shadow_mask;
};
BatchTensors to_tensors(const std::vector<data::AnalyzerExample>& batch);

struct StepLog {
  int step = 0;
  double g_total = 0, l1 = 0, perceptual = 0, adv_g = 0, dice = 0;
  double d_total = 0, adv_d = 0, r1 = 0;
  bool r1_applied = false;
  nlohmann::json to_json() const;
};

/// Alternating discriminator / generator optimisation over a sampling policy.
/// Per-step randomness (batch draw, augmentation, noise z) is derived from
/// (seed, step), so the resumable RNG state is just those two integers.
class Trainer {
 public:
  Trainer(AnalyzerConfig cfg, TrainConfig train, data::SamplingPolicy policy);

  StepLog step();
  /// Runs until `steps` total steps have completed; writes one JSON line per
  /// logged step to `log` when given.
  void run(std::ostream* log = nullptr, const std::filesystem::path& checkpoint_path = {});

  int step_index() const { return step_; }
  AnalyzerNet& net() { return net_; }
  Discriminator& discriminator() { return disc_; }
  const AnalyzerConfig& config() const { return cfg_; }
  const TrainConfig& train_config() const { return train_; }

  ckpt::Checkpoint to_checkpoint();
  void save(const std::filesystem::path& path);
  /// Restores weights, optimizer moments and step counter from `path`.
  void restore(const std::filesystem::path& path);

  /// Where the offending batch is written when a loss turns non-finite.
  std::filesystem::path nan_dump_path = "nan_batch.ckp";

 private:
  void check_finite(const torch::Tensor& loss, const BatchTensors& b, const torch::Tensor& z) const;

  AnalyzerConfig cfg_;
  TrainConfig train_;
  data::SamplingPolicy policy_;
  AnalyzerNet net_{nullptr};
  Discriminator disc_{nullptr};
  PerceptualNet perceptual_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
  int step_ = 0;
};

/// Deterministic noise z for inference: N(0, 1) drawn from a generator seeded by `seed`.
torch::Tensor noise(int batch, int dim, std::uint64_t seed, torch::ScalarType dtype = torch::kFloat32);

/// Inference-only analyzer loaded from a checkpoint, in eval mode.
struct LoadedAnalyzer {
  AnalyzerConfig config;
  AnalyzerNet net{nullptr};
  std::uint64_t weight_hash = 0;
};
LoadedAnalyzer load_analyzer(const std::filesystem::path& path);

}  // namespace umbra::analyzer
