#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <vector>

#include <torch/optim/adam.h>

#include "umbra/analyzer_train.hpp"
#include "umbra/checkpoint.hpp"
#include "umbra/synthesizer.hpp"
#include "umbra/world.hpp"

namespace umbra::synth {

/// One training pair at synthesizer resolution. `fms` holds the reference
/// features [C_ms, g, g] computed once by the frozen analyzer.
struct SynthPair {
  ImageRGB target;
  ImageRGB composite;
  MaskGray object_mask;
  MaskGray shadow_mask;
  torch::Tensor fms;
};

/// A rendered relocation: `before` and `after` differ only by the placement of
/// object `object_index`.
struct Relocation {
  world::SceneSample before;
  world::SceneSample after;
  int object_index = 0;
};

/// Reference features of one object: F_ms of the analyzer run on `image` with
/// `object_mask`, under a fixed noise seed. Inputs are resized to the
/// analyzer's resolution when needed. Returns [C_ms, g, g].
torch::Tensor reference_features(analyzer::LoadedAnalyzer& a, const ImageRGB& image, const MaskGray& object_mask,
                                 std::uint64_t z_seed = 0);

/// Target = after image; composite = after image with the moved object's shadow
/// removed; reference = the same object in the before image.
SynthPair make_relocation_pair(analyzer::LoadedAnalyzer& a, const SynthConfig& cfg, const Relocation& r);

/// Multi-object scene: for each object, the target is the scene, the composite
/// lacks that object's shadow and the reference is another object drawn by `rng`.
std::vector<SynthPair> make_reference_pairs(analyzer::LoadedAnalyzer& a, const SynthConfig& cfg, const world::SceneSample& scene,
                                            Rng& rng);

/// How training pairs are drawn from a set of rendered scenes.
struct PairPolicy {
  /// Relocations drawn per object; offsets are uniform in +-max_offset_frac of the width.
  int relocations_per_object = 1;
  double max_offset_frac = 0.2;
  /// Also add one reference pair per object of every multi-object scene.
  bool reference_pairs = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PairPolicy from_json(const nlohmann::json& j);
};

/// Relocation pairs (rejection-sampled offsets; an object is skipped after 32
/// failed draws) followed by reference pairs.
std::vector<SynthPair> build_pairs(analyzer::LoadedAnalyzer& a, const SynthConfig& cfg, const std::vector<world::SceneSample>& scenes,
                                   const PairPolicy& policy);

/// Rescales a raster to the synthesizer's resolution: box filter for integer
/// downscale factors, bilinear otherwise.
ImageRGB to_synth_resolution(const ImageRGB& img, int resolution);
MaskGray to_synth_resolution(const MaskGray& m, int resolution);

struct SynthTrainConfig {
  int steps = 4000;
  int batch_size = 64;
  double lr_unet = 1e-4;
  double lr_adaptor = 1e-4;
  /// U-Net lr multiplier once the epoch index passes half the epoch budget.
  double lr_decay = 0.01;
  std::uint64_t seed = 0;
  int log_every = 1;
  int checkpoint_every = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthTrainConfig from_json(const nlohmann::json& j);
};

/// U-Net learning rate for a 0-based epoch: lr_unet up to and including the
/// halfway epoch, lr_unet * lr_decay after it.
double unet_lr(const SynthTrainConfig& t, int epoch, int total_epochs);
double adaptor_lr(const SynthTrainConfig& t, int epoch, int total_epochs);

struct SynthStepLog {
  int step = 0;
  int epoch = 0;
  double total = 0, eps = 0, mask = 0, lr_unet = 0, lr_adaptor = 0;
  nlohmann::json to_json() const;
};

/// Epochs are passes over the pair list at the configured batch size.
class SynthTrainer {
 public:
  SynthTrainer(SynthConfig cfg, SynthTrainConfig train, std::vector<SynthPair> pairs);

  SynthStepLog step();
  void run(std::ostream* log = nullptr, const std::filesystem::path& checkpoint_path = {});

  int step_index() const { return step_; }
  int steps_per_epoch() const;
  int total_epochs() const;
  SynthModel& model() { return model_; }
  const SynthConfig& config() const { return cfg_; }

  /// Provenance stored in checkpoints: hash of the frozen analyzer weights.
  std::uint64_t analyzer_hash = 0;

  ckpt::Checkpoint to_checkpoint();
  void save(const std::filesystem::path& path);
  void restore(const std::filesystem::path& path);

  std::filesystem::path nan_dump_path = "nan_batch.ckp";

 private:
  SynthConfig cfg_;
  SynthTrainConfig train_;
  std::vector<SynthPair> pairs_;
  std::vector<torch::Tensor> hints_;
  diffusion::Schedule schedule_;
  SynthModel model_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_;
  int step_ = 0;
};

/// Inference-only synthesizer loaded from a checkpoint, in eval mode.
struct LoadedSynth {
  SynthConfig config;
  SynthModel model{nullptr};
  std::uint64_t analyzer_hash = 0;
};
LoadedSynth load_synthesizer(const std::filesystem::path& path);

}  // namespace umbra::synth
