#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/batchnorm.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

namespace umbra::analyzer {

struct LossWeights {
  double l1 = 1.0;
  double perceptual = 1.0;
  double adversarial = 0.05;
  double dice = 1.0;
  double r1_gamma = 10.0;
  int r1_interval = 16;
};

/// Network shape and loss configuration. Encoder level i has spatial size
/// input_resolution / 2^(i+1) and encoder_channels[i] channels; decoder level
/// at the same size uses the same channel count.
struct AnalyzerConfig {
  std::string preset = "desk";
  int input_resolution = 128;
  std::vector<int> encoder_channels{16, 32, 48, 64, 64};
  int style_dim = 64;
  int noise_dim = 64;
  int mapping_depth = 3;
  std::vector<int> detector_input_sizes{4, 8, 16, 32};
  int detector_output_size = 64;
  int detector_channels = 32;
  std::vector<int> fms_source_sizes{8, 16, 32, 64};
  int fms_grid = 16;
  int disc_channels = 32;
  int perceptual_channels = 16;
  LossWeights loss;

  static AnalyzerConfig desk();
  static AnalyzerConfig paper();
  /// 16x16 input; small enough for float64 finite-difference checks.
  static AnalyzerConfig tiny();
  static AnalyzerConfig preset_named(const std::string& name);

  int levels() const { return static_cast<int>(encoder_channels.size()); }
  int level_size(int level) const { return input_resolution >> (level + 1); }
  /// Level index with the given spatial size; throws if absent.
  int level_of_size(int size) const;
  /// Channel count of the concatenated feature block handed to the synthesizer.
  int fms_channels() const;

  void validate() const;
  nlohmann::json to_json() const;
  static AnalyzerConfig from_json(const nlohmann::json& j);
};

/// Strided 4-channel (RGB + object mask) feature pyramid and style code s.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const AnalyzerConfig& cfg);
  /// Returns features ordered from the largest spatial size to the smallest;
  /// `style` receives s.
  std::vector<torch::Tensor> forward(const torch::Tensor& image, const torch::Tensor& mask, torch::Tensor& style);

 private:
  torch::nn::ModuleList blocks_;
  torch::nn::Linear to_style_{nullptr};
};
TORCH_MODULE(Encoder);

/// Pixel-normalized MLP mapping noise z to style w.
class MappingImpl : public torch::nn::Module {
 public:
  MappingImpl(int noise_dim, int style_dim, int depth);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  torch::nn::ModuleList layers_;
};
TORCH_MODULE(Mapping);

struct DecoderOutput {
  std::vector<torch::Tensor> global;   ///< F_g, smallest size first
  std::vector<torch::Tensor> spatial;  ///< F_s, smallest size first
  torch::Tensor shadowfree;
};

/// Two cascaded upsampling branches. The global branch is FiLM-modulated by
/// (s, w); the spatial branch takes per-pixel scale/shift from the global
/// branch at the same level.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const AnalyzerConfig& cfg);
  DecoderOutput forward(const std::vector<torch::Tensor>& encoder_feats, const torch::Tensor& style_s,
                        const torch::Tensor& style_w, const torch::Tensor& image);

 private:
  struct Level {
    torch::nn::Conv2d conv_g{nullptr}, conv_s{nullptr}, skip_g{nullptr}, skip_s{nullptr}, spatial_mod{nullptr};
    torch::nn::Linear film{nullptr};
  };
  std::vector<Level> levels_;
  torch::nn::Conv2d to_rgb_hidden_{nullptr}, to_rgb_{nullptr};
};
TORCH_MODULE(Decoder);

/// Shadow mask head over the F_s levels listed in detector_input_sizes.
class DetectorImpl : public torch::nn::Module {
 public:
  explicit DetectorImpl(const AnalyzerConfig& cfg);
  /// `spatial` is ordered smallest size first, as produced by the decoder.
  torch::Tensor forward(const std::vector<torch::Tensor>& spatial);

 private:
  AnalyzerConfig cfg_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Detector);

/// Patch discriminator on RGB + object mask, producing an 8x8 score map.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const AnalyzerConfig& cfg);
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& mask);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Frozen random conv pyramid used as the perceptual feature extractor. Its
/// weights come from a private seed-0 generator, so construction never touches
/// the global torch RNG.
class PerceptualNetImpl : public torch::nn::Module {
 public:
  explicit PerceptualNetImpl(int channels);
  std::vector<torch::Tensor> forward(const torch::Tensor& image);

 private:
  torch::nn::ModuleList stages_;
};
TORCH_MODULE(PerceptualNet);

struct AnalyzerOutput {
  torch::Tensor shadowfree;   ///< [N, 3, H, W] in [0, 1]
  torch::Tensor shadow_mask;  ///< [N, 1, H, W] in (0, 1)
  std::vector<torch::Tensor> feats_encoder;  ///< F_e, largest first
  std::vector<torch::Tensor> feats_global;   ///< F_g, smallest first
  std::vector<torch::Tensor> feats_spatial;  ///< F_s, smallest first
  torch::Tensor style_s;
  torch::Tensor style_w;
  torch::Tensor noise_z;
};

/// Generator side of the analyzer: encoder, mapping, decoder and detector.
class AnalyzerNetImpl : public torch::nn::Module {
 public:
  explicit AnalyzerNetImpl(const AnalyzerConfig& cfg);
  /// image [N,3,H,W] in [0,1], mask [N,1,H,W], z [N,noise_dim].
  AnalyzerOutput forward(const torch::Tensor& image, const torch::Tensor& mask, const torch::Tensor& z);

  const AnalyzerConfig& config() const { return cfg_; }
  Encoder encoder{nullptr};
  Mapping mapping{nullptr};
  Decoder decoder{nullptr};
  Detector detector{nullptr};

 private:
  AnalyzerConfig cfg_;
};
TORCH_MODULE(AnalyzerNet);

/// Selects F_s levels in fms_source_sizes, resizes each to fms_grid x fms_grid
/// and concatenates along channels: [N, C_ms, g, g].
torch::Tensor extract_shadow_features(const AnalyzerConfig& cfg, const std::vector<torch::Tensor>& spatial);

/// Per-sample 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), averaged over the batch.
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& gt, double eps = 1.0);

torch::Tensor perceptual_loss(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b);

/// (gamma / 2) * mean over the batch of the squared image gradient of the summed
/// score, restricted to region > 0.5. Builds a double-backward graph.
torch::Tensor masked_r1(Discriminator& disc, const torch::Tensor& real, const torch::Tensor& object_mask,
                        const torch::Tensor& region, double gamma);

struct GeneratorLoss {
  torch::Tensor total, l1, perceptual, adversarial, dice;
};

struct Targets {
  torch::Tensor shadowfree;
  torch::Tensor shadow_mask;
};

GeneratorLoss generator_loss(const AnalyzerConfig& cfg, const AnalyzerOutput& out, const Targets& targets,
                             PerceptualNet& perceptual, Discriminator* disc, const torch::Tensor& object_mask);

struct DiscriminatorLoss {
  torch::Tensor total, adversarial, r1;
};

/// Non-saturating discriminator loss; the R1 term is included (scaled by the
/// lazy interval) only when `with_r1` is set.
DiscriminatorLoss discriminator_loss(const AnalyzerConfig& cfg, Discriminator& disc, const torch::Tensor& real,
                                     const torch::Tensor& fake, const torch::Tensor& object_mask,
                                     const torch::Tensor& region, bool with_r1);

}  // namespace umbra::analyzer
