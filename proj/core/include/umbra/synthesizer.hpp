#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

#include "umbra/diffusion.hpp"

namespace umbra::synth {

enum class EmbeddingMode { analyzer, learned_constant };
const char* mode_name(EmbeddingMode m);
EmbeddingMode parse_mode(const std::string& name);

struct SynthConfig {
  std::string preset = "desk";
  int resolution = 64;
  /// U-Net channels per resolution level, top (full resolution) first.
  std::vector<int> channels{24, 48, 96, 128};
  int attention_levels = 2;  ///< cross-attention at this many lowest levels
  int attention_heads = 4;
  int attention_dim = 64;
  int groups = 8;
  int fms_channels = 160;
  int fms_grid = 16;
  int adaptor_channels = 128;
  int embed_dim = 256;
  EmbeddingMode embedding = EmbeddingMode::analyzer;
  double lambda_mask = 1.0;
  double p_hint = 0.5;
  int hint_dilation = 3;
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sampler_steps = 4;
  /// The head predicts x0 - composite; eps is derived from it. The target
  /// is then the same at every t.
  bool composite_prior = true;

  static SynthConfig desk();
  static SynthConfig paper();
  static SynthConfig tiny();
  static SynthConfig preset_named(const std::string& name);

  int tokens() const { return fms_grid * fms_grid; }
  diffusion::Schedule schedule() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// F_ms [N, C_ms, g, g] -> token embedding [N, g*g, embed_dim]: 2D conv, flatten,
/// 1D conv along the token axis, then a per-token MLP.
class AdaptorImpl : public torch::nn::Module {
 public:
  explicit AdaptorImpl(const SynthConfig& cfg);
  torch::Tensor forward(const torch::Tensor& fms);

 private:
  SynthConfig cfg_;
  torch::nn::Conv2d conv2d_{nullptr};
  torch::nn::Conv1d conv1d_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Adaptor);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in, int out, int temb_dim, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear time_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Multi-head attention with queries from the feature map and keys/values from
/// the shadow embedding tokens; residual.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int channels, int embed_dim, int attn_dim, int heads, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& tokens);

 private:
  int heads_;
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, out_{nullptr};
};
TORCH_MODULE(CrossAttention);

/// 8-channel conditional U-Net: [x_t, composite, object mask, hint] with an eps
/// head and a sigmoid shadow-mask head.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const SynthConfig& cfg);
  diffusion::DenoiserOutput forward(const torch::Tensor& x_t, const torch::Tensor& cond, const torch::Tensor& t,
                                    const torch::Tensor& tokens);

 private:
  SynthConfig cfg_;
  int temb_dim_;
  torch::nn::Linear temb1_{nullptr}, temb2_{nullptr};
  torch::nn::Conv2d in_{nullptr};
  torch::nn::ModuleList down_blocks_, down_attn_, downsample_;
  ResBlock mid1_{nullptr}, mid2_{nullptr};
  CrossAttention mid_attn_{nullptr};
  torch::nn::ModuleList up_blocks_, up_attn_, upsample_;
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d eps_head_{nullptr}, mask_head_{nullptr};
  torch::Tensor alpha_bar_;

  bool has_attention(int level) const;
};
TORCH_MODULE(UNet);

/// Denoiser plus its embedding provider: the adaptor over analyzer features or
/// a learned token block that ignores the reference.
class SynthModelImpl : public torch::nn::Module {
 public:
  explicit SynthModelImpl(const SynthConfig& cfg);

  /// `fms` may be undefined in learned-constant mode.
  torch::Tensor embed(const torch::Tensor& fms, int64_t batch);
  const SynthConfig& config() const { return cfg_; }

  UNet unet{nullptr};
  Adaptor adaptor{nullptr};
  torch::Tensor constant;  ///< [tokens, embed_dim], learned-constant mode only

 private:
  SynthConfig cfg_;
};
TORCH_MODULE(SynthModel);

/// Conditioning channels in model space: composite in [-1, 1], mask, hint.
torch::Tensor make_condition(const torch::Tensor& composite, const torch::Tensor& object_mask, const torch::Tensor& hint);

struct SynthBatch {
  torch::Tensor target;       ///< [N, 3, H, W] image space, shadow of the object present
  torch::Tensor composite;    ///< [N, 3, H, W] image space, object present, its shadow absent
  torch::Tensor object_mask;  ///< [N, 1, H, W]
  torch::Tensor hint;         ///< [N, 1, H, W], zeros when absent
  torch::Tensor shadow_mask;  ///< [N, 1, H, W] ground truth shadow of the object
  torch::Tensor fms;          ///< [N, C_ms, g, g] reference features; may be undefined
};

struct SynthLoss {
  torch::Tensor total, eps_term, mask_term;
};

/// Loss at explicit timesteps and noise.
SynthLoss synth_loss(SynthModel& model, const SynthBatch& batch, const diffusion::Schedule& schedule,
                     const torch::Tensor& t, const torch::Tensor& eps);

struct SynthResult {
  torch::Tensor image;  ///< [N, 3, H, W] image space
  torch::Tensor mask;   ///< [N, 1, H, W]
};

/// Few-step deterministic sampling from noise seeded by `seed`. `keep` (1 = keep
/// the composite) enables keep-region blending.
SynthResult sample_few_step(SynthModel& model, const torch::Tensor& composite, const torch::Tensor& object_mask,
                            const torch::Tensor& hint, const torch::Tensor& embedding, int steps, std::uint64_t seed,
                            const std::optional<torch::Tensor>& keep = std::nullopt);

}  // namespace umbra::synth
