#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/types.h>

/// DDPM forward process and a deterministic few-step DDIM sampler.
///
/// Timesteps are 0-based array indices: t = 0 is the first noising step and
/// alpha_bar[0] = 1 - beta_1.
namespace umbra::diffusion {

struct Schedule {
  int T = 1000;
  torch::Tensor betas;      ///< [T] float64, strictly increasing
  torch::Tensor alphas;     ///< 1 - betas
  torch::Tensor alpha_bar;  ///< cumulative product of alphas

  static Schedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);
  double alpha_bar_at(int t) const;
  void validate() const;
};

/// Image space [0, 1] to model space [-1, 1] and back.
torch::Tensor to_model_space(const torch::Tensor& image);
torch::Tensor to_image_space(const torch::Tensor& x);

/// x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps, per sample.
/// x0 and eps are [N, C, H, W] in model space; t is an int64 tensor of shape [N].
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps, const Schedule& schedule);

/// Evenly spaced descending timesteps, starting at T - 1: {T-1, 3T/4, T/2, T/4} for 4 steps.
std::vector<int> sampling_timesteps(int T, int steps);

struct DenoiserOutput {
  torch::Tensor eps;   ///< [N, 3, H, W]
  torch::Tensor mask;  ///< [N, 1, H, W] in (0, 1)
};
using Denoiser = std::function<DenoiserOutput(const torch::Tensor& x_t, const torch::Tensor& t)>;

struct SampleResult {
  torch::Tensor x0;    ///< model space, [-1, 1]
  torch::Tensor mask;  ///< mask head output at the last step
};

/// Deterministic DDIM (eta = 0). The clamped x0 estimate is re-noised to the
/// next timestep with the implied noise. When `keep` is given (1 = keep), those
/// pixels are reset to `known` noised with the initial noise at every step and
/// equal `known` in the result.
SampleResult ddim_sample(const Denoiser& net, const torch::Tensor& initial_noise, const Schedule& schedule, int steps,
                         const std::optional<torch::Tensor>& known = std::nullopt,
                         const std::optional<torch::Tensor>& keep = std::nullopt);

}  // namespace umbra::diffusion
