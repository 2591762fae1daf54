#include "umbra/diffusion.hpp"

#include <cmath>

#include "umbra/errors.hpp"

namespace umbra::diffusion {

Schedule Schedule::linear(int T, double beta_start, double beta_end) {
  if (T < 2) throw InvalidArgument("diffusion schedule needs at least two timesteps");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) throw InvalidArgument("need 0 < beta_start < beta_end < 1");
  Schedule s;
  s.T = T;
  s.betas = torch::linspace(beta_start, beta_end, T, torch::kFloat64);
  s.alphas = 1.0 - s.betas;
  s.alpha_bar = torch::cumprod(s.alphas, 0);
  return s;
}

double Schedule::alpha_bar_at(int t) const {
  if (t < 0 || t >= T) throw InvalidArgument("timestep out of range");
  return alpha_bar[t].item<double>();
}

void Schedule::validate() const {
  if (betas.numel() != T || alpha_bar.numel() != T) throw InvalidArgument("schedule arrays do not match T");
  if (!(betas.gt(0).all().item<bool>() && betas.lt(1).all().item<bool>())) throw InvalidArgument("betas must lie in (0, 1)");
  if (!betas.diff().gt(0).all().item<bool>()) throw InvalidArgument("betas must increase strictly");
}

torch::Tensor to_model_space(const torch::Tensor& image) { return image * 2.0 - 1.0; }
torch::Tensor to_image_space(const torch::Tensor& x) { return ((x + 1.0) * 0.5).clamp(0.0, 1.0); }

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps, const Schedule& schedule) {
  if (x0.sizes() != eps.sizes()) throw InvalidArgument("q_sample: x0 and eps shapes differ");
  if (t.dim() != 1 || t.size(0) != x0.size(0)) throw InvalidArgument("q_sample: t must hold one timestep per sample");
  if (t.min().item<int64_t>() < 0 || t.max().item<int64_t>() >= schedule.T) throw InvalidArgument("q_sample: timestep out of range");
  const torch::Tensor ab = schedule.alpha_bar.index_select(0, t.to(torch::kInt64)).to(x0.scalar_type()).view({-1, 1, 1, 1});
  return torch::sqrt(ab) * x0 + torch::sqrt(1.0 - ab) * eps;
}

std::vector<int> sampling_timesteps(int T, int steps) {
  if (steps < 1) throw InvalidArgument("sampler needs at least one step");
  if (steps > T) throw InvalidArgument("more sampler steps than timesteps");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) ts.push_back(std::min(T - 1, static_cast<int>(static_cast<long long>(T) * (steps - i) / steps)));
  return ts;
}

SampleResult ddim_sample(const Denoiser& net, const torch::Tensor& initial_noise, const Schedule& schedule, int steps,
                         const std::optional<torch::Tensor>& known, const std::optional<torch::Tensor>& keep) {
  if (known.has_value() != keep.has_value()) throw InvalidArgument("ddim_sample: keep region needs known pixels and vice versa");
  const std::vector<int> ts = sampling_timesteps(schedule.T, steps);
  const auto n = initial_noise.size(0);
  const auto blend = [&](const torch::Tensor& x, int t) {
    if (!keep) return x;
    const torch::Tensor tt = torch::full({n}, t, torch::kInt64);
    return *keep * q_sample(*known, tt, initial_noise, schedule) + (1 - *keep) * x;
  };

  torch::Tensor x = blend(initial_noise, ts.front());
  SampleResult r;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double ab = schedule.alpha_bar_at(t);
    const DenoiserOutput out = net(x, torch::full({n}, t, torch::kInt64));
    const torch::Tensor x0 = ((x - std::sqrt(1.0 - ab) * out.eps) / std::sqrt(ab)).clamp(-1.0, 1.0);
    r.mask = out.mask;
    if (i + 1 == ts.size()) {
      r.x0 = keep ? *keep * *known + (1 - *keep) * x0 : x0;
      break;
    }
    const torch::Tensor eps = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    const double ab_next = schedule.alpha_bar_at(ts[i + 1]);
    x = blend(std::sqrt(ab_next) * x0 + std::sqrt(1.0 - ab_next) * eps, ts[i + 1]);
  }
  return r;
}

}  // namespace umbra::diffusion
