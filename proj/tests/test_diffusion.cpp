#include <gtest/gtest.h>

#include <cmath>

#include <torch/torch.h>

#include "umbra/diffusion.hpp"
#include "umbra/errors.hpp"

using namespace umbra;
using namespace umbra::diffusion;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

// Closed-form alpha_bar for the linear schedule, accumulated independently.
double alpha_bar_oracle(int t, int T = 1000, double b0 = 1e-4, double b1 = 0.02) {
  double ab = 1.0;
  for (int i = 0; i <= t; ++i) ab *= 1.0 - (b0 + (b1 - b0) * i / (T - 1));
  return ab;
}

}  // namespace

TEST(Schedule, Invariants) {
  const auto s = Schedule::linear();
  EXPECT_NO_THROW(s.validate());
  const auto b = s.betas, ab = s.alpha_bar;
  EXPECT_TRUE(b.gt(0).all().item<bool>() && b.lt(1).all().item<bool>());
  EXPECT_TRUE(b.diff().gt(0).all().item<bool>());
  EXPECT_TRUE(ab.diff().lt(0).all().item<bool>());
  EXPECT_TRUE(ab.gt(0).all().item<bool>() && ab.lt(1).all().item<bool>());
  EXPECT_EQ(s.alpha_bar_at(0), 1.0 - b[0].item<double>());
  const auto unit = torch::sqrt(ab).pow(2) + (1.0 - ab);
  EXPECT_LE((unit - 1.0).abs().max().item<double>(), 4e-16);
}

TEST(Schedule, MatchesClosedFormProduct) {
  const auto s = Schedule::linear();
  EXPECT_NEAR(s.alpha_bar_at(1), (1 - 1e-4) * (1 - (1e-4 + (0.02 - 1e-4) / 999)), 1e-15);
  for (int t : {0, 1, 10, 250, 500, 999}) EXPECT_NEAR(s.alpha_bar_at(t), alpha_bar_oracle(t), 1e-12) << t;
}

TEST(Schedule, RejectsBadParameters) {
  EXPECT_THROW(Schedule::linear(1), InvalidArgument);
  EXPECT_THROW(Schedule::linear(100, 0.02, 1e-4), InvalidArgument);
  EXPECT_THROW(Schedule::linear(100, 1e-4, 1.5), InvalidArgument);
  EXPECT_THROW(Schedule::linear().alpha_bar_at(1000), InvalidArgument);
}

TEST(QSample, ZeroNoiseScalesSignal) {
  const auto s = Schedule::linear();
  torch::manual_seed(0);
  const auto x0 = torch::rand({3, 3, 8, 8}, f64) * 2 - 1;
  const auto t = torch::tensor({0, 400, 999}, torch::kInt64);
  const auto xt = q_sample(x0, t, torch::zeros_like(x0), s);
  EXPECT_EQ(xt.sizes(), x0.sizes());
  for (int i = 0; i < 3; ++i) {
    const double k = std::sqrt(s.alpha_bar_at(t[i].item<int>()));
    EXPECT_LE((xt[i] - k * x0[i]).abs().max().item<double>(), 1e-15);
  }
}

TEST(QSample, IsLinearInSignalAndNoise) {
  const auto s = Schedule::linear();
  torch::manual_seed(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = torch::randn({2, 3, 4, 4}, f64), b = torch::randn({2, 3, 4, 4}, f64);
    const auto ea = torch::randn({2, 3, 4, 4}, f64), eb = torch::randn({2, 3, 4, 4}, f64);
    const double u = torch::randn({1}, f64).item<double>(), v = torch::randn({1}, f64).item<double>();
    const auto t = torch::randint(0, 1000, {2}, torch::kInt64);
    const auto lhs = q_sample(u * a + v * b, t, u * ea + v * eb, s);
    const auto rhs = u * q_sample(a, t, ea, s) + v * q_sample(b, t, eb, s);
    EXPECT_LE((lhs - rhs).abs().max().item<double>(), 1e-6);
  }
}

TEST(QSample, MonteCarloVariance) {
  const auto s = Schedule::linear();
  torch::manual_seed(2);
  const int64_t n = 100000;
  for (int t : {10, 300, 900}) {
    const auto x0 = torch::full({n, 1, 1, 1}, 0.3, f64);
    const auto tt = torch::full({n}, t, torch::kInt64);
    const auto residual = q_sample(x0, tt, torch::randn({n, 1, 1, 1}, f64), s) - std::sqrt(s.alpha_bar_at(t)) * x0;
    const double expected = 1.0 - s.alpha_bar_at(t);
    EXPECT_NEAR(residual.var().item<double>(), expected, 0.02 * expected) << t;
  }
}

TEST(QSample, RejectsBadTimesteps) {
  const auto s = Schedule::linear();
  const auto x = torch::zeros({2, 3, 4, 4});
  EXPECT_THROW(q_sample(x, torch::tensor({0, 1000}, torch::kInt64), x, s), InvalidArgument);
  EXPECT_THROW(q_sample(x, torch::tensor({0}, torch::kInt64), x, s), InvalidArgument);
}

TEST(Sampler, UniformTimesteps) {
  EXPECT_EQ(sampling_timesteps(1000, 4), (std::vector<int>{999, 750, 500, 250}));
  EXPECT_EQ(sampling_timesteps(1000, 1), (std::vector<int>{999}));
  EXPECT_THROW(sampling_timesteps(1000, 0), InvalidArgument);
  EXPECT_THROW(ddim_sample([](const torch::Tensor& x, const torch::Tensor&) { return DenoiserOutput{x, x}; },
                           torch::zeros({1, 3, 4, 4}), Schedule::linear(), 0),
               InvalidArgument);
}

// A denoiser that knows the clean signal recovers it exactly at every step.
TEST(Sampler, OracleDenoiserRecoversSignal) {
  const auto s = Schedule::linear();
  torch::manual_seed(3);
  const auto x0 = (torch::rand({2, 3, 8, 8}, f64) * 1.6 - 0.8);
  const Denoiser oracle = [&](const torch::Tensor& x, const torch::Tensor& t) {
    const double ab = s.alpha_bar_at(t[0].item<int>());
    return DenoiserOutput{(x - std::sqrt(ab) * x0) / std::sqrt(1 - ab), torch::full({2, 1, 8, 8}, 0.5, f64)};
  };
  const auto r = ddim_sample(oracle, torch::randn({2, 3, 8, 8}, f64), s, 4);
  EXPECT_LE((r.x0 - x0).abs().max().item<double>(), 1e-6);
}

TEST(Sampler, SingleStepIsOneShotPrediction) {
  const auto s = Schedule::linear();
  torch::manual_seed(4);
  const auto noise = torch::randn({1, 3, 4, 4}, f64);
  const auto w = torch::randn({1, 3, 4, 4}, f64);
  const Denoiser net = [&](const torch::Tensor& x, const torch::Tensor&) { return DenoiserOutput{torch::tanh(x * w), x.narrow(1, 0, 1)}; };
  const auto r = ddim_sample(net, noise, s, 1);
  const double ab = s.alpha_bar_at(999);
  const auto expected = ((noise - std::sqrt(1 - ab) * torch::tanh(noise * w)) / std::sqrt(ab)).clamp(-1, 1);
  EXPECT_TRUE(torch::equal(r.x0, expected));
}

TEST(Sampler, DeterministicAndKeepsKnownPixels) {
  const auto s = Schedule::linear();
  torch::manual_seed(5);
  const auto w = torch::randn({1, 3, 8, 8});
  const Denoiser net = [&](const torch::Tensor& x, const torch::Tensor& t) {
    return DenoiserOutput{torch::sin(x * w + t.to(torch::kFloat32).view({-1, 1, 1, 1}) * 1e-3), torch::sigmoid(x.narrow(1, 0, 1))};
  };
  const auto noise = torch::randn({1, 3, 8, 8});
  const auto known = torch::rand({1, 3, 8, 8}) * 2 - 1;
  auto keep = torch::zeros({1, 1, 8, 8});
  keep.index_put_({0, 0, torch::indexing::Slice(0, 4)}, 1.0);
  const auto a = ddim_sample(net, noise, s, 4, known, keep);
  const auto b = ddim_sample(net, noise, s, 4, known, keep);
  EXPECT_TRUE(torch::equal(a.x0, b.x0));
  EXPECT_TRUE(torch::equal(a.mask, b.mask));
  EXPECT_TRUE(torch::equal(a.x0.narrow(2, 0, 4), known.narrow(2, 0, 4)));
  EXPECT_LE(a.x0.abs().max().item<double>(), 1.0);
  EXPECT_THROW(ddim_sample(net, noise, s, 4, known, std::nullopt), InvalidArgument);
}

TEST(Spaces, RoundTrip) {
  const auto img = torch::rand({1, 3, 4, 4}, f64);
  EXPECT_LE((to_image_space(to_model_space(img)) - img).abs().max().item<double>(), 1e-15);
  EXPECT_EQ(to_image_space(torch::full({1}, 3.0)).item<double>(), 1.0);
}
