#include <algorithm>
#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/autograd.h>
#include <torch/nn/functional/activation.h>
#include <torch/nn/functional/upsampling.h>
#include <torch/nn/modules/activation.h>

#include "umbra/analyzer.hpp"
#include "umbra/errors.hpp"
#include "umbra/tensor_bridge.hpp"

namespace umbra::analyzer {
namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int in, int out, int k, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::Tensor up2(const torch::Tensor& x) { return tensor::resize(x, static_cast<int>(x.size(2)) * 2, static_cast<int>(x.size(3)) * 2); }

torch::Tensor instance_norm(const torch::Tensor& x) {
  const auto mean = x.mean({2, 3}, true);
  const auto var = (x - mean).pow(2).mean({2, 3}, true);
  return (x - mean) / torch::sqrt(var + 1e-5);
}

int log2i(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return n;
}

}  // namespace

EncoderImpl::EncoderImpl(const AnalyzerConfig& cfg) {
  cfg.validate();
  int in = 4;
  for (int c : cfg.encoder_channels) {
    nn::Sequential block;
    block->push_back(conv(in, c, 3, 2));
    block->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    block->push_back(conv(c, c, 3));
    block->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    blocks_->push_back(block);
    in = c;
  }
  register_module("blocks", blocks_);
  to_style_ = register_module("to_style", nn::Linear(in, cfg.style_dim));
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& image, const torch::Tensor& mask, torch::Tensor& style) {
  std::vector<torch::Tensor> feats;
  torch::Tensor x = torch::cat({image * 2 - 1, mask}, 1);
  for (const auto& block : *blocks_) {
    x = block->as<nn::Sequential>()->forward(x);
    feats.push_back(x);
  }
  style = to_style_->forward(x.mean({2, 3}));
  return feats;
}

MappingImpl::MappingImpl(int noise_dim, int style_dim, int depth) {
  int in = noise_dim;
  for (int i = 0; i < depth; ++i) {
    layers_->push_back(nn::Linear(in, style_dim));
    in = style_dim;
  }
  register_module("layers", layers_);
}

torch::Tensor MappingImpl::forward(const torch::Tensor& z) {
  torch::Tensor x = z * torch::rsqrt(z.pow(2).mean(1, true) + 1e-8);
  for (std::size_t i = 0; i < layers_->size(); ++i) {
    x = layers_[i]->as<nn::Linear>()->forward(x);
    if (i + 1 < layers_->size()) x = lrelu(x);
  }
  return x;
}

DecoderImpl::DecoderImpl(const AnalyzerConfig& cfg) {
  cfg.validate();
  const int L = cfg.levels();
  levels_.resize(L);
  for (int j = L - 1; j >= 0; --j) {
    const int c = cfg.encoder_channels[j];
    const int in = j == L - 1 ? c : cfg.encoder_channels[j + 1];
    Level& lv = levels_[j];
    const std::string p = "level" + std::to_string(j) + "_";
    lv.conv_g = register_module(p + "conv_g", conv(in, c, 3));
    lv.conv_s = register_module(p + "conv_s", conv(in, c, 3));
    lv.skip_g = register_module(p + "skip_g", conv(c, c, 1));
    lv.skip_s = register_module(p + "skip_s", conv(c, c, 1));
    lv.spatial_mod = register_module(p + "spatial_mod", conv(c, 2 * c, 1));
    lv.film = register_module(p + "film", nn::Linear(2 * cfg.style_dim, 2 * c));
  }
  const int c0 = cfg.encoder_channels[0];
  to_rgb_hidden_ = register_module("to_rgb_hidden", conv(c0, c0, 3));
  to_rgb_ = register_module("to_rgb", conv(c0, 3, 3));
  torch::NoGradGuard guard;
  to_rgb_->weight.mul_(0.1);
  to_rgb_->bias.zero_();
}

DecoderOutput DecoderImpl::forward(const std::vector<torch::Tensor>& enc, const torch::Tensor& style_s,
                                   const torch::Tensor& style_w, const torch::Tensor& image) {
  const int L = static_cast<int>(levels_.size());
  if (static_cast<int>(enc.size()) != L) throw InvalidArgument("decoder: encoder pyramid depth does not match config");
  const torch::Tensor code = torch::cat({style_s, style_w}, 1);
  DecoderOutput out;
  torch::Tensor xg = enc[L - 1], xs = enc[L - 1];
  for (int j = L - 1; j >= 0; --j) {
    Level& lv = levels_[j];
    if (j < L - 1) {
      xg = up2(out.global.back());
      xs = up2(out.spatial.back());
    }
    if (xg.size(2) != enc[j].size(2)) throw InvalidArgument("decoder: pyramid sizes do not halve per level");
    auto film = lv.film->forward(code).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
    torch::Tensor g = instance_norm(lv.conv_g->forward(xg) + lv.skip_g->forward(enc[j]));
    g = lrelu(g * (1 + film[0]) + film[1]);
    auto mod = lv.spatial_mod->forward(g).chunk(2, 1);
    torch::Tensor s = instance_norm(lv.conv_s->forward(xs) + lv.skip_s->forward(enc[j]));
    s = lrelu(s * (1 + mod[0]) + mod[1]);
    out.global.push_back(g);
    out.spatial.push_back(s);
  }
  const torch::Tensor rgb = to_rgb_->forward(lrelu(to_rgb_hidden_->forward(up2(out.spatial.back()))));
  out.shadowfree = torch::clamp(image + rgb, 0.0, 1.0);
  return out;
}

DetectorImpl::DetectorImpl(const AnalyzerConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  int in = 0;
  for (int s : cfg.detector_input_sizes) in += cfg.encoder_channels[cfg.level_of_size(s)];
  const int dc = cfg.detector_channels;
  body_ = nn::Sequential();
  body_->push_back(conv(in, dc, 3));
  body_->push_back(nn::BatchNorm2d(dc));
  body_->push_back(nn::GELU());
  const int largest = *std::max_element(cfg.detector_input_sizes.begin(), cfg.detector_input_sizes.end());
  for (int size = largest; size < cfg.detector_output_size; size *= 2) {
    body_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(dc, dc, 4).stride(2).padding(1)));
    body_->push_back(nn::BatchNorm2d(dc));
    body_->push_back(nn::GELU());
  }
  register_module("body", body_);
  head_ = register_module("head", conv(dc, 1, 1));
}

torch::Tensor DetectorImpl::forward(const std::vector<torch::Tensor>& spatial) {
  const int largest = *std::max_element(cfg_.detector_input_sizes.begin(), cfg_.detector_input_sizes.end());
  std::vector<torch::Tensor> parts;
  for (int s : cfg_.detector_input_sizes) {
    const auto it = std::find_if(spatial.begin(), spatial.end(), [&](const torch::Tensor& t) { return t.size(2) == s; });
    if (it == spatial.end()) throw InvalidArgument("detector: missing F_s level of the configured size");
    parts.push_back(tensor::resize(*it, largest, largest));
  }
  const torch::Tensor logits = head_->forward(body_->forward(torch::cat(parts, 1)));
  return torch::sigmoid(tensor::resize(logits, cfg_.input_resolution, cfg_.input_resolution));
}

DiscriminatorImpl::DiscriminatorImpl(const AnalyzerConfig& cfg) {
  cfg.validate();
  body_ = nn::Sequential();
  const int strides = log2i(cfg.input_resolution / 8);
  int in = 4, c = cfg.disc_channels;
  for (int i = 0; i < strides; ++i) {
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 4).stride(2).padding(1)));
    body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = c;
    c = std::min(2 * c, 4 * cfg.disc_channels);
  }
  body_->push_back(conv(in, in, 3));
  body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  body_->push_back(conv(in, 1, 3));
  register_module("body", body_);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image, const torch::Tensor& mask) {
  return body_->forward(torch::cat({image * 2 - 1, mask}, 1));
}

PerceptualNetImpl::PerceptualNetImpl(int channels) {
  auto gen = at::detail::createCPUGenerator(0);
  int in = 3, c = channels;
  for (int i = 0; i < 4; ++i) {
    nn::Conv2d layer(nn::Conv2dOptions(in, c, 3).stride(i == 0 ? 1 : 2).padding(1));
    {
      torch::NoGradGuard guard;
      layer->weight.normal_(0.0, std::sqrt(2.0 / (in * 9)), gen);
      layer->bias.zero_();
    }
    stages_->push_back(layer);
    in = c;
    c = std::min(2 * c, 4 * channels);
  }
  register_module("stages", stages_);
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> PerceptualNetImpl::forward(const torch::Tensor& image) {
  std::vector<torch::Tensor> feats;
  torch::Tensor x = image * 2 - 1;
  for (const auto& stage : *stages_) {
    x = torch::relu(stage->as<nn::Conv2d>()->forward(x));
    feats.push_back(x);
  }
  return feats;
}

AnalyzerNetImpl::AnalyzerNetImpl(const AnalyzerConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  encoder = register_module("encoder", Encoder(cfg));
  mapping = register_module("mapping", Mapping(cfg.noise_dim, cfg.style_dim, cfg.mapping_depth));
  decoder = register_module("decoder", Decoder(cfg));
  detector = register_module("detector", Detector(cfg));
}

AnalyzerOutput AnalyzerNetImpl::forward(const torch::Tensor& image, const torch::Tensor& mask, const torch::Tensor& z) {
  const int r = cfg_.input_resolution;
  if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != r || image.size(3) != r)
    throw InvalidArgument("analyzer: image must be [N, 3, R, R] at the configured input resolution");
  if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(2) != r || mask.size(3) != r || mask.size(0) != image.size(0))
    throw InvalidArgument("analyzer: object mask must be [N, 1, R, R] matching the image");
  AnalyzerOutput out;
  out.noise_z = z;
  out.feats_encoder = encoder->forward(image, mask, out.style_s);
  out.style_w = mapping->forward(z);
  DecoderOutput dec = decoder->forward(out.feats_encoder, out.style_s, out.style_w, image);
  out.feats_global = std::move(dec.global);
  out.feats_spatial = std::move(dec.spatial);
  out.shadowfree = dec.shadowfree;
  out.shadow_mask = detector->forward(out.feats_spatial);
  return out;
}

torch::Tensor extract_shadow_features(const AnalyzerConfig& cfg, const std::vector<torch::Tensor>& spatial) {
  std::vector<torch::Tensor> parts;
  for (int s : cfg.fms_source_sizes) {
    const auto it = std::find_if(spatial.begin(), spatial.end(), [&](const torch::Tensor& t) { return t.size(2) == s; });
    if (it == spatial.end()) throw InvalidArgument("extract_shadow_features: no F_s level of the configured size");
    if (it->size(1) != cfg.encoder_channels[cfg.level_of_size(s)])
      throw InvalidArgument("extract_shadow_features: channel count does not match config");
    parts.push_back(tensor::resize(*it, cfg.fms_grid, cfg.fms_grid));
  }
  return torch::cat(parts, 1);
}

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& gt, double eps) {
  const auto p = pred.flatten(1), g = gt.flatten(1);
  const auto inter = (p * g).sum(1);
  return (1 - (2 * inter + eps) / (p.sum(1) + g.sum(1) + eps)).mean();
}

torch::Tensor perceptual_loss(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b) {
  const auto fa = net->forward(a), fb = net->forward(b);
  torch::Tensor loss = torch::zeros({}, a.options());
  for (std::size_t i = 0; i < fa.size(); ++i) loss = loss + (fa[i] - fb[i]).abs().mean();
  return loss;
}

torch::Tensor masked_r1(Discriminator& disc, const torch::Tensor& real, const torch::Tensor& object_mask,
                        const torch::Tensor& region, double gamma) {
  torch::Tensor x = real.detach().requires_grad_(true);
  const torch::Tensor score = disc->forward(x, object_mask);
  const torch::Tensor grad = torch::autograd::grad({score.sum()}, {x}, {}, /*retain_graph=*/true, /*create_graph=*/true)[0];
  const torch::Tensor keep = (region > 0.5).to(grad.scalar_type());
  return (grad.pow(2) * keep).sum({1, 2, 3}).mean() * (gamma / 2.0);
}

GeneratorLoss generator_loss(const AnalyzerConfig& cfg, const AnalyzerOutput& out, const Targets& targets,
                             PerceptualNet& perceptual, Discriminator* disc, const torch::Tensor& object_mask) {
  GeneratorLoss l;
  l.l1 = (out.shadowfree - targets.shadowfree).abs().mean();
  l.perceptual = perceptual_loss(perceptual, out.shadowfree, targets.shadowfree);
  l.dice = dice_loss(out.shadow_mask, targets.shadow_mask);
  l.adversarial = disc ? F::softplus(-(*disc)->forward(out.shadowfree, object_mask)).mean()
                       : torch::zeros({}, out.shadowfree.options());
  l.total = cfg.loss.l1 * l.l1 + cfg.loss.perceptual * l.perceptual + cfg.loss.dice * l.dice + cfg.loss.adversarial * l.adversarial;
  return l;
}

DiscriminatorLoss discriminator_loss(const AnalyzerConfig& cfg, Discriminator& disc, const torch::Tensor& real,
                                     const torch::Tensor& fake, const torch::Tensor& object_mask,
                                     const torch::Tensor& region, bool with_r1) {
  DiscriminatorLoss l;
  l.adversarial = F::softplus(disc->forward(fake.detach(), object_mask)).mean() + F::softplus(-disc->forward(real, object_mask)).mean();
  l.r1 = with_r1 ? masked_r1(disc, real, object_mask, region, cfg.loss.r1_gamma) * static_cast<double>(cfg.loss.r1_interval)
                 : torch::zeros({}, real.options());
  l.total = l.adversarial + l.r1;
  return l;
}

}  // namespace umbra::analyzer
