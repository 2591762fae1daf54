#include "umbra/synthesizer.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>
#include <torch/nn/functional.h>
#include <torch/torch.h>

#include "umbra/analyzer.hpp"
#include "umbra/errors.hpp"

namespace umbra::synth {
namespace F = torch::nn::functional;
namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(path + "." + key, "wrong type");
  }
}

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / half);
  const auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
  if (dim % 2) emb = F::pad(emb, F::PadFuncOptions({0, 1}));
  return emb;
}

}  // namespace

const char* mode_name(EmbeddingMode m) { return m == EmbeddingMode::analyzer ? "analyzer" : "learned_constant"; }

EmbeddingMode parse_mode(const std::string& name) {
  if (name == "analyzer") return EmbeddingMode::analyzer;
  if (name == "learned_constant") return EmbeddingMode::learned_constant;
  throw InvalidArgument("unknown embedding mode '" + name + "' (expected analyzer or learned_constant)");
}

SynthConfig SynthConfig::desk() { return {}; }

SynthConfig SynthConfig::paper() {
  SynthConfig c;
  c.preset = "paper";
  c.resolution = 128;
  c.channels = {128, 256, 512, 512};
  c.attention_heads = 8;
  c.attention_dim = 512;
  c.groups = 32;
  c.fms_channels = 1344;
  c.fms_grid = 32;
  c.adaptor_channels = 1024;
  c.embed_dim = 2048;
  return c;
}

SynthConfig SynthConfig::tiny() {
  SynthConfig c;
  c.preset = "tiny";
  c.resolution = 16;
  c.channels = {8, 8};
  c.attention_levels = 1;
  c.attention_heads = 2;
  c.attention_dim = 8;
  c.groups = 4;
  c.fms_channels = 10;
  c.fms_grid = 4;
  c.adaptor_channels = 8;
  c.embed_dim = 8;
  return c;
}

SynthConfig SynthConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  if (name == "tiny") return tiny();
  throw InvalidArgument("unknown synthesizer preset '" + name + "'");
}

diffusion::Schedule SynthConfig::schedule() const { return diffusion::Schedule::linear(timesteps, beta_start, beta_end); }

void SynthConfig::validate() const {
  const int levels = static_cast<int>(channels.size());
  if (levels < 1) throw InvalidArgument("synthesizer needs at least one U-Net level");
  if (resolution < 8 || resolution % (1 << (levels - 1)) != 0)
    throw InvalidArgument("synthesizer resolution must be >= 8 and divisible by 2^(levels-1)");
  for (int c : channels)
    if (c < 1 || c % groups != 0) throw InvalidArgument(fmt::format("U-Net channels must be positive multiples of groups ({})", groups));
  if (attention_levels < 0 || attention_levels > levels) throw InvalidArgument("attention_levels out of range");
  if (attention_heads < 1 || attention_dim % attention_heads != 0) throw InvalidArgument("attention_dim must be a multiple of attention_heads");
  if (fms_channels < 1 || fms_grid < 1 || adaptor_channels < 1 || embed_dim < 1) throw InvalidArgument("adaptor sizes must be positive");
  if (!(lambda_mask >= 0.0)) throw InvalidArgument("lambda_mask must be >= 0");
  if (!(p_hint >= 0.0 && p_hint <= 1.0)) throw InvalidArgument("p_hint must lie in [0, 1]");
  if (hint_dilation < 0) throw InvalidArgument("hint_dilation must be >= 0");
  if (sampler_steps < 1 || sampler_steps > timesteps) throw InvalidArgument("sampler_steps must lie in [1, timesteps]");
  schedule();
}

nlohmann::json SynthConfig::to_json() const {
  return {{"preset", preset},
          {"resolution", resolution},
          {"channels", channels},
          {"attention_levels", attention_levels},
          {"attention_heads", attention_heads},
          {"attention_dim", attention_dim},
          {"groups", groups},
          {"fms_channels", fms_channels},
          {"fms_grid", fms_grid},
          {"adaptor_channels", adaptor_channels},
          {"embed_dim", embed_dim},
          {"embedding", mode_name(embedding)},
          {"lambda_mask", lambda_mask},
          {"p_hint", p_hint},
          {"hint_dilation", hint_dilation},
          {"timesteps", timesteps},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"sampler_steps", sampler_steps},
          {"composite_prior", composite_prior}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("synthesizer", "expected an object");
  SynthConfig c;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw SchemaError("synthesizer.preset", "expected a string");
    c = preset_named(j["preset"].get<std::string>());
  }
  const std::string p = "synthesizer";
  read_opt(j, "resolution", c.resolution, p);
  read_opt(j, "channels", c.channels, p);
  read_opt(j, "attention_levels", c.attention_levels, p);
  read_opt(j, "attention_heads", c.attention_heads, p);
  read_opt(j, "attention_dim", c.attention_dim, p);
  read_opt(j, "groups", c.groups, p);
  read_opt(j, "fms_channels", c.fms_channels, p);
  read_opt(j, "fms_grid", c.fms_grid, p);
  read_opt(j, "adaptor_channels", c.adaptor_channels, p);
  read_opt(j, "embed_dim", c.embed_dim, p);
  std::string mode = mode_name(c.embedding);
  read_opt(j, "embedding", mode, p);
  try {
    c.embedding = parse_mode(mode);
  } catch (const InvalidArgument&) {
    throw SchemaError(p + ".embedding", "expected 'analyzer' or 'learned_constant'");
  }
  read_opt(j, "lambda_mask", c.lambda_mask, p);
  read_opt(j, "p_hint", c.p_hint, p);
  read_opt(j, "hint_dilation", c.hint_dilation, p);
  read_opt(j, "timesteps", c.timesteps, p);
  read_opt(j, "beta_start", c.beta_start, p);
  read_opt(j, "beta_end", c.beta_end, p);
  read_opt(j, "sampler_steps", c.sampler_steps, p);
  read_opt(j, "composite_prior", c.composite_prior, p);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

AdaptorImpl::AdaptorImpl(const SynthConfig& cfg) : cfg_(cfg) {
  conv2d_ = register_module("conv2d", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.fms_channels, cfg.adaptor_channels, 3).padding(1)));
  conv1d_ = register_module("conv1d", torch::nn::Conv1d(torch::nn::Conv1dOptions(cfg.adaptor_channels, cfg.adaptor_channels, 3).padding(1)));
  fc1_ = register_module("fc1", torch::nn::Linear(cfg.adaptor_channels, cfg.embed_dim));
  fc2_ = register_module("fc2", torch::nn::Linear(cfg.embed_dim, cfg.embed_dim));
}

torch::Tensor AdaptorImpl::forward(const torch::Tensor& fms) {
  if (fms.dim() != 4 || fms.size(1) != cfg_.fms_channels || fms.size(2) != cfg_.fms_grid || fms.size(3) != cfg_.fms_grid)
    throw InvalidArgument(fmt::format("adaptor expects F_ms of shape [N, {}, {}, {}]", cfg_.fms_channels, cfg_.fms_grid, cfg_.fms_grid));
  auto x = conv2d_(fms).flatten(2);  // [N, C', tokens]
  x = F::gelu(conv1d_(x)).transpose(1, 2);
  return fc2_(F::gelu(fc1_(x)));
}

ResBlockImpl::ResBlockImpl(int in, int out, int temb_dim, int groups) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(groups, in));
  conv1_ = register_module("conv1", conv3(in, out));
  time_ = register_module("time", torch::nn::Linear(temb_dim, out));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(groups, out));
  conv2_ = register_module("conv2", conv3(out, out));
  if (in != out) skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_(F::silu(norm1_(x)));
  h = h + time_(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(F::silu(norm2_(h)));
  return h + (skip_ ? skip_(x) : x);
}

CrossAttentionImpl::CrossAttentionImpl(int channels, int embed_dim, int attn_dim, int heads, int groups) : heads_(heads) {
  norm_ = register_module("norm", torch::nn::GroupNorm(groups, channels));
  q_ = register_module("q", torch::nn::Linear(torch::nn::LinearOptions(channels, attn_dim).bias(false)));
  k_ = register_module("k", torch::nn::Linear(torch::nn::LinearOptions(embed_dim, attn_dim).bias(false)));
  v_ = register_module("v", torch::nn::Linear(torch::nn::LinearOptions(embed_dim, attn_dim).bias(false)));
  out_ = register_module("out", torch::nn::Linear(attn_dim, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& tokens) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto split = [&](const torch::Tensor& t) { return t.view({n, t.size(1), heads_, -1}).transpose(1, 2); };
  const auto q = split(q_(norm_(x).flatten(2).transpose(1, 2)));  // [N, heads, HW, d]
  const auto k = split(k_(tokens));
  const auto v = split(v_(tokens));
  const auto attn = torch::softmax(torch::matmul(q, k.transpose(-1, -2)) / std::sqrt(static_cast<double>(q.size(-1))), -1);
  const auto o = torch::matmul(attn, v).transpose(1, 2).reshape({n, h * w, -1});
  return x + out_(o).transpose(1, 2).reshape({n, c, h, w});
}

UNetImpl::UNetImpl(const SynthConfig& cfg) : cfg_(cfg), temb_dim_(4 * cfg.channels.front()) {
  cfg_.validate();
  const auto& ch = cfg_.channels;
  const int levels = static_cast<int>(ch.size());
  const auto attention = [&](int c) {
    return CrossAttention(c, cfg_.embed_dim, cfg_.attention_dim, cfg_.attention_heads, cfg_.groups);
  };
  temb1_ = register_module("temb1", torch::nn::Linear(ch.front(), temb_dim_));
  temb2_ = register_module("temb2", torch::nn::Linear(temb_dim_, temb_dim_));
  in_ = register_module("in", conv3(8, ch.front()));
  int prev = ch.front();
  for (int l = 0; l < levels; ++l) {
    down_blocks_->push_back(ResBlock(prev, ch[l], temb_dim_, cfg_.groups));
    if (has_attention(l)) down_attn_->push_back(attention(ch[l]));
    if (l + 1 < levels) downsample_->push_back(conv3(ch[l], ch[l], 2));
    prev = ch[l];
  }
  mid1_ = register_module("mid1", ResBlock(prev, prev, temb_dim_, cfg_.groups));
  mid_attn_ = register_module("mid_attn", attention(prev));
  mid2_ = register_module("mid2", ResBlock(prev, prev, temb_dim_, cfg_.groups));
  for (int l = levels - 1; l >= 0; --l) {
    up_blocks_->push_back(ResBlock(2 * ch[l], ch[l], temb_dim_, cfg_.groups));
    if (has_attention(l)) up_attn_->push_back(attention(ch[l]));
    if (l > 0) upsample_->push_back(conv3(ch[l], ch[l - 1]));
  }
  register_module("down_blocks", down_blocks_);
  register_module("down_attn", down_attn_);
  register_module("downsample", downsample_);
  register_module("up_blocks", up_blocks_);
  register_module("up_attn", up_attn_);
  register_module("upsample", upsample_);
  out_norm_ = register_module("out_norm", torch::nn::GroupNorm(cfg_.groups, ch.front()));
  eps_head_ = register_module("eps_head", conv3(ch.front(), 3));
  mask_head_ = register_module("mask_head", conv3(ch.front(), 1));
  alpha_bar_ = cfg_.schedule().alpha_bar.to(torch::kFloat64);
}

// Lower bound on 1 - alpha_bar in the composite-prior head. Keeps the eps
// loss weight of the head below 10 near t = 0; sampled steps sit above it.
constexpr double kPriorNoiseFloor = 0.1;

bool UNetImpl::has_attention(int level) const {
  return level >= static_cast<int>(cfg_.channels.size()) - cfg_.attention_levels;
}

diffusion::DenoiserOutput UNetImpl::forward(const torch::Tensor& x_t, const torch::Tensor& cond, const torch::Tensor& t,
                                            const torch::Tensor& tokens) {
  if (x_t.dim() != 4 || x_t.size(1) != 3 || cond.size(1) != 5 || cond.sizes().slice(2) != x_t.sizes().slice(2))
    throw InvalidArgument("U-Net expects x_t [N, 3, H, W] and a 5-channel condition of the same size");
  const int levels = static_cast<int>(cfg_.channels.size());
  if (x_t.size(2) % (1 << (levels - 1)) != 0 || x_t.size(3) % (1 << (levels - 1)) != 0)
    throw InvalidArgument("U-Net input size must be divisible by 2^(levels-1)");
  if (tokens.dim() != 3 || tokens.size(0) != x_t.size(0) || tokens.size(2) != cfg_.embed_dim)
    throw InvalidArgument(fmt::format("U-Net expects embedding tokens [N, tokens, {}]", cfg_.embed_dim));

  const auto temb = temb2_(F::silu(temb1_(timestep_embedding(t, cfg_.channels.front()).to(x_t.scalar_type()))));
  auto h = in_(torch::cat({x_t, cond}, 1));
  std::vector<torch::Tensor> skips;
  int attn = 0;
  for (int l = 0; l < levels; ++l) {
    h = down_blocks_[l]->as<ResBlock>()->forward(h, temb);
    if (has_attention(l)) h = down_attn_[attn++]->as<CrossAttention>()->forward(h, tokens);
    skips.push_back(h);
    if (l + 1 < levels) h = downsample_[l]->as<torch::nn::Conv2d>()->forward(h);
  }
  h = mid2_(mid_attn_(mid1_(h, temb), tokens), temb);
  attn = 0;
  for (int i = 0; i < levels; ++i) {
    const int l = levels - 1 - i;
    h = up_blocks_[i]->as<ResBlock>()->forward(torch::cat({h, skips[l]}, 1), temb);
    if (has_attention(l)) h = up_attn_[attn++]->as<CrossAttention>()->forward(h, tokens);
    if (l > 0) {
      h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
      h = upsample_[i]->as<torch::nn::Conv2d>()->forward(h);
    }
  }
  h = F::silu(out_norm_(h));
  auto eps = eps_head_(h);
  if (cfg_.composite_prior) {
    const auto ab = alpha_bar_.to(t.device()).index_select(0, t.to(torch::kLong).view(-1)).to(x_t.scalar_type()).view({-1, 1, 1, 1});
    eps = (x_t - torch::sqrt(ab) * (cond.narrow(1, 0, 3) + eps)) / torch::sqrt((1 - ab).clamp_min(kPriorNoiseFloor));
  }
  return {eps, torch::sigmoid(mask_head_(h))};
}

SynthModelImpl::SynthModelImpl(const SynthConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  unet = register_module("unet", UNet(cfg_));
  if (cfg_.embedding == EmbeddingMode::analyzer) {
    adaptor = register_module("adaptor", Adaptor(cfg_));
  } else {
    constant = register_parameter("constant", torch::randn({cfg_.tokens(), cfg_.embed_dim}) * 0.02);
  }
}

torch::Tensor SynthModelImpl::embed(const torch::Tensor& fms, int64_t batch) {
  if (cfg_.embedding == EmbeddingMode::learned_constant) return constant.unsqueeze(0).expand({batch, -1, -1});
  if (!fms.defined()) throw InvalidArgument("analyzer embedding mode needs reference features");
  if (fms.size(0) != batch) throw InvalidArgument("reference feature batch does not match the input batch");
  return adaptor(fms);
}

torch::Tensor make_condition(const torch::Tensor& composite, const torch::Tensor& object_mask, const torch::Tensor& hint) {
  if (composite.size(1) != 3 || object_mask.size(1) != 1 || hint.size(1) != 1)
    throw InvalidArgument("condition expects a 3-channel composite and 1-channel masks");
  return torch::cat({diffusion::to_model_space(composite), object_mask, hint}, 1);
}

SynthLoss synth_loss(SynthModel& model, const SynthBatch& batch, const diffusion::Schedule& schedule, const torch::Tensor& t,
                     const torch::Tensor& eps) {
  const auto n = batch.target.size(0);
  const auto x_t = diffusion::q_sample(diffusion::to_model_space(batch.target), t, eps, schedule);
  const auto tokens = model->embed(batch.fms, n);
  const auto out = model->unet(x_t, make_condition(batch.composite, batch.object_mask, batch.hint), t, tokens);
  SynthLoss l;
  l.eps_term = (out.eps - eps).pow(2).mean();
  l.mask_term = analyzer::dice_loss(out.mask, batch.shadow_mask);
  l.total = l.eps_term + model->config().lambda_mask * l.mask_term;
  return l;
}

SynthResult sample_few_step(SynthModel& model, const torch::Tensor& composite, const torch::Tensor& object_mask,
                            const torch::Tensor& hint, const torch::Tensor& embedding, int steps, std::uint64_t seed,
                            const std::optional<torch::Tensor>& keep) {
  if (steps < 1) throw InvalidArgument("sampler needs at least one step");
  const auto cond = make_condition(composite, object_mask, hint);
  auto gen = at::detail::createCPUGenerator(seed);
  const auto noise = torch::randn(composite.sizes(), gen, composite.options());
  const auto schedule = model->config().schedule();
  const diffusion::Denoiser net = [&](const torch::Tensor& x, const torch::Tensor& t) {
    return model->unet(x, cond, t, embedding);
  };
  std::optional<torch::Tensor> known;
  if (keep) known = diffusion::to_model_space(composite);
  const auto r = diffusion::ddim_sample(net, noise, schedule, steps, known, keep);
  return {diffusion::to_image_space(r.x0), r.mask};
}

}  // namespace umbra::synth
