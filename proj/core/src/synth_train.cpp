#include "umbra/synth_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>

#include "umbra/augment.hpp"
#include "umbra/errors.hpp"
#include "umbra/tensor_bridge.hpp"

namespace umbra::synth {
namespace {

template <int C>
Raster<C> rescale(const Raster<C>& r, int resolution) {
  if (r.height() == resolution && r.width() == resolution) return r;
  if (r.height() == r.width() && r.height() % resolution == 0) return downscale_area(r, r.height() / resolution);
  return resize_bilinear(r, resolution, resolution);
}

}  // namespace

ImageRGB to_synth_resolution(const ImageRGB& img, int resolution) { return rescale(img, resolution); }
MaskGray to_synth_resolution(const MaskGray& m, int resolution) { return rescale(m, resolution); }

torch::Tensor reference_features(analyzer::LoadedAnalyzer& a, const ImageRGB& image, const MaskGray& object_mask,
                                 std::uint64_t z_seed) {
  require_same_shape(image, object_mask, "reference_features");
  torch::NoGradGuard no_grad;
  const int r = a.config.input_resolution;
  const auto img = tensor::resize(tensor::from_raster(image).unsqueeze(0), r, r);
  const auto mask = tensor::resize(tensor::from_raster(object_mask).unsqueeze(0), r, r);
  const auto out = a.net->forward(img, mask, analyzer::noise(1, a.config.noise_dim, z_seed));
  return analyzer::extract_shadow_features(a.config, out.feats_spatial)[0].contiguous();
}

SynthPair make_relocation_pair(analyzer::LoadedAnalyzer& a, const SynthConfig& cfg, const Relocation& r) {
  const int k = r.object_index;
  if (k < 0 || k >= static_cast<int>(r.after.object_masks.size()) || k >= static_cast<int>(r.before.object_masks.size()))
    throw InvalidArgument("relocation object index out of range");
  SynthPair p;
  p.target = to_synth_resolution(r.after.image_shadowed, cfg.resolution);
  p.composite = to_synth_resolution(data::augment_shadow_drop(r.after, k).image_shadowed, cfg.resolution);
  p.object_mask = to_synth_resolution(r.after.object_masks[k], cfg.resolution);
  p.shadow_mask = to_synth_resolution(r.after.shadow_masks[k], cfg.resolution);
  p.fms = reference_features(a, r.before.image_shadowed, r.before.object_masks[k]);
  return p;
}

std::vector<SynthPair> make_reference_pairs(analyzer::LoadedAnalyzer& a, const SynthConfig& cfg, const world::SceneSample& scene,
                                            Rng& rng) {
  const int n = static_cast<int>(scene.object_masks.size());
  if (n < 2) throw InvalidArgument("reference pairs need a scene with at least two objects");
  std::vector<SynthPair> out;
  for (int k = 0; k < n; ++k) {
    int other = static_cast<int>(rng.uniform_int(0, n - 2));
    if (other >= k) ++other;
    SynthPair p;
    p.target = to_synth_resolution(scene.image_shadowed, cfg.resolution);
    p.composite = to_synth_resolution(data::augment_shadow_drop(scene, k).image_shadowed, cfg.resolution);
    p.object_mask = to_synth_resolution(scene.object_masks[k], cfg.resolution);
    p.shadow_mask = to_synth_resolution(scene.shadow_masks[k], cfg.resolution);
    p.fms = reference_features(a, scene.image_shadowed, scene.object_masks[other]);
    out.push_back(std::move(p));
  }
  return out;
}

void SynthTrainConfig::validate() const {
  if (steps < 0) throw InvalidArgument("train.steps must be >= 0");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
  if (!(lr_unet > 0.0 && lr_adaptor > 0.0)) throw InvalidArgument("learning rates must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidArgument("train.lr_decay must lie in (0, 1]");
  if (log_every < 1 || checkpoint_every < 0) throw InvalidArgument("train.log_every must be >= 1 and checkpoint_every >= 0");
}

nlohmann::json SynthTrainConfig::to_json() const {
  return {{"steps", steps},       {"batch_size", batch_size}, {"lr_unet", lr_unet},     {"lr_adaptor", lr_adaptor},
          {"lr_decay", lr_decay}, {"seed", seed},             {"log_every", log_every}, {"checkpoint_every", checkpoint_every}};
}

SynthTrainConfig SynthTrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("train", "expected an object");
  SynthTrainConfig t;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(std::string("train.") + key, "wrong type");
    }
  };
  get("steps", t.steps);
  get("batch_size", t.batch_size);
  get("lr_unet", t.lr_unet);
  get("lr_adaptor", t.lr_adaptor);
  get("lr_decay", t.lr_decay);
  get("seed", t.seed);
  get("log_every", t.log_every);
  get("checkpoint_every", t.checkpoint_every);
  t.validate();
  return t;
}

void PairPolicy::validate() const {
  if (relocations_per_object < 0) throw InvalidArgument("pairs.relocations_per_object must be >= 0");
  if (!(max_offset_frac > 0 && max_offset_frac <= 1)) throw InvalidArgument("pairs.max_offset_frac must be in (0, 1]");
}

nlohmann::json PairPolicy::to_json() const {
  return {{"relocations_per_object", relocations_per_object},
          {"max_offset_frac", max_offset_frac},
          {"reference_pairs", reference_pairs},
          {"seed", seed}};
}

PairPolicy PairPolicy::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("pairs", "expected an object");
  PairPolicy p;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(std::string("pairs.") + key, "wrong type");
    }
  };
  get("relocations_per_object", p.relocations_per_object);
  get("max_offset_frac", p.max_offset_frac);
  get("reference_pairs", p.reference_pairs);
  get("seed", p.seed);
  p.validate();
  return p;
}

std::vector<SynthPair> build_pairs(analyzer::LoadedAnalyzer& a, const SynthConfig& cfg, const std::vector<world::SceneSample>& scenes,
                                   const PairPolicy& policy) {
  policy.validate();
  Rng rng(policy.seed, 0x9a17);
  std::vector<SynthPair> out;
  for (const auto& scene : scenes) {
    const int n = static_cast<int>(scene.object_masks.size());
    const int reach = std::max(1, static_cast<int>(policy.max_offset_frac * scene.width()));
    for (int k = 0; k < n; ++k)
      for (int r = 0; r < policy.relocations_per_object; ++r)
        for (int attempt = 0; attempt < 32; ++attempt) {
          const world::Offset off{static_cast<int>(rng.uniform_int(-reach, reach)), static_cast<int>(rng.uniform_int(-reach, reach))};
          if (off.dx == 0 && off.dy == 0) continue;
          try {
            auto [before, after] = world::make_relocation_pair(scene, k, off);
            out.push_back(make_relocation_pair(a, cfg, {std::move(before), std::move(after), k}));
            break;
          } catch (const OutOfFrameError&) {
          } catch (const InvalidArgument&) {
          }
        }
    if (policy.reference_pairs && n >= 2)
      for (auto& p : make_reference_pairs(a, cfg, scene, rng)) out.push_back(std::move(p));
  }
  return out;
}

double unet_lr(const SynthTrainConfig& t, int epoch, int total_epochs) {
  return epoch > total_epochs / 2 ? t.lr_unet * t.lr_decay : t.lr_unet;
}

double adaptor_lr(const SynthTrainConfig& t, int, int) { return t.lr_adaptor; }

nlohmann::json SynthStepLog::to_json() const {
  return {{"step", step}, {"epoch", epoch}, {"total", total}, {"eps", eps}, {"mask", mask}, {"lr_unet", lr_unet}, {"lr_adaptor", lr_adaptor}};
}

SynthTrainer::SynthTrainer(SynthConfig cfg, SynthTrainConfig train, std::vector<SynthPair> pairs)
    : cfg_(std::move(cfg)), train_(std::move(train)), pairs_(std::move(pairs)) {
  cfg_.validate();
  train_.validate();
  if (pairs_.empty()) throw InvalidArgument("synthesizer training needs at least one pair");
  for (const auto& p : pairs_) {
    if (p.target.height() != cfg_.resolution || p.target.width() != cfg_.resolution)
      throw InvalidArgument(fmt::format("training pairs must be {0}x{0} for this synthesizer config", cfg_.resolution));
    require_same_shape(p.target, p.composite, "synth pair");
    require_same_shape(p.target, p.object_mask, "synth pair");
    require_same_shape(p.target, p.shadow_mask, "synth pair");
    if (cfg_.embedding == EmbeddingMode::analyzer &&
        (!p.fms.defined() || p.fms.dim() != 3 || p.fms.size(0) != cfg_.fms_channels || p.fms.size(1) != cfg_.fms_grid))
      throw InvalidArgument(fmt::format("reference features must be [{0}, {1}, {1}] (analyzer and synthesizer presets disagree?)",
                                        cfg_.fms_channels, cfg_.fms_grid));
    hints_.push_back(tensor::from_raster(dilate(p.shadow_mask, cfg_.hint_dilation)));
  }
  schedule_ = cfg_.schedule();
  torch::manual_seed(train_.seed);
  model_ = SynthModel(cfg_);
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(model_->unet->parameters(), std::make_unique<torch::optim::AdamOptions>(train_.lr_unet));
  std::vector<torch::Tensor> embed_params =
      cfg_.embedding == EmbeddingMode::analyzer ? model_->adaptor->parameters() : std::vector<torch::Tensor>{model_->constant};
  groups.emplace_back(embed_params, std::make_unique<torch::optim::AdamOptions>(train_.lr_adaptor));
  opt_ = std::make_unique<torch::optim::Adam>(groups, torch::optim::AdamOptions(train_.lr_unet));
}

int SynthTrainer::steps_per_epoch() const {
  return (static_cast<int>(pairs_.size()) + train_.batch_size - 1) / train_.batch_size;
}

int SynthTrainer::total_epochs() const { return (train_.steps + steps_per_epoch() - 1) / steps_per_epoch(); }

SynthStepLog SynthTrainer::step() {
  model_->train();
  const int spe = steps_per_epoch();
  const int epoch = step_ / spe;
  const int within = step_ % spe;
  const int P = static_cast<int>(pairs_.size());
  const int B = train_.batch_size;

  // Fixed permutation per epoch; batches larger than the pair list wrap around it.
  std::vector<int> perm(P);
  std::iota(perm.begin(), perm.end(), 0);
  Rng perm_rng(train_.seed, Rng::mix(0x9e12ULL, static_cast<std::uint64_t>(epoch)));
  for (int i = P - 1; i > 0; --i) std::swap(perm[i], perm[perm_rng.uniform_int(0, i)]);

  Rng rng(train_.seed, static_cast<std::uint64_t>(step_));
  std::vector<ImageRGB> target, composite;
  std::vector<MaskGray> objmask, shadow;
  std::vector<torch::Tensor> hints, fms;
  std::vector<int64_t> ts;
  for (int i = 0; i < B; ++i) {
    const SynthPair& p = pairs_[perm[(within * B + i) % P]];
    const auto idx = &p - pairs_.data();
    target.push_back(p.target);
    composite.push_back(p.composite);
    objmask.push_back(p.object_mask);
    shadow.push_back(p.shadow_mask);
    hints.push_back(rng.bernoulli(cfg_.p_hint) ? hints_[idx] : torch::zeros_like(hints_[idx]));
    if (p.fms.defined()) fms.push_back(p.fms);
    ts.push_back(rng.uniform_int(0, cfg_.timesteps - 1));
  }
  SynthBatch batch{tensor::stack(target), tensor::stack(composite), tensor::stack(objmask), torch::stack(hints),
                   tensor::stack(shadow), fms.size() == static_cast<std::size_t>(B) ? torch::stack(fms) : torch::Tensor()};
  const auto t = torch::tensor(ts, torch::kInt64);
  auto gen = at::detail::createCPUGenerator(Rng::mix(train_.seed ^ 0xe95ULL, static_cast<std::uint64_t>(step_)));
  const auto eps = torch::randn(batch.target.sizes(), gen, batch.target.options());

  const double lr_u = unet_lr(train_, epoch, total_epochs());
  const double lr_a = adaptor_lr(train_, epoch, total_epochs());
  static_cast<torch::optim::AdamOptions&>(opt_->param_groups()[0].options()).lr(lr_u);
  static_cast<torch::optim::AdamOptions&>(opt_->param_groups()[1].options()).lr(lr_a);

  opt_->zero_grad();
  const SynthLoss loss = synth_loss(model_, batch, schedule_, t, eps);
  if (!std::isfinite(loss.total.item<double>())) {
    ckpt::Checkpoint dump;
    dump.kind = "nan_batch";
    dump.meta = {{"step", step_}, {"seed", train_.seed}};
    dump.tensors = {{"target", batch.target}, {"composite", batch.composite}, {"object_mask", batch.object_mask},
                    {"hint", batch.hint}, {"shadow_mask", batch.shadow_mask}, {"t", t}, {"eps", eps}};
    if (batch.fms.defined()) dump.tensors["fms"] = batch.fms;
    ckpt::save(nan_dump_path, dump);
    throw TrainingError(fmt::format("non-finite synthesizer loss at step {}; batch written to {}", step_, nan_dump_path.string()));
  }
  loss.total.backward();
  opt_->step();

  SynthStepLog log;
  log.step = step_;
  log.epoch = epoch;
  log.total = loss.total.item<double>();
  log.eps = loss.eps_term.item<double>();
  log.mask = loss.mask_term.item<double>();
  log.lr_unet = lr_u;
  log.lr_adaptor = lr_a;
  ++step_;
  return log;
}

void SynthTrainer::run(std::ostream* log, const std::filesystem::path& checkpoint_path) {
  while (step_ < train_.steps) {
    const SynthStepLog l = step();
    if (log && (l.step % train_.log_every == 0 || step_ == train_.steps)) *log << l.to_json().dump() << '\n' << std::flush;
    if (!checkpoint_path.empty() && train_.checkpoint_every > 0 && step_ % train_.checkpoint_every == 0) save(checkpoint_path);
  }
  if (!checkpoint_path.empty()) save(checkpoint_path);
}

ckpt::Checkpoint SynthTrainer::to_checkpoint() {
  ckpt::Checkpoint c;
  c.kind = "synthesizer";
  c.meta = {{"config", cfg_.to_json()},
            {"train", train_.to_json()},
            {"rng", {{"seed", train_.seed}, {"step", step_}}},
            {"analyzer_hash", fmt::format("{:016x}", analyzer_hash)}};
  ckpt::put_module(c, "model", *model_);
  ckpt::put_adam(c, "opt", *opt_);
  return c;
}

void SynthTrainer::save(const std::filesystem::path& path) { ckpt::save(path, to_checkpoint()); }

void SynthTrainer::restore(const std::filesystem::path& path) {
  const ckpt::Checkpoint c = ckpt::load(path);
  if (c.kind != "synthesizer") throw CheckpointError(path.string() + " is a '" + c.kind + "' checkpoint, expected 'synthesizer'");
  if (SynthConfig::from_json(c.meta.at("config")).to_json() != cfg_.to_json())
    throw CheckpointError(path.string() + ": synthesizer config differs from the trainer's");
  if (c.meta.at("rng").at("seed").get<std::uint64_t>() != train_.seed)
    throw CheckpointError(path.string() + ": checkpoint seed differs from the trainer's");
  ckpt::get_module(c, "model", *model_);
  ckpt::get_adam(c, "opt", *opt_);
  step_ = c.meta.at("rng").at("step").get<int>();
}

LoadedSynth load_synthesizer(const std::filesystem::path& path) {
  const ckpt::Checkpoint c = ckpt::load(path);
  if (c.kind != "synthesizer") throw CheckpointError(path.string() + " is a '" + c.kind + "' checkpoint, expected 'synthesizer'");
  LoadedSynth s;
  try {
    s.config = SynthConfig::from_json(c.meta.at("config"));
    s.analyzer_hash = std::stoull(c.meta.at("analyzer_hash").get<std::string>(), nullptr, 16);
  } catch (const nlohmann::json::exception&) {
    throw CheckpointError(path.string() + ": missing synthesizer config");
  }
  s.model = SynthModel(s.config);
  ckpt::get_module(c, "model", *s.model);
  s.model->eval();
  for (auto& p : s.model->parameters()) p.set_requires_grad(false);
  return s;
}

}  // namespace umbra::synth
