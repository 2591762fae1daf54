#include "umbra/analyzer_train.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>

#include "umbra/errors.hpp"
#include "umbra/tensor_bridge.hpp"

namespace umbra::analyzer {

void TrainConfig::validate() const {
  if (steps < 0) throw InvalidArgument("train.steps must be >= 0");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("train betas must lie in [0, 1)");
  if (!(p_empty_object_mask >= 0.0 && p_empty_object_mask <= 1.0)) throw InvalidArgument("train.p_empty_object_mask must lie in [0, 1]");
  if (log_every < 1 || checkpoint_every < 0) throw InvalidArgument("train.log_every must be >= 1 and checkpoint_every >= 0");
  augmentation.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"seed", seed},
          {"p_empty_object_mask", p_empty_object_mask},
          {"augment", augment},
          {"augmentation",
           {{"k_min", augmentation.k_min},
            {"k_max", augmentation.k_max},
            {"p_intensity", augmentation.p_intensity},
            {"p_curve", augmentation.p_curve},
            {"curve_jitter", augmentation.curve_jitter},
            {"p_drop", augmentation.p_drop},
            {"p_flip", augmentation.p_flip}}},
          {"log_every", log_every},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("train", "expected an object");
  TrainConfig t;
  auto get = [&](const nlohmann::json& obj, const std::string& path, const char* key, auto& dst) {
    if (!obj.contains(key)) return;
    try {
      dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(path + "." + key, "wrong type");
    }
  };
  get(j, "train", "steps", t.steps);
  get(j, "train", "batch_size", t.batch_size);
  get(j, "train", "lr", t.lr);
  get(j, "train", "beta1", t.beta1);
  get(j, "train", "beta2", t.beta2);
  get(j, "train", "seed", t.seed);
  get(j, "train", "p_empty_object_mask", t.p_empty_object_mask);
  get(j, "train", "augment", t.augment);
  get(j, "train", "log_every", t.log_every);
  get(j, "train", "checkpoint_every", t.checkpoint_every);
  if (j.contains("augmentation")) {
    const auto& a = j["augmentation"];
    const std::string p = "train.augmentation";
    get(a, p, "k_min", t.augmentation.k_min);
    get(a, p, "k_max", t.augmentation.k_max);
    get(a, p, "p_intensity", t.augmentation.p_intensity);
    get(a, p, "p_curve", t.augmentation.p_curve);
    get(a, p, "curve_jitter", t.augmentation.curve_jitter);
    get(a, p, "p_drop", t.augmentation.p_drop);
    get(a, p, "p_flip", t.augmentation.p_flip);
  }
  t.validate();
  return t;
}

nlohmann::json StepLog::to_json() const {
  return {{"step", step},   {"g_total", g_total}, {"l1", l1},       {"perceptual", perceptual}, {"adv_g", adv_g},
          {"dice", dice},   {"d_total", d_total}, {"adv_d", adv_d}, {"r1", r1},                 {"r1_applied", r1_applied}};
}

BatchTensors to_tensors(const std::vector<data::AnalyzerExample>& batch) {
  std::vector<ImageRGB> img, sf;
  std::vector<MaskGray> om, sm;
  for (const auto& ex : batch) {
    img.push_back(ex.image);
    om.push_back(ex.object_mask);
    sf.push_back(ex.target_shadowfree);
    sm.push_back(ex.target_shadow_mask);
  }
  return {tensor::stack(img), tensor::stack(om), tensor::stack(sf), tensor::stack(sm)};
}

torch::Tensor noise(int batch, int dim, std::uint64_t seed, torch::ScalarType dtype) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::randn({batch, dim}, gen, torch::TensorOptions().dtype(dtype));
}

Trainer::Trainer(AnalyzerConfig cfg, TrainConfig train, data::SamplingPolicy policy)
    : cfg_(std::move(cfg)), train_(std::move(train)), policy_(std::move(policy)) {
  cfg_.validate();
  train_.validate();
  policy_.batch_size = train_.batch_size;
  policy_.p_empty_object_mask = train_.p_empty_object_mask;
  policy_.validate();
  for (const auto& src : policy_.sources)
    for (const auto& s : *src.samples)
      if (s.height() != cfg_.input_resolution || s.width() != cfg_.input_resolution)
        throw InvalidArgument(fmt::format("training samples must be {0}x{0} for this analyzer config", cfg_.input_resolution));

  torch::manual_seed(train_.seed);
  net_ = AnalyzerNet(cfg_);
  disc_ = Discriminator(cfg_);
  perceptual_ = PerceptualNet(cfg_.perceptual_channels);
  const auto adam = [&] { return torch::optim::AdamOptions(train_.lr).betas({train_.beta1, train_.beta2}); };
  opt_g_ = std::make_unique<torch::optim::Adam>(net_->parameters(), adam());
  opt_d_ = std::make_unique<torch::optim::Adam>(disc_->parameters(), adam());
}

void Trainer::check_finite(const torch::Tensor& loss, const BatchTensors& b, const torch::Tensor& z) const {
  if (std::isfinite(loss.item<double>())) return;
  ckpt::Checkpoint dump;
  dump.kind = "nan_batch";
  dump.meta = {{"step", step_}, {"seed", train_.seed}, {"loss", loss.item<double>()}};
  dump.tensors = {{"image", b.image}, {"object_mask", b.object_mask}, {"target_shadowfree", b.target_shadowfree},
                  {"target_shadow_mask", b.target_shadow_mask}, {"z", z}};
  ckpt::save(nan_dump_path, dump);
  throw TrainingError(fmt::format("non-finite analyzer loss at step {}; batch written to {}", step_, nan_dump_path.string()));
}

StepLog Trainer::step() {
  net_->train();
  disc_->train();
  Rng rng(train_.seed, static_cast<std::uint64_t>(step_));
  const auto examples = data::sample_analyzer_batch(policy_, rng, train_.augment ? &train_.augmentation : nullptr);
  const BatchTensors b = to_tensors(examples);
  const torch::Tensor z = noise(train_.batch_size, cfg_.noise_dim, Rng::mix(train_.seed ^ 0x5a5aULL, static_cast<std::uint64_t>(step_)));

  const AnalyzerOutput out = net_->forward(b.image, b.object_mask, z);
  const torch::Tensor region = torch::max(b.target_shadow_mask, b.object_mask);
  const bool with_r1 = step_ % cfg_.loss.r1_interval == 0;

  opt_d_->zero_grad();
  const DiscriminatorLoss dl = discriminator_loss(cfg_, disc_, b.target_shadowfree, out.shadowfree, b.object_mask, region, with_r1);
  check_finite(dl.total, b, z);
  dl.total.backward();
  opt_d_->step();

  // The adversarial term reads the freshly updated discriminator. It also
  // deposits gradients there, which the next discriminator step clears.
  opt_g_->zero_grad();
  const GeneratorLoss gl = generator_loss(cfg_, out, {b.target_shadowfree, b.target_shadow_mask}, perceptual_, &disc_, b.object_mask);
  check_finite(gl.total, b, z);
  gl.total.backward();
  opt_g_->step();

  StepLog log;
  log.step = step_;
  log.g_total = gl.total.item<double>();
  log.l1 = gl.l1.item<double>();
  log.perceptual = gl.perceptual.item<double>();
  log.adv_g = gl.adversarial.item<double>();
  log.dice = gl.dice.item<double>();
  log.d_total = dl.total.item<double>();
  log.adv_d = dl.adversarial.item<double>();
  log.r1 = dl.r1.item<double>();
  log.r1_applied = with_r1;
  ++step_;
  return log;
}

void Trainer::run(std::ostream* log, const std::filesystem::path& checkpoint_path) {
  while (step_ < train_.steps) {
    const StepLog l = step();
    if (log && (l.step % train_.log_every == 0 || step_ == train_.steps)) *log << l.to_json().dump() << '\n' << std::flush;
    if (!checkpoint_path.empty() && train_.checkpoint_every > 0 && step_ % train_.checkpoint_every == 0) save(checkpoint_path);
  }
  if (!checkpoint_path.empty()) save(checkpoint_path);
}

ckpt::Checkpoint Trainer::to_checkpoint() {
  ckpt::Checkpoint c;
  c.kind = "analyzer";
  c.meta = {{"config", cfg_.to_json()}, {"train", train_.to_json()}, {"rng", {{"seed", train_.seed}, {"step", step_}}}};
  ckpt::put_module(c, "g", *net_);
  ckpt::put_module(c, "d", *disc_);
  ckpt::put_adam(c, "opt_g", *opt_g_);
  ckpt::put_adam(c, "opt_d", *opt_d_);
  return c;
}

void Trainer::save(const std::filesystem::path& path) { ckpt::save(path, to_checkpoint()); }

void Trainer::restore(const std::filesystem::path& path) {
  const ckpt::Checkpoint c = ckpt::load(path);
  if (c.kind != "analyzer") throw CheckpointError(path.string() + " is a '" + c.kind + "' checkpoint, expected 'analyzer'");
  if (AnalyzerConfig::from_json(c.meta.at("config")).to_json() != cfg_.to_json())
    throw CheckpointError(path.string() + ": analyzer config differs from the trainer's");
  if (c.meta.at("rng").at("seed").get<std::uint64_t>() != train_.seed)
    throw CheckpointError(path.string() + ": checkpoint seed differs from the trainer's");
  ckpt::get_module(c, "g", *net_);
  ckpt::get_module(c, "d", *disc_);
  ckpt::get_adam(c, "opt_g", *opt_g_);
  ckpt::get_adam(c, "opt_d", *opt_d_);
  step_ = c.meta.at("rng").at("step").get<int>();
}

LoadedAnalyzer load_analyzer(const std::filesystem::path& path) {
  const ckpt::Checkpoint c = ckpt::load(path);
  if (c.kind != "analyzer") throw CheckpointError(path.string() + " is a '" + c.kind + "' checkpoint, expected 'analyzer'");
  LoadedAnalyzer a;
  try {
    a.config = AnalyzerConfig::from_json(c.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": missing analyzer config");
  }
  a.net = AnalyzerNet(a.config);
  ckpt::get_module(c, "g", *a.net);
  a.net->eval();
  for (auto& p : a.net->parameters()) p.set_requires_grad(false);
  a.weight_hash = ckpt::weight_hash(*a.net);
  return a;
}

}  // namespace umbra::analyzer
