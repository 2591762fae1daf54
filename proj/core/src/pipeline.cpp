#include "umbra/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "umbra/png_io.hpp"
#include "umbra/tensor_bridge.hpp"

namespace umbra::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void require_square(const ImageRGB& image, const char* what) {
  if (image.height() != image.width()) throw InvalidArgument(fmt::format("{}: image must be square", what));
}

void require_nonempty(const MaskGray& mask, const char* what) {
  if (count_above(mask) == 0) throw InvalidArgument(fmt::format("{}: object mask is empty", what));
}

// Removed pixels: predicted shadow plus object, grown slightly to swallow soft edges.
MaskGray removal_region(const Analysis& an, const MaskGray& object_mask) {
  const MaskGray parts[] = {binarize(an.shadow_mask), binarize(object_mask)};
  return dilate(union_max(parts, object_mask.height(), object_mask.width()), 2);
}

// Shadow-free background with the object's own pixels filled from their surroundings.
ImageRGB clean_background(const ImageRGB& image, const MaskGray& object_mask, const Analysis& an) {
  ImageRGB bg = image;
  paste_where(bg, an.shadowfree, removal_region(an, object_mask));
  return harmonic_fill(bg, dilate(object_mask, 1));
}

void check_pair(const Models& m, bool needs_features) {
  if (!m.analyzer || !m.analyzer->net) throw CheckpointError("analyzer checkpoint not loaded");
  if (!m.synth || !m.synth->model) throw CheckpointError("synthesizer checkpoint not loaded");
  if (!needs_features) return;
  const auto& sc = m.synth->config;
  const auto& ac = m.analyzer->config;
  if (sc.fms_channels != ac.fms_channels() || sc.fms_grid != ac.fms_grid)
    throw CheckpointError(fmt::format("synthesizer expects {}x{}x{} reference features, analyzer gives {}x{}x{}", sc.fms_channels,
                                      sc.fms_grid, sc.fms_grid, ac.fms_channels(), ac.fms_grid, ac.fms_grid));
  if (m.synth->analyzer_hash != 0 && m.synth->analyzer_hash != m.analyzer->weight_hash)
    throw CheckpointError("synthesizer was trained against a different analyzer");
}

struct Synthesized {
  ImageRGB image;
  MaskGray shadow;
};

// Runs the sampler at synthesizer resolution and brings the shadow back as a
// residual on the working-resolution composite.
Synthesized synthesize(synth::LoadedSynth& s, const ImageRGB& composite, const MaskGray& object_mask, const torch::Tensor& fms,
                       const EditOptions& opt) {
  torch::NoGradGuard no_grad;
  const int res = s.config.resolution;
  const int n = composite.height();
  const auto comp_s = synth::to_synth_resolution(composite, res);
  const auto mask_s = synth::to_synth_resolution(object_mask, res);
  const auto comp_t = tensor::from_raster(comp_s).unsqueeze(0);
  const auto mask_t = tensor::from_raster(mask_s).unsqueeze(0);
  torch::Tensor hint = torch::zeros_like(mask_t);
  if (opt.hint) {
    if (opt.hint->height() != n || opt.hint->width() != n) throw InvalidArgument("hint must match the image size");
    hint = tensor::from_raster(binarize(synth::to_synth_resolution(*opt.hint, res))).unsqueeze(0);
  }
  const auto candidate_s = candidate_region(mask_s);
  std::optional<torch::Tensor> keep;
  if (opt.keep_region) keep = 1.0 - tensor::from_raster(candidate_s).unsqueeze(0);
  const auto embedding = s.model->embed(fms.defined() ? fms.unsqueeze(0) : torch::Tensor(), 1);
  const auto r = synth::sample_few_step(s.model, comp_t, mask_t, hint, embedding, s.config.sampler_steps, opt.seed, keep);

  auto residual_s = tensor::to_image(r.image[0] - comp_t[0]);
  const auto residual = resize_bilinear(residual_s, n, n);
  const auto predicted = binarize(resize_bilinear(tensor::to_mask(r.mask[0]), n, n));
  const auto candidate = candidate_region(object_mask);

  Synthesized out{composite, MaskGray(n, n)};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (predicted(y, x) <= 0.5f || candidate(y, x) <= 0.5f || object_mask(y, x) > 0.5f) continue;
      out.shadow(y, x) = 1.0f;
      for (int c = 0; c < 3; ++c) out.image(y, x, c) = std::clamp(composite(y, x, c) + residual(y, x, c), 0.0f, 1.0f);
    }
  return out;
}

}  // namespace

Analysis analyze(analyzer::LoadedAnalyzer& a, const ImageRGB& image, const MaskGray& object_mask, std::uint64_t seed) {
  require_same_shape(image, object_mask, "analyze");
  if (!a.net) throw CheckpointError("analyzer checkpoint not loaded");
  torch::NoGradGuard no_grad;
  const int r = a.config.input_resolution;
  const int h = image.height(), w = image.width();
  const auto img = tensor::from_raster(image).unsqueeze(0);
  const auto img_r = tensor::resize(img, r, r);
  const auto out = a.net->forward(img_r, tensor::resize(tensor::from_raster(object_mask).unsqueeze(0), r, r),
                                  analyzer::noise(1, a.config.noise_dim, seed));
  Analysis an;
  if (h == r && w == r) {
    an.shadowfree = tensor::to_image(out.shadowfree[0]);
    an.shadow_mask = tensor::to_mask(out.shadow_mask[0]);
  } else {
    an.shadowfree = tensor::to_image((img + tensor::resize(out.shadowfree - img_r, h, w)).clamp(0, 1)[0]);
    an.shadow_mask = tensor::to_mask(tensor::resize(out.shadow_mask, h, w).clamp(0, 1)[0]);
  }
  an.fms = analyzer::extract_shadow_features(a.config, out.feats_spatial)[0].contiguous();
  return an;
}

MaskGray candidate_region(const MaskGray& object_mask) {
  return dilate(object_mask, std::max(1, static_cast<int>(std::lround(0.25 * object_mask.width()))));
}

ImageRGB harmonic_fill(const ImageRGB& image, const MaskGray& hole) {
  require_same_shape(image, hole, "harmonic_fill");
  const int h = image.height(), w = image.width();
  std::vector<std::pair<int, int>> unknown;
  double sum[3] = {0, 0, 0};
  std::size_t known = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (hole(y, x) > 0.5f) {
        unknown.emplace_back(y, x);
      } else {
        for (int c = 0; c < 3; ++c) sum[c] += image(y, x, c);
        ++known;
      }
    }
  ImageRGB out = image;
  if (unknown.empty() || known == 0) return out;
  for (auto [y, x] : unknown)
    for (int c = 0; c < 3; ++c) out(y, x, c) = static_cast<float>(sum[c] / known);

  // Successive over-relaxation on the 4-neighbour Laplacian; frame edges are Neumann.
  constexpr double omega = 1.9;
  for (int iter = 0; iter < 10000; ++iter) {
    double change = 0;
    for (auto [y, x] : unknown) {
      int cnt = 0;
      double acc[3] = {0, 0, 0};
      const auto add = [&](int yy, int xx) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return;
        for (int c = 0; c < 3; ++c) acc[c] += out(yy, xx, c);
        ++cnt;
      };
      add(y - 1, x);
      add(y + 1, x);
      add(y, x - 1);
      add(y, x + 1);
      for (int c = 0; c < 3; ++c) {
        const double old = out(y, x, c);
        const double next = old + omega * (acc[c] / cnt - old);
        out(y, x, c) = static_cast<float>(next);
        change = std::max(change, std::abs(next - old));
      }
    }
    if (change < 1e-6) break;
  }
  clamp_unit(out);
  return out;
}

MaskGray paste(ImageRGB& dst, const ImageRGB& patch, const MaskGray& patch_mask, int x, int y) {
  require_same_shape(patch, patch_mask, "paste");
  MaskGray placed(dst.height(), dst.width());
  for (int py = 0; py < patch.height(); ++py)
    for (int px = 0; px < patch.width(); ++px) {
      if (patch_mask(py, px) <= 0.5f) continue;
      const int ty = py + y, tx = px + x;
      if (ty < 0 || ty >= dst.height() || tx < 0 || tx >= dst.width())
        throw OutOfFrameError(fmt::format("object pixel ({}, {}) lands outside the frame", tx, ty));
    }
  for (int py = 0; py < patch.height(); ++py)
    for (int px = 0; px < patch.width(); ++px) {
      if (patch_mask(py, px) <= 0.5f) continue;
      const int ty = py + y, tx = px + x;
      for (int c = 0; c < 3; ++c) dst(ty, tx, c) = patch(py, px, c);
      placed(ty, tx) = 1.0f;
    }
  return placed;
}

EditResult relocate(const Models& m, const ImageRGB& image, const MaskGray& object_mask, world::Offset offset,
                    const EditOptions& opt) {
  const auto t0 = Clock::now();
  require_same_shape(image, object_mask, "relocate");
  require_square(image, "relocate");
  require_nonempty(object_mask, "relocate");
  check_pair(m, m.synth && m.synth->config.embedding == synth::EmbeddingMode::analyzer);

  EditResult r;
  r.seed = opt.seed;
  ImageRGB composite = image;  // only used to validate the target placement before any model runs
  r.new_object_mask = paste(composite, image, object_mask, offset.dx, offset.dy);

  auto t = Clock::now();
  const auto an = analyze(*m.analyzer, image, object_mask, opt.seed);
  r.timings_ms["analyze"] = ms_since(t);
  r.removed_view = clean_background(image, object_mask, an);
  composite = r.removed_view;
  paste(composite, image, object_mask, offset.dx, offset.dy);

  t = Clock::now();
  auto s = synthesize(*m.synth, composite, r.new_object_mask, an.fms, opt);
  r.timings_ms["synthesize"] = ms_since(t);
  r.final_image = std::move(s.image);
  r.new_shadow_mask = std::move(s.shadow);
  r.timings_ms["total"] = ms_since(t0);
  return r;
}

ImageRGB remove_object_and_shadow(analyzer::LoadedAnalyzer& a, const ImageRGB& image, const MaskGray& object_mask,
                                  std::uint64_t seed) {
  require_same_shape(image, object_mask, "remove_object_and_shadow");
  require_nonempty(object_mask, "remove_object_and_shadow");
  return clean_background(image, object_mask, analyze(a, image, object_mask, seed));
}

EditResult insert(const Models& m, const ImageRGB& background, const ImageRGB& patch, const MaskGray& patch_mask, int x, int y,
                  const std::optional<Reference>& reference, const EditOptions& opt) {
  const auto t0 = Clock::now();
  require_square(background, "insert");
  require_same_shape(patch, patch_mask, "insert");
  require_nonempty(patch_mask, "insert");

  EditResult r;
  r.seed = opt.seed;
  r.removed_view = background;
  ImageRGB composite = background;
  r.new_object_mask = paste(composite, patch, patch_mask, x, y);

  Models use = m;
  torch::Tensor fms;
  if (reference) {
    check_pair(m, true);
    if (m.synth->config.embedding != synth::EmbeddingMode::analyzer)
      throw CheckpointError("a reference needs a synthesizer trained on analyzer features");
    require_same_shape(reference->image, reference->object_mask, "insert reference");
    require_nonempty(reference->object_mask, "insert reference");
    const auto t = Clock::now();
    fms = analyze(*m.analyzer, reference->image, reference->object_mask, opt.seed).fms;
    r.timings_ms["analyze"] = ms_since(t);
  } else {
    if (m.baseline) use.synth = m.baseline;
    if (!use.synth || !use.synth->model) throw CheckpointError("synthesizer checkpoint not loaded");
    if (use.synth->config.embedding != synth::EmbeddingMode::learned_constant)
      throw CheckpointError("insert without a reference needs a learned-constant synthesizer");
  }

  const auto t = Clock::now();
  auto s = synthesize(*use.synth, composite, r.new_object_mask, fms, opt);
  r.timings_ms["synthesize"] = ms_since(t);
  r.final_image = std::move(s.image);
  r.new_shadow_mask = std::move(s.shadow);
  r.timings_ms["total"] = ms_since(t0);
  return r;
}

nlohmann::json EditResult::to_json() const {
  return {{"seed", seed},
          {"width", final_image.width()},
          {"height", final_image.height()},
          {"new_object_pixels", count_above(new_object_mask)},
          {"new_shadow_pixels", count_above(new_shadow_mask)},
          {"timings_ms", timings_ms},
          {"files",
           {{"final_image", "final.png"},
            {"removed_view", "removed.png"},
            {"new_object_mask", "object_mask.png"},
            {"new_shadow_mask", "shadow_mask.png"}}}};
}

void EditResult::write(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  png::write(dir / "final.png", final_image);
  png::write(dir / "removed.png", removed_view);
  png::write(dir / "object_mask.png", new_object_mask);
  png::write(dir / "shadow_mask.png", new_shadow_mask);
  std::ofstream f(dir / "result.json");
  f << to_json().dump(2) << '\n';
  if (!f) throw IoError(fmt::format("cannot write {}", (dir / "result.json").string()));
}

}  // namespace umbra::pipeline
