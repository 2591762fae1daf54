#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "umbra/analyzer_train.hpp"
#include "umbra/synth_train.hpp"
#include "umbra/world.hpp"

/// Editing workflows: analyze, relocate, remove and insert.
namespace umbra::pipeline {

/// Loaded checkpoints a workflow runs against. `baseline` is an optional
/// learned-constant synthesizer used by reference-free insertion.
struct Models {
  analyzer::LoadedAnalyzer* analyzer = nullptr;
  synth::LoadedSynth* synth = nullptr;
  synth::LoadedSynth* baseline = nullptr;
};

struct Analysis {
  ImageRGB shadowfree;
  MaskGray shadow_mask;
  torch::Tensor fms;  ///< [C_ms, g, g]
};

/// One analyzer forward with z drawn from `seed`. Inputs at another size than
/// the analyzer's are resampled; the shadow-free output comes back as a
/// residual on the original image. An all-zero mask targets every shadow.
Analysis analyze(analyzer::LoadedAnalyzer& a, const ImageRGB& image, const MaskGray& object_mask, std::uint64_t seed);

struct EditOptions {
  std::uint64_t seed = 0;
  /// Reset pixels outside the candidate shadow region to the composite at every sampler step.
  bool keep_region = true;
  /// Optional region hint at working resolution.
  std::optional<MaskGray> hint;
};

struct EditResult {
  ImageRGB final_image;
  ImageRGB removed_view;  ///< background with the object and its shadow removed
  MaskGray new_object_mask;
  MaskGray new_shadow_mask;
  std::uint64_t seed = 0;
  nlohmann::json timings_ms = nlohmann::json::object();

  nlohmann::json to_json() const;
  /// final.png, removed.png, object_mask.png, shadow_mask.png and result.json.
  void write(const std::filesystem::path& dir) const;
};

/// Object mask dilated by a quarter of the image width: where a new shadow may land.
MaskGray candidate_region(const MaskGray& object_mask);

/// Fills pixels where `hole` > 0.5 with the harmonic interpolant of the
/// surrounding known pixels.
ImageRGB harmonic_fill(const ImageRGB& image, const MaskGray& hole);

/// Copies masked pixels of `patch` into `dst` at (x, y); returns the pasted
/// mask in `dst` coordinates. Throws OutOfFrameError when the mask leaves the frame.
MaskGray paste(ImageRGB& dst, const ImageRGB& patch, const MaskGray& patch_mask, int x, int y);

EditResult relocate(const Models& m, const ImageRGB& image, const MaskGray& object_mask, world::Offset offset,
                    const EditOptions& opt = {});

ImageRGB remove_object_and_shadow(analyzer::LoadedAnalyzer& a, const ImageRGB& image, const MaskGray& object_mask,
                                  std::uint64_t seed);

struct Reference {
  ImageRGB image;
  MaskGray object_mask;
};

EditResult insert(const Models& m, const ImageRGB& background, const ImageRGB& patch, const MaskGray& patch_mask, int x, int y,
                  const std::optional<Reference>& reference, const EditOptions& opt = {});

}  // namespace umbra::pipeline
