#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umbra/raster.hpp"

namespace umbra::metrics {

/// H x W x 3 CIELAB values (L in [0, 100]); stored as doubles.
struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  double operator()(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

std::array<double, 3> srgb_to_lab(std::array<double, 3> rgb);
std::array<double, 3> lab_to_srgb(std::array<double, 3> lab);
LabImage rgb_to_lab(const ImageRGB& image);

/// Intersection over union of masks binarized at `threshold`; 1 when both are empty.
double iou(const MaskGray& pred, const MaskGray& gt, float threshold = 0.5f);

enum class SizeBucket { xs, s, m, l };
const char* bucket_name(SizeBucket b);
/// COCO-style size class of the mask area rescaled to a 512-pixel frame, with an
/// extra-small class below 16^2. Empty masks have no bucket.
std::optional<SizeBucket> size_bucket(const MaskGray& gt, int native_resolution = 512);

/// Mean absolute error on the 0-255 scale over pixels with mask > 0.5.
/// Throws InvalidArgument for an empty mask.
double masked_mae(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask);
/// Root mean squared per-pixel CIELAB distance over pixels with mask > 0.5.
double masked_rmse_lab(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask);

struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  ///< half-open [x0, x1) x [y0, y1)
};
/// Tight box of mask > 0.5 padded by `pad` and clamped to the frame.
std::optional<Box> mask_bbox(const MaskGray& mask, int pad = 4);

inline constexpr double kPsnrCap = 99.0;
/// 10 log10(255^2 / mse), capped at 99 dB.
double psnr_from_mse(double mse);
double psnr(const ImageRGB& pred, const ImageRGB& gt);
double bbox_psnr(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask);
/// Mean SSIM map (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, range 255)
/// over the padded mask box; the window is truncated and renormalized at the box edge.
double bbox_ssim(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask);
double ssim_region(const ImageRGB& a, const ImageRGB& b, const Box& box);

double global_rmse(const ImageRGB& pred, const ImageRGB& gt);
double local_rmse(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask);

enum class Task { detection, removal, synthesis };
const char* task_name(Task t);
Task parse_task(const std::string& name);

/// One evaluated prediction. Detection reads the masks, removal and synthesis
/// read the images; gt_mask is always the ground-truth shadow region.
struct EvalCase {
  std::string id;
  ImageRGB pred_image;
  MaskGray pred_mask;
  ImageRGB gt_image;
  MaskGray gt_mask;
};

struct SampleRecord {
  std::string id;
  std::optional<std::string> bucket;
  std::map<std::string, double> values;
};

struct MetricReport {
  Task task = Task::detection;
  std::vector<SampleRecord> samples;
  std::map<std::string, double> aggregates;
  std::map<std::string, int> bucket_counts;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

MetricReport evaluate(Task task, const std::vector<EvalCase>& cases, int native_resolution = 512);

}  // namespace umbra::metrics
