#include "umbra/metrics.hpp"

#include <cmath>
#include <sstream>

namespace umbra::metrics {
namespace {

constexpr double kWhite[3] = {0.95047, 1.0, 1.08883};

double to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double to_gamma(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055; }

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}
double lab_f_inv(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d ? t * t * t : 3.0 * d * d * (t - 4.0 / 29.0);
}

void require_mask(const MaskGray& mask) {
  if (count_above(mask) == 0) throw InvalidArgument("metric undefined for an empty mask");
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::array<double, 3> srgb_to_lab(std::array<double, 3> rgb) {
  const double r = to_linear(rgb[0]), g = to_linear(rgb[1]), b = to_linear(rgb[2]);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  const double fx = lab_f(x / kWhite[0]), fy = lab_f(y / kWhite[1]), fz = lab_f(z / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<double, 3> lab_to_srgb(std::array<double, 3> lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const double x = kWhite[0] * lab_f_inv(fx), y = kWhite[1] * lab_f_inv(fy), z = kWhite[2] * lab_f_inv(fz);
  const double r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
  const double g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
  const double b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
  return {to_gamma(r), to_gamma(g), to_gamma(b)};
}

LabImage rgb_to_lab(const ImageRGB& image) {
  LabImage out{image.height(), image.width(), std::vector<double>(image.values().size())};
  const auto src = image.values();
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    const auto lab = srgb_to_lab({src[p * 3], src[p * 3 + 1], src[p * 3 + 2]});
    std::copy(lab.begin(), lab.end(), out.data.begin() + static_cast<std::ptrdiff_t>(p * 3));
  }
  return out;
}

double iou(const MaskGray& pred, const MaskGray& gt, float threshold) {
  require_same_shape(pred, gt, "iou");
  std::size_t inter = 0, uni = 0;
  const auto a = pred.values(), b = gt.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] > threshold, pb = b[i] > threshold;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

const char* bucket_name(SizeBucket b) {
  switch (b) {
    case SizeBucket::xs: return "xs";
    case SizeBucket::s: return "s";
    case SizeBucket::m: return "m";
    case SizeBucket::l: return "l";
  }
  return "?";
}

std::optional<SizeBucket> size_bucket(const MaskGray& gt, int native_resolution) {
  const std::size_t count = count_above(gt);
  if (count == 0) return std::nullopt;
  const double scale = static_cast<double>(native_resolution) * native_resolution / (static_cast<double>(gt.height()) * gt.width());
  const double area = static_cast<double>(count) * scale;
  if (area < 16.0 * 16.0) return SizeBucket::xs;
  if (area < 32.0 * 32.0) return SizeBucket::s;
  if (area < 96.0 * 96.0) return SizeBucket::m;
  return SizeBucket::l;
}

double masked_mae(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask) {
  require_same_shape(pred, gt, "masked_mae");
  require_same_shape(pred, mask, "masked_mae");
  require_mask(mask);
  const auto a = pred.values(), b = gt.values(), m = mask.values();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < m.size(); ++p) {
    if (m[p] <= 0.5f) continue;
    for (int c = 0; c < 3; ++c) sum += std::abs(255.0 * (static_cast<double>(a[p * 3 + c]) - b[p * 3 + c]));
    n += 3;
  }
  return sum / static_cast<double>(n);
}

double masked_rmse_lab(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask) {
  require_same_shape(pred, gt, "masked_rmse_lab");
  require_same_shape(pred, mask, "masked_rmse_lab");
  require_mask(mask);
  const auto a = pred.values(), b = gt.values(), m = mask.values();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < m.size(); ++p) {
    if (m[p] <= 0.5f) continue;
    const auto la = srgb_to_lab({a[p * 3], a[p * 3 + 1], a[p * 3 + 2]});
    const auto lb = srgb_to_lab({b[p * 3], b[p * 3 + 1], b[p * 3 + 2]});
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) d2 += (la[c] - lb[c]) * (la[c] - lb[c]);
    sum += d2;
    ++n;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

std::optional<Box> mask_bbox(const MaskGray& mask, int pad) {
  Box b{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(y, x) > 0.5f) {
        b.x0 = std::min(b.x0, x), b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x), b.y1 = std::max(b.y1, y);
      }
  if (b.x1 < 0) return std::nullopt;
  return Box{std::max(0, b.x0 - pad), std::max(0, b.y0 - pad), std::min(mask.width(), b.x1 + 1 + pad),
             std::min(mask.height(), b.y1 + 1 + pad)};
}

double psnr_from_mse(double mse) {
  if (mse < 255.0 * 255.0 * std::pow(10.0, -9.9)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace {
double mse_region(const ImageRGB& a, const ImageRGB& b, const Box& box) {
  double sum = 0.0;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = 255.0 * (static_cast<double>(a(y, x, c)) - b(y, x, c));
        sum += d * d;
      }
  return sum / (3.0 * (box.x1 - box.x0) * (box.y1 - box.y0));
}
}  // namespace

double psnr(const ImageRGB& pred, const ImageRGB& gt) {
  require_same_shape(pred, gt, "psnr");
  return psnr_from_mse(mse_region(pred, gt, {0, 0, pred.width(), pred.height()}));
}

double bbox_psnr(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask) {
  require_same_shape(pred, gt, "bbox_psnr");
  require_same_shape(pred, mask, "bbox_psnr");
  const auto box = mask_bbox(mask);
  if (!box) throw InvalidArgument("bbox_psnr: empty mask");
  return psnr_from_mse(mse_region(pred, gt, *box));
}

double ssim_region(const ImageRGB& a, const ImageRGB& b, const Box& box) {
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  std::array<double, 2 * kRadius + 1> g{};
  for (int i = -kRadius; i <= kRadius; ++i) g[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));

  const int w = box.x1 - box.x0, h = box.y1 - box.y0;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  // Five moment planes per channel, filtered separably with a renormalized window.
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::array<std::vector<double>, 5> planes;
    for (auto& p : planes) p.assign(n, 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double va = 255.0 * a(box.y0 + y, box.x0 + x, c), vb = 255.0 * b(box.y0 + y, box.x0 + x, c);
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        planes[0][i] = va, planes[1][i] = vb, planes[2][i] = va * va, planes[3][i] = vb * vb, planes[4][i] = va * vb;
      }
    auto filter = [&](std::vector<double>& p) {
      std::vector<double> tmp(n);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0, norm = 0.0;
          for (int k = std::max(-kRadius, -x); k <= std::min(kRadius, w - 1 - x); ++k) {
            acc += g[k + kRadius] * p[static_cast<std::size_t>(y) * w + x + k];
            norm += g[k + kRadius];
          }
          tmp[static_cast<std::size_t>(y) * w + x] = acc / norm;
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0, norm = 0.0;
          for (int k = std::max(-kRadius, -y); k <= std::min(kRadius, h - 1 - y); ++k) {
            acc += g[k + kRadius] * tmp[static_cast<std::size_t>(y + k) * w + x];
            norm += g[k + kRadius];
          }
          p[static_cast<std::size_t>(y) * w + x] = acc / norm;
        }
    };
    for (auto& p : planes) filter(p);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ma = planes[0][i], mb = planes[1][i];
      const double va = planes[2][i] - ma * ma, vb = planes[3][i] - mb * mb, cov = planes[4][i] - ma * mb;
      sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += sum / static_cast<double>(n);
  }
  return total / 3.0;
}

double bbox_ssim(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask) {
  require_same_shape(pred, gt, "bbox_ssim");
  require_same_shape(pred, mask, "bbox_ssim");
  const auto box = mask_bbox(mask);
  if (!box) throw InvalidArgument("bbox_ssim: empty mask");
  return ssim_region(pred, gt, *box);
}

double global_rmse(const ImageRGB& pred, const ImageRGB& gt) {
  require_same_shape(pred, gt, "global_rmse");
  return std::sqrt(mse_region(pred, gt, {0, 0, pred.width(), pred.height()}));
}

double local_rmse(const ImageRGB& pred, const ImageRGB& gt, const MaskGray& mask) {
  require_same_shape(pred, gt, "local_rmse");
  require_same_shape(pred, mask, "local_rmse");
  require_mask(mask);
  const auto a = pred.values(), b = gt.values(), m = mask.values();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < m.size(); ++p) {
    if (m[p] <= 0.5f) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = 255.0 * (static_cast<double>(a[p * 3 + c]) - b[p * 3 + c]);
      sum += d * d;
    }
    n += 3;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

const char* task_name(Task t) {
  switch (t) {
    case Task::detection: return "detection";
    case Task::removal: return "removal";
    case Task::synthesis: return "synthesis";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "detection") return Task::detection;
  if (name == "removal") return Task::removal;
  if (name == "synthesis") return Task::synthesis;
  throw InvalidArgument("unknown task '" + name + "'");
}

MetricReport evaluate(Task task, const std::vector<EvalCase>& cases, int native_resolution) {
  MetricReport report;
  report.task = task;
  std::map<std::string, std::vector<double>> columns;
  for (const char* b : {"xs", "s", "m", "l", "empty"}) report.bucket_counts[b] = 0;
  for (const auto& c : cases) {
    SampleRecord rec;
    rec.id = c.id;
    const bool has_region = count_above(c.gt_mask) > 0;
    if (task == Task::detection) {
      rec.values["iou"] = iou(c.pred_mask, c.gt_mask);
      const auto bucket = size_bucket(c.gt_mask, native_resolution);
      if (bucket) {
        rec.bucket = bucket_name(*bucket);
        columns[std::string("miou_") + *rec.bucket].push_back(rec.values["iou"]);
      }
      ++report.bucket_counts[rec.bucket.value_or("empty")];
    } else {
      if (!has_region) ++report.bucket_counts["empty"];
      if (task == Task::removal) {
        rec.values["psnr"] = psnr(c.pred_image, c.gt_image);
        if (has_region) {
          rec.values["masked_mae"] = masked_mae(c.pred_image, c.gt_image, c.gt_mask);
          rec.values["masked_rmse_lab"] = masked_rmse_lab(c.pred_image, c.gt_image, c.gt_mask);
        }
      } else {
        rec.values["global_rmse"] = global_rmse(c.pred_image, c.gt_image);
        if (has_region) rec.values["local_rmse"] = local_rmse(c.pred_image, c.gt_image, c.gt_mask);
      }
      if (has_region) {
        rec.values["bbox_psnr"] = bbox_psnr(c.pred_image, c.gt_image, c.gt_mask);
        rec.values["bbox_ssim"] = bbox_ssim(c.pred_image, c.gt_image, c.gt_mask);
      }
    }
    for (const auto& [k, v] : rec.values) columns[k == "iou" ? "miou" : k].push_back(v);
    report.samples.push_back(std::move(rec));
  }
  for (const auto& [k, v] : columns)
    if (!v.empty()) report.aggregates[k] = mean_of(v);
  return report;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json samples_json = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json j = {{"id", s.id}, {"values", s.values}};
    j["bucket"] = s.bucket ? nlohmann::json(*s.bucket) : nlohmann::json(nullptr);
    samples_json.push_back(j);
  }
  return {{"task", task_name(task)},
          {"count", samples.size()},
          {"aggregates", aggregates},
          {"bucket_counts", bucket_counts},
          {"samples", samples_json}};
}

std::string MetricReport::to_csv() const {
  std::vector<std::string> keys;
  for (const auto& s : samples)
    for (const auto& [k, v] : s.values)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  std::ostringstream out;
  out.precision(17);
  out << "id,bucket";
  for (const auto& k : keys) out << ',' << k;
  out << '\n';
  for (const auto& s : samples) {
    out << s.id << ',' << s.bucket.value_or("");
    for (const auto& k : keys) {
      out << ',';
      if (auto it = s.values.find(k); it != s.values.end()) out << it->second;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace umbra::metrics
