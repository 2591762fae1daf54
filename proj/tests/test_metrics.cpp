#include <gtest/gtest.h>

#include "oracles/metric_reference.hpp"
#include "umbra/metrics.hpp"
#include "umbra/rng.hpp"

using namespace umbra;

namespace {

ImageRGB random_image(Rng& rng, int h, int w) {
  ImageRGB img(h, w);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

MaskGray random_blob(Rng& rng, int h, int w) {
  MaskGray m(h, w);
  const int x0 = static_cast<int>(rng.uniform_int(0, w - 4)), y0 = static_cast<int>(rng.uniform_int(0, h - 4));
  const int x1 = static_cast<int>(rng.uniform_int(x0 + 1, w)), y1 = static_cast<int>(rng.uniform_int(y0 + 1, h));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = rng.bernoulli(0.8) ? 1.0f : 0.0f;
  m(y0, x0) = 1.0f;
  return m;
}

MaskGray box_mask(int h, int w, int x0, int y0, int x1, int y1) {
  MaskGray m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = 1.0f;
  return m;
}

}  // namespace

TEST(Metrics, AgreeWithReferenceOnRandomCases) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const ImageRGB a = random_image(rng, 32, 32), b = random_image(rng, 32, 32);
    const MaskGray m = random_blob(rng, 32, 32), p = random_blob(rng, 32, 32);
    EXPECT_NEAR(metrics::iou(p, m), oracle::iou(p, m), 1e-6);
    EXPECT_NEAR(metrics::masked_mae(a, b, m), oracle::masked_mae(a, b, m), 1e-6);
    EXPECT_NEAR(metrics::masked_rmse_lab(a, b, m), oracle::masked_rmse_lab(a, b, m), 1e-6);
    EXPECT_NEAR(metrics::psnr(a, b), oracle::psnr(a, b), 1e-6);
    EXPECT_NEAR(metrics::bbox_psnr(a, b, m), oracle::bbox_psnr(a, b, m), 1e-6);
    EXPECT_NEAR(metrics::bbox_ssim(a, b, m), oracle::bbox_ssim(a, b, m), 1e-6);
    EXPECT_NEAR(metrics::global_rmse(a, b), oracle::global_rmse(a, b), 1e-6);
    EXPECT_NEAR(metrics::local_rmse(a, b, m), oracle::local_rmse(a, b, m), 1e-6);
    const auto box = metrics::mask_bbox(m);
    const auto ref = oracle::bbox(m);
    ASSERT_TRUE(box && ref);
    EXPECT_EQ(box->x0, ref->x0);
    EXPECT_EQ(box->y0, ref->y0);
    EXPECT_EQ(box->x1, ref->x1);
    EXPECT_EQ(box->y1, ref->y1);
  }
}

TEST(Lab, KnownColours) {
  const auto white = metrics::srgb_to_lab({1, 1, 1});
  EXPECT_NEAR(white[0], 100.0, 1e-3);
  EXPECT_NEAR(white[1], 0.0, 1e-3);
  EXPECT_NEAR(white[2], 0.0, 1e-3);
  const auto black = metrics::srgb_to_lab({0, 0, 0});
  for (double v : black) EXPECT_NEAR(v, 0.0, 1e-9);
  const auto gray = metrics::srgb_to_lab({0.5, 0.5, 0.5});
  EXPECT_NEAR(gray[0], 53.389, 1e-3);
  EXPECT_NEAR(gray[1], 0.0, 1e-3);
}

TEST(Lab, RoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::array<double, 3> rgb{rng.uniform(), rng.uniform(), rng.uniform()};
    const auto back = metrics::lab_to_srgb(metrics::srgb_to_lab(rgb));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(back[c], rgb[c], 1e-4);
  }
}

TEST(Iou, HandWorkedCases) {
  const MaskGray p = box_mask(8, 8, 0, 0, 4, 2), g = box_mask(8, 8, 2, 0, 6, 2);
  EXPECT_NEAR(metrics::iou(p, g), 4.0 / 12.0, 1e-12);
  const MaskGray empty(8, 8);
  EXPECT_EQ(metrics::iou(empty, empty), 1.0);
  EXPECT_EQ(metrics::iou(p, empty), 0.0);
}

TEST(SizeBucket, Boundaries) {
  EXPECT_FALSE(metrics::size_bucket(MaskGray(64, 64), 64).has_value());
  EXPECT_EQ(metrics::size_bucket(box_mask(64, 64, 0, 0, 15, 16), 64), metrics::SizeBucket::xs);
  EXPECT_EQ(metrics::size_bucket(box_mask(64, 64, 0, 0, 16, 16), 64), metrics::SizeBucket::s);
  EXPECT_EQ(metrics::size_bucket(box_mask(64, 64, 0, 0, 32, 32), 64), metrics::SizeBucket::m);
  // Area is rescaled to the native frame: 2x2 at 64 px is 16x16 at 512 px.
  EXPECT_EQ(metrics::size_bucket(box_mask(64, 64, 0, 0, 2, 2), 512), metrics::SizeBucket::s);
  EXPECT_EQ(metrics::size_bucket(box_mask(64, 64, 0, 0, 12, 12), 512), metrics::SizeBucket::l);
}

TEST(Metrics, ConstantOffsetValues) {
  ImageRGB gt(16, 16, 0.5f), pred(16, 16, 0.5f);
  const MaskGray m = box_mask(16, 16, 4, 4, 10, 10);
  for (int y = 4; y < 10; ++y)
    for (int x = 4; x < 10; ++x)
      for (int c = 0; c < 3; ++c) pred(y, x, c) = 0.5f + 10.0f / 255.0f;
  EXPECT_NEAR(metrics::masked_mae(pred, gt, m), 10.0, 1e-4);

  ImageRGB one_level(16, 16, 0.5f);
  for (float& v : one_level.values()) v += 1.0f / 255.0f;
  EXPECT_NEAR(metrics::psnr(one_level, gt), 48.131, 1e-3);
  EXPECT_EQ(metrics::psnr(gt, gt), metrics::kPsnrCap);
}

TEST(Metrics, CheckerboardLocalRmse) {
  ImageRGB gt(32, 32, 0.5f), pred(32, 32, 0.5f);
  const MaskGray m = box_mask(32, 32, 8, 8, 24, 24);
  for (int y = 8; y < 24; ++y)
    for (int x = 8; x < 24; ++x)
      for (int c = 0; c < 3; ++c) pred(y, x, c) = 0.5f + ((x + y) % 2 ? 20.0f : -20.0f) / 255.0f;
  EXPECT_NEAR(metrics::local_rmse(pred, gt, m), 20.0, 1e-3);
  EXPECT_LE(metrics::global_rmse(pred, gt), metrics::local_rmse(pred, gt, m));
  EXPECT_NEAR(metrics::global_rmse(pred, gt), 10.0, 1e-3);
}

TEST(Metrics, EmptyMaskRejected) {
  const ImageRGB a(8, 8);
  const MaskGray m(8, 8);
  EXPECT_THROW(metrics::masked_mae(a, a, m), InvalidArgument);
  EXPECT_THROW(metrics::local_rmse(a, a, m), InvalidArgument);
}

TEST(Evaluate, GroundTruthAsPredictionIsPerfect) {
  Rng rng(9);
  std::vector<metrics::EvalCase> cases;
  for (int i = 0; i < 5; ++i) {
    metrics::EvalCase c;
    c.id = "c" + std::to_string(i);
    c.gt_image = random_image(rng, 32, 32);
    c.pred_image = c.gt_image;
    c.gt_mask = random_blob(rng, 32, 32);
    c.pred_mask = c.gt_mask;
    cases.push_back(c);
  }
  const auto det = metrics::evaluate(metrics::Task::detection, cases, 32);
  EXPECT_EQ(det.aggregates.at("miou"), 1.0);
  const auto rem = metrics::evaluate(metrics::Task::removal, cases);
  EXPECT_EQ(rem.aggregates.at("psnr"), metrics::kPsnrCap);
  EXPECT_EQ(rem.aggregates.at("masked_mae"), 0.0);
  EXPECT_NEAR(rem.aggregates.at("bbox_ssim"), 1.0, 1e-9);
  const auto syn = metrics::evaluate(metrics::Task::synthesis, cases);
  EXPECT_EQ(syn.aggregates.at("local_rmse"), 0.0);
  EXPECT_EQ(syn.aggregates.at("global_rmse"), 0.0);
}

TEST(Evaluate, AggregateIsMeanOfSamples) {
  Rng rng(10);
  std::vector<metrics::EvalCase> cases;
  for (int i = 0; i < 7; ++i) {
    metrics::EvalCase c;
    c.id = std::to_string(i);
    c.gt_image = random_image(rng, 24, 24);
    c.pred_image = random_image(rng, 24, 24);
    c.gt_mask = random_blob(rng, 24, 24);
    c.pred_mask = random_blob(rng, 24, 24);
    cases.push_back(c);
  }
  cases.push_back({"empty", cases[0].pred_image, MaskGray(24, 24), cases[0].gt_image, MaskGray(24, 24)});
  for (auto task : {metrics::Task::detection, metrics::Task::removal, metrics::Task::synthesis}) {
    const auto r = metrics::evaluate(task, cases);
    for (const auto& [key, value] : r.aggregates) {
      if (key.starts_with("miou_")) continue;
      const std::string sample_key = key == "miou" ? "iou" : key;
      double sum = 0;
      int n = 0;
      for (const auto& s : r.samples)
        if (s.values.contains(sample_key)) {
          sum += s.values.at(sample_key);
          ++n;
        }
      EXPECT_NEAR(value, sum / n, 1e-12) << key;
    }
    EXPECT_EQ(r.bucket_counts.at("empty"), 1);
    const auto j = r.to_json();
    EXPECT_EQ(j.at("task"), metrics::task_name(task));
    EXPECT_EQ(j.at("samples").size(), cases.size());
    EXPECT_FALSE(r.to_csv().empty());
  }
  EXPECT_THROW(metrics::parse_task("segmentation"), InvalidArgument);
  EXPECT_EQ(metrics::parse_task("removal"), metrics::Task::removal);
}
