#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rgbdsod/metrics.hpp"
#include "support/reference_metrics.hpp"
#include "support/samples.hpp"

using namespace rgbdsod;

namespace {

Image map_of(std::size_t h, std::size_t w, std::vector<float> v) {
  Image m(1, h, w);
  m.data = std::move(v);
  return m;
}

SaliencyPair pair_of(Image pred, Image gt, std::string id = "p") { return {std::move(pred), std::move(gt), std::move(id)}; }

refm::Map ref_of(const Image& m) { return {m.height, m.width, std::vector<double>(m.data.begin(), m.data.end())}; }

SaliencyPair random_pair(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  const RgbdSample s = testing_util::random_sample(rng, h, w);
  return pair_of(testing_util::random_map(rng, h, w), s.gt);
}

// Predictions at PNG precision, as read back by the evaluator.
SaliencyPair random_pair_8bit(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  SaliencyPair p = random_pair(rng, h, w);
  for (float& v : p.pred.data) v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  return p;
}

}  // namespace

TEST(MetricsTest, MaeExample) {
  const SaliencyPair p = pair_of(map_of(2, 2, {0.2f, 0.8f, 0.6f, 0.0f}), map_of(2, 2, {0, 1, 1, 0}));
  EXPECT_NEAR(mae(p), (0.2 + 0.2 + 0.4 + 0.0) / 4, 1e-7);
}

TEST(MetricsTest, FBetaAtEqualPrecisionRecall) {
  EXPECT_DOUBLE_EQ(f_beta(0.5, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(f_beta(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(f_beta(1.0, 1.0), 1.0);
}

TEST(MetricsTest, AllZeroPredictionScoresZeroF) {
  const SaliencyPair p = pair_of(Image(1, 4, 4, 0.0f), map_of(4, 4, std::vector<float>(16, 0)));
  SaliencyPair q = p;
  q.gt.data[5] = 1.0f;
  EXPECT_EQ(f_measure(q, ThresholdMode::Adaptive), 0.0);
  EXPECT_EQ(f_measure(q, ThresholdMode::Max), 0.0);
  for (unsigned char b : binarize(q.pred, 0.0)) EXPECT_EQ(b, 0);
}

TEST(MetricsTest, PerfectPrediction) {
  const Image gt = map_of(2, 3, {1, 0, 0, 1, 1, 0});
  const SaliencyPair p = pair_of(gt, gt);
  const ImageMetrics m = evaluate_pair(p);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_NEAR(m.adpF, 1.0, 1e-12);
  EXPECT_NEAR(m.maxF, 1.0, 1e-12);
  EXPECT_NEAR(m.maxE, 1.0, 1e-6);
  EXPECT_NEAR(m.adpE, 1.0, 1e-6);
  EXPECT_NEAR(m.sm, 1.0, 1e-6);
}

TEST(MetricsTest, DegenerateMasks) {
  const Image pred = map_of(1, 4, {0.0f, 0.25f, 0.5f, 1.0f});
  const SaliencyPair empty = pair_of(pred, Image(1, 1, 4, 0.0f));
  const SaliencyPair full = pair_of(pred, Image(1, 1, 4, 1.0f));
  EXPECT_NEAR(s_measure(empty), 1.0 - 0.4375, 1e-12);
  EXPECT_NEAR(s_measure(full), 0.4375, 1e-12);
  // Adaptive threshold is 0.875: only the last pixel is foreground.
  EXPECT_NEAR(e_measure(empty, ThresholdMode::Adaptive), 0.75, 1e-12);
  EXPECT_NEAR(e_measure(full, ThresholdMode::Adaptive), 0.25, 1e-12);
  const ImageMetrics m = evaluate_pair(empty);
  EXPECT_TRUE(m.empty_gt);
  EXPECT_EQ(m.maxF, 0.0);
  EXPECT_EQ(m.adpF, 0.0);
}

TEST(MetricsTest, ConstantHalfOnHalfForeground) {
  Image gt(1, 4, 4, 0.0f);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 2; ++x) gt.at(0, y, x) = 1.0f;
  const SaliencyPair p = pair_of(Image(1, 4, 4, 0.5f), gt);
  EXPECT_DOUBLE_EQ(mae(p), 0.5);
  // Threshold 1.0 leaves nothing; everything at or below 0.5 selects all.
  EXPECT_EQ(f_measure(p, ThresholdMode::Adaptive), 0.0);
  EXPECT_NEAR(f_measure(p, ThresholdMode::Max), 1.3 * 0.5 / (0.3 * 0.5 + 1.0), 1e-12);
  EXPECT_NEAR(s_measure(p), refm::smeasure(ref_of(p.pred), ref_of(gt)), 1e-12);
  EXPECT_GT(s_measure(p), 0.0);
  EXPECT_LT(s_measure(p), 1.0);
}

TEST(MetricsTest, AdaptiveThresholdClamps) {
  EXPECT_NEAR(adaptive_threshold(map_of(1, 2, {0.1f, 0.3f})), 0.4, 1e-7);
  EXPECT_DOUBLE_EQ(adaptive_threshold(map_of(1, 2, {0.9f, 0.7f})), 1.0);
}

TEST(MetricsOracleTest, AgreesWithReferenceOnRandomPairs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    SCOPED_TRACE("trial " + std::to_string(trial));
    const SaliencyPair p = trial % 2 ? random_pair(rng, 8, 8) : random_pair_8bit(rng, 8, 8);
    const refm::Map rp = ref_of(p.pred), rg = ref_of(p.gt);
    EXPECT_NEAR(mae(p), refm::mae(rp, rg), 1e-6);
    EXPECT_NEAR(f_measure(p, ThresholdMode::Adaptive), refm::f_adaptive(rp, rg), 1e-6);
    EXPECT_NEAR(f_measure(p, ThresholdMode::Mean), refm::f_mean(rp, rg), 1e-6);
    EXPECT_NEAR(f_measure(p, ThresholdMode::Max), refm::f_max(rp, rg), 1e-6);
    EXPECT_NEAR(e_measure(p, ThresholdMode::Adaptive), refm::e_adaptive(rp, rg), 1e-6);
    EXPECT_NEAR(e_measure(p, ThresholdMode::Mean), refm::e_mean(rp, rg), 1e-6);
    EXPECT_NEAR(e_measure(p, ThresholdMode::Max), refm::e_max(rp, rg), 1e-6);
    EXPECT_NEAR(s_measure(p), refm::smeasure(rp, rg), 1e-6);
  }
}

TEST(MetricsOracleTest, MaxFAgreesWithFineSweep) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const SaliencyPair p = random_pair_8bit(rng, 8, 8);
    EXPECT_NEAR(f_measure(p, ThresholdMode::Max), refm::f_max(ref_of(p.pred), ref_of(p.gt), 1024), 0.005)
        << "trial " << trial;
  }
}

TEST(MetricsPropertyTest, RecallFallsAsThresholdRises) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const ThresholdCurves c = threshold_curves(random_pair(rng, 8, 8));
    for (std::size_t k = 1; k < kThresholdBins; ++k) EXPECT_LE(c.recall[k], c.recall[k - 1]);
  }
}

TEST(MetricsPropertyTest, MaxFBoundsEveryThreshold) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const SaliencyPair p = random_pair(rng, 8, 8);
    const double mx = f_measure(p, ThresholdMode::Max);
    for (std::size_t k = 0; k < kThresholdBins; ++k)
      EXPECT_LE(f_measure_binary(binarize(p.pred, sweep_threshold(k)), p.gt), mx + 1e-12);
    EXPECT_LE(f_measure(p, ThresholdMode::Mean), mx + 1e-12);
    EXPECT_LE(f_measure(p, ThresholdMode::Adaptive), mx + 1e-12);
  }
}

TEST(MetricsPropertyTest, PixelPermutationInvariance) {
  std::mt19937_64 rng(7);
  bool s_changed = false, e_changed = false;
  for (int trial = 0; trial < 20; ++trial) {
    const SaliencyPair p = random_pair(rng, 8, 8);
    std::vector<std::size_t> perm(64);
    for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    SaliencyPair q = p;
    for (std::size_t i = 0; i < 64; ++i) {
      q.pred.data[i] = p.pred.data[perm[i]];
      q.gt.data[i] = p.gt.data[perm[i]];
    }
    EXPECT_NEAR(mae(p), mae(q), 1e-7);
    EXPECT_NEAR(f_measure(p, ThresholdMode::Max), f_measure(q, ThresholdMode::Max), 1e-12);
    EXPECT_NEAR(f_measure(p, ThresholdMode::Adaptive), f_measure(q, ThresholdMode::Adaptive), 1e-12);
    EXPECT_NEAR(e_measure(p, ThresholdMode::Max), e_measure(q, ThresholdMode::Max), 1e-9);
    s_changed |= std::abs(s_measure(p) - s_measure(q)) > 1e-6;
    // Permuting only the prediction breaks alignment.
    SaliencyPair r = p;
    std::shuffle(r.pred.data.begin(), r.pred.data.end(), rng);
    e_changed |= std::abs(e_measure(p, ThresholdMode::Adaptive) - e_measure(r, ThresholdMode::Adaptive)) > 1e-6;
  }
  EXPECT_TRUE(s_changed);
  EXPECT_TRUE(e_changed);
}

TEST(MetricsPropertyTest, MaeIsComplementSymmetric) {
  std::mt19937_64 rng(8);
  const SaliencyPair p = random_pair(rng, 5, 7);
  SaliencyPair q = p;
  for (float& v : q.pred.data) v = 1.0f - v;
  for (float& v : q.gt.data) v = 1.0f - v;
  EXPECT_NEAR(mae(p), mae(q), 1e-7);
}

TEST(MetricsPropertyTest, ScoresAreBounded) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const ImageMetrics m = evaluate_pair(random_pair(rng, 1 + rng() % 9, 1 + rng() % 9));
    for (double v : metric_values(m)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(MetricsReportTest, CsvAndMeans) {
  std::mt19937_64 rng(10);
  std::vector<SaliencyPair> pairs;
  for (const char* id : {"b", "a", "c"}) {
    SaliencyPair p = random_pair(rng, 6, 6);
    p.id = id;
    pairs.push_back(p);
  }
  pairs.push_back(pair_of(Image(1, 6, 6, 0.2f), Image(1, 6, 6, 0.0f), "z_empty"));
  const MetricsReport r = evaluate_corpus(pairs);
  ASSERT_EQ(r.per_image.size(), 4u);
  EXPECT_EQ(r.per_image[0].id, "a");
  EXPECT_EQ(r.per_image[2].id, "c");
  EXPECT_EQ(r.flagged, (std::vector<std::string>{"z_empty"}));
  EXPECT_EQ(r.mean.id, "MEAN");
  double mae_sum = 0.0;
  for (const ImageMetrics& m : r.per_image) mae_sum += m.mae;
  EXPECT_NEAR(r.mean.mae, mae_sum / 4, 1e-12);

  const std::string csv = r.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,Sm,adpE,meanE,maxE,adpF,meanF,maxF,MAE");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(csv.find("\nMEAN,"), std::string::npos);
  const std::string curves = r.curves_csv();
  EXPECT_EQ(curves.substr(0, curves.find('\n')), "threshold,precision,recall,F,E");
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 257);
  EXPECT_NE(r.table("tri").find("tri"), std::string::npos);
}

TEST(MetricsReportTest, BadInputs) {
  EXPECT_THROW(evaluate_corpus({}), ConfigError);
  const SaliencyPair p = pair_of(Image(1, 2, 2, 0.5f), Image(1, 2, 2, 1.0f), "x");
  EXPECT_THROW(evaluate_corpus({p, p}), ConfigError);
  EXPECT_THROW(mae(pair_of(Image(1, 2, 2), Image(1, 2, 3))), DimensionError);
  EXPECT_THROW(mae(pair_of(Image(1, 2, 2, 0.5f), Image(1, 2, 2, 0.5f))), ConfigError);
}
