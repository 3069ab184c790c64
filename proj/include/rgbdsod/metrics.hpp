#pragma once

#include <array>
#include <string>
#include <vector>

#include "rgbdsod/image.hpp"

namespace rgbdsod {

inline constexpr double kBetaSquared = 0.3;
inline constexpr std::size_t kThresholdBins = 256;

struct SaliencyPair {
  Image pred;  // 1 channel in [0,1]
  Image gt;    // 1 channel in {0,1}
  std::string id;

  void validate() const;
};

enum class ThresholdMode { Adaptive, Mean, Max };

/// min(1, 2 * mean(pred)).
double adaptive_threshold(const Image& pred);
/// Sweep threshold k / 256 for k in [0, 256).
inline double sweep_threshold(std::size_t k) { return static_cast<double>(k) / kThresholdBins; }
/// A pixel is foreground when pred >= t and pred > 0; an all-zero map is
/// therefore always an empty prediction.
std::vector<unsigned char> binarize(const Image& pred, double threshold);

double f_beta(double precision, double recall);

double mae(const SaliencyPair& pair);
double f_measure(const SaliencyPair& pair, ThresholdMode mode);
double e_measure(const SaliencyPair& pair, ThresholdMode mode);
double s_measure(const SaliencyPair& pair);

/// F and E of one binarized map against the mask.
double f_measure_binary(const std::vector<unsigned char>& bin, const Image& gt);
double e_measure_binary(const std::vector<unsigned char>& bin, const Image& gt);

struct ThresholdCurves {
  std::array<double, kThresholdBins> precision{};
  std::array<double, kThresholdBins> recall{};
  std::array<double, kThresholdBins> f{};
  std::array<double, kThresholdBins> e{};
};

ThresholdCurves threshold_curves(const SaliencyPair& pair);

struct ImageMetrics {
  std::string id;
  double mae = 0.0;
  double sm = 0.0;
  double adpE = 0.0, meanE = 0.0, maxE = 0.0;
  double adpF = 0.0, meanF = 0.0, maxF = 0.0;
  bool empty_gt = false;  // F-measures are 0 by convention
};

ImageMetrics evaluate_pair(const SaliencyPair& pair);

struct MetricsReport {
  std::vector<ImageMetrics> per_image;  // sorted by id
  ImageMetrics mean;                    // id "MEAN"
  ThresholdCurves curves;               // averaged over images
  std::vector<std::string> flagged;     // ids with an all-zero mask

  /// id,Sm,adpE,meanE,maxE,adpF,meanF,maxF,MAE with a trailing MEAN row.
  std::string csv() const;
  /// threshold,precision,recall,F,E
  std::string curves_csv() const;
  /// Aligned text table of the mean row.
  std::string table(const std::string& label = "model") const;
};

/// Throws ConfigError on an empty list or duplicate ids.
MetricsReport evaluate_corpus(std::vector<SaliencyPair> pairs);

/// Column header and value cells shared by the CSV and table writers.
const std::array<const char*, 8>& metric_columns();
std::array<double, 8> metric_values(const ImageMetrics& m);

}  // namespace rgbdsod
