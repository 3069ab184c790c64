#include "rgbdsod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rgbdsod/text_util.hpp"

namespace rgbdsod {

namespace {

constexpr double kAlignEps = 1e-8;
constexpr double kEps = std::numeric_limits<double>::epsilon();

double mean_of(const Image& im) {
  double s = 0.0;
  for (float v : im.data) s += v;
  return s / static_cast<double>(im.data.size());
}

}  // namespace

void SaliencyPair::validate() const {
  if (pred.channels != 1 || gt.channels != 1) throw DimensionError(id + ": prediction and mask must be 1-channel");
  if (!pred.same_size(gt)) throw DimensionError(id + ": prediction and mask sizes differ");
  if (pred.empty()) throw DimensionError(id + ": empty map");
  for (float v : pred.data)
    if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError(id + ": prediction outside [0,1]");
  for (float v : gt.data)
    if (v != 0.0f && v != 1.0f) throw ConfigError(id + ": mask is not binary");
}

double adaptive_threshold(const Image& pred) { return std::min(1.0, 2.0 * mean_of(pred)); }

std::vector<unsigned char> binarize(const Image& pred, double threshold) {
  std::vector<unsigned char> bin(pred.data.size());
  for (std::size_t i = 0; i < bin.size(); ++i) {
    const double v = pred.data[i];
    bin[i] = v > 0.0 && v >= threshold;
  }
  return bin;
}

double f_beta(double precision, double recall) {
  const double den = kBetaSquared * precision + recall;
  if (den <= 0.0) return 0.0;
  return (1.0 + kBetaSquared) * precision * recall / den;
}

double mae(const SaliencyPair& pair) {
  pair.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < pair.pred.data.size(); ++i)
    s += std::abs(static_cast<double>(pair.pred.data[i]) - pair.gt.data[i]);
  return s / static_cast<double>(pair.pred.data.size());
}

namespace {

struct Counts {
  double tp = 0, fp = 0, fn = 0;
};

Counts count(const std::vector<unsigned char>& bin, const Image& gt) {
  Counts c;
  for (std::size_t i = 0; i < bin.size(); ++i) {
    const bool g = gt.data[i] > 0.5f;
    if (bin[i] && g) ++c.tp;
    else if (bin[i]) ++c.fp;
    else if (g) ++c.fn;
  }
  return c;
}

double precision_of(const Counts& c) { return c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0; }
double recall_of(const Counts& c) { return c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0; }

}  // namespace

double f_measure_binary(const std::vector<unsigned char>& bin, const Image& gt) {
  const Counts c = count(bin, gt);
  return f_beta(precision_of(c), recall_of(c));
}

double e_measure_binary(const std::vector<unsigned char>& bin, const Image& gt) {
  const double n = static_cast<double>(bin.size());
  double sum_gt = 0.0, sum_bin = 0.0;
  for (std::size_t i = 0; i < bin.size(); ++i) {
    sum_gt += gt.data[i];
    sum_bin += bin[i];
  }
  if (sum_gt == 0.0) return 1.0 - sum_bin / n;
  if (sum_gt == n) return sum_bin / n;
  const double mb = sum_bin / n, mg = sum_gt / n;
  double s = 0.0;
  for (std::size_t i = 0; i < bin.size(); ++i) {
    const double pb = bin[i] - mb, pg = gt.data[i] - mg;
    const double xi = 2.0 * pb * pg / (pb * pb + pg * pg + kAlignEps);
    s += (xi + 1.0) * (xi + 1.0) / 4.0;
  }
  return s / n;
}

ThresholdCurves threshold_curves(const SaliencyPair& pair) {
  pair.validate();
  ThresholdCurves c;
  for (std::size_t k = 0; k < kThresholdBins; ++k) {
    const auto bin = binarize(pair.pred, sweep_threshold(k));
    const Counts n = count(bin, pair.gt);
    c.precision[k] = precision_of(n);
    c.recall[k] = recall_of(n);
    c.f[k] = f_beta(c.precision[k], c.recall[k]);
    c.e[k] = e_measure_binary(bin, pair.gt);
  }
  return c;
}

namespace {

double sweep_reduce(const std::array<double, kThresholdBins>& curve, ThresholdMode mode) {
  if (mode == ThresholdMode::Max) return *std::max_element(curve.begin(), curve.end());
  double s = 0.0;
  for (double v : curve) s += v;
  return s / kThresholdBins;
}

}  // namespace

double f_measure(const SaliencyPair& pair, ThresholdMode mode) {
  pair.validate();
  if (mode == ThresholdMode::Adaptive) return f_measure_binary(binarize(pair.pred, adaptive_threshold(pair.pred)), pair.gt);
  return sweep_reduce(threshold_curves(pair).f, mode);
}

double e_measure(const SaliencyPair& pair, ThresholdMode mode) {
  pair.validate();
  if (mode == ThresholdMode::Adaptive) return e_measure_binary(binarize(pair.pred, adaptive_threshold(pair.pred)), pair.gt);
  return sweep_reduce(threshold_curves(pair).e, mode);
}

// ---------------------------------------------------------------------------
// S-measure

namespace {

double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double m = 0.0;
  for (double v : values) m += v;
  m /= values.size();
  double var = 0.0;
  for (double v : values) var += (v - m) * (v - m);
  const double sd = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
  return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

double s_object(const Image& pred, const Image& gt) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (gt.data[i] > 0.5f) fg.push_back(pred.data[i]);
    else bg.push_back(1.0 - pred.data[i]);
  }
  const double u = static_cast<double>(fg.size()) / pred.data.size();
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double region_ssim(const Image& pred, const Image& gt, std::size_t y0, std::size_t y1, std::size_t x0,
                   std::size_t x1) {
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  if (n == 0.0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      mx += pred.at(0, y, x);
      my += gt.at(0, y, x);
    }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double dx = pred.at(0, y, x) - mx, dy = gt.at(0, y, x) - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  const double d = n - 1.0 + kEps;
  sxx /= d;
  syy /= d;
  sxy /= d;
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

double s_region(const Image& pred, const Image& gt) {
  const std::size_t h = gt.height, w = gt.width;
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double g = gt.at(0, y, x);
      total += g;
      sx += g * static_cast<double>(x + 1);
      sy += g * static_cast<double>(y + 1);
    }
  std::size_t X, Y;
  if (total == 0.0) {
    X = static_cast<std::size_t>(std::round(w / 2.0));
    Y = static_cast<std::size_t>(std::round(h / 2.0));
  } else {
    X = static_cast<std::size_t>(std::round(sx / total));
    Y = static_cast<std::size_t>(std::round(sy / total));
  }
  const double area = static_cast<double>(w * h);
  const double w1 = static_cast<double>(X * Y) / area;
  const double w2 = static_cast<double>((w - X) * Y) / area;
  const double w3 = static_cast<double>(X * (h - Y)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * region_ssim(pred, gt, 0, Y, 0, X) + w2 * region_ssim(pred, gt, 0, Y, X, w) +
         w3 * region_ssim(pred, gt, Y, h, 0, X) + w4 * region_ssim(pred, gt, Y, h, X, w);
}

}  // namespace

double s_measure(const SaliencyPair& pair) {
  pair.validate();
  const double y = mean_of(pair.gt);
  if (y == 0.0) return 1.0 - mean_of(pair.pred);
  if (y == 1.0) return mean_of(pair.pred);
  const double alpha = 0.5;
  const double q = alpha * s_object(pair.pred, pair.gt) + (1.0 - alpha) * s_region(pair.pred, pair.gt);
  return std::max(0.0, q);
}

// ---------------------------------------------------------------------------

namespace {

ImageMetrics evaluate_with_curves(const SaliencyPair& pair, ThresholdCurves& c) {
  pair.validate();
  ImageMetrics m;
  m.id = pair.id;
  m.mae = mae(pair);
  m.sm = s_measure(pair);
  const auto adaptive = binarize(pair.pred, adaptive_threshold(pair.pred));
  m.adpE = e_measure_binary(adaptive, pair.gt);
  m.adpF = f_measure_binary(adaptive, pair.gt);
  c = threshold_curves(pair);
  m.meanE = sweep_reduce(c.e, ThresholdMode::Mean);
  m.maxE = sweep_reduce(c.e, ThresholdMode::Max);
  m.meanF = sweep_reduce(c.f, ThresholdMode::Mean);
  m.maxF = sweep_reduce(c.f, ThresholdMode::Max);
  m.empty_gt = mean_of(pair.gt) == 0.0;
  return m;
}

}  // namespace

ImageMetrics evaluate_pair(const SaliencyPair& pair) {
  ThresholdCurves c;
  return evaluate_with_curves(pair, c);
}

const std::array<const char*, 8>& metric_columns() {
  static const std::array<const char*, 8> c{"Sm", "adpE", "meanE", "maxE", "adpF", "meanF", "maxF", "MAE"};
  return c;
}

std::array<double, 8> metric_values(const ImageMetrics& m) {
  return {m.sm, m.adpE, m.meanE, m.maxE, m.adpF, m.meanF, m.maxF, m.mae};
}

MetricsReport evaluate_corpus(std::vector<SaliencyPair> pairs) {
  if (pairs.empty()) throw ConfigError("no prediction/mask pairs to evaluate");
  std::sort(pairs.begin(), pairs.end(), [](const SaliencyPair& a, const SaliencyPair& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < pairs.size(); ++i)
    if (pairs[i].id == pairs[i - 1].id) throw ConfigError("duplicate id " + pairs[i].id);

  MetricsReport r;
  r.mean.id = "MEAN";
  for (const auto& p : pairs) {
    ThresholdCurves c;
    ImageMetrics m = evaluate_with_curves(p, c);
    if (m.empty_gt) r.flagged.push_back(m.id);
    for (std::size_t k = 0; k < kThresholdBins; ++k) {
      r.curves.precision[k] += c.precision[k];
      r.curves.recall[k] += c.recall[k];
      r.curves.f[k] += c.f[k];
      r.curves.e[k] += c.e[k];
    }
    r.mean.mae += m.mae;
    r.mean.sm += m.sm;
    r.mean.adpE += m.adpE;
    r.mean.meanE += m.meanE;
    r.mean.maxE += m.maxE;
    r.mean.adpF += m.adpF;
    r.mean.meanF += m.meanF;
    r.mean.maxF += m.maxF;
    r.per_image.push_back(std::move(m));
  }
  const double inv = 1.0 / pairs.size();
  for (double* v : {&r.mean.mae, &r.mean.sm, &r.mean.adpE, &r.mean.meanE, &r.mean.maxE, &r.mean.adpF, &r.mean.meanF,
                    &r.mean.maxF})
    *v *= inv;
  for (std::size_t k = 0; k < kThresholdBins; ++k) {
    r.curves.precision[k] *= inv;
    r.curves.recall[k] *= inv;
    r.curves.f[k] *= inv;
    r.curves.e[k] *= inv;
  }
  return r;
}

std::string MetricsReport::csv() const {
  std::ostringstream os;
  os << "id";
  for (const char* c : metric_columns()) os << ',' << c;
  os << '\n';
  auto row = [&](const ImageMetrics& m) {
    os << m.id;
    for (double v : metric_values(m)) os << ',' << format_fixed(v, 6);
    os << '\n';
  };
  for (const auto& m : per_image) row(m);
  row(mean);
  return os.str();
}

std::string MetricsReport::curves_csv() const {
  std::ostringstream os;
  os << "threshold,precision,recall,F,E\n";
  for (std::size_t k = 0; k < kThresholdBins; ++k)
    os << format_fixed(sweep_threshold(k), 6) << ',' << format_fixed(curves.precision[k], 6) << ','
       << format_fixed(curves.recall[k], 6) << ',' << format_fixed(curves.f[k], 6) << ','
       << format_fixed(curves.e[k], 6) << '\n';
  return os.str();
}

std::string MetricsReport::table(const std::string& label) const {
  std::ostringstream os;
  const int lw = static_cast<int>(std::max<std::size_t>(label.size(), 5));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-*s", lw, "");
  os << buf;
  for (const char* c : metric_columns()) {
    std::snprintf(buf, sizeof(buf), " %7s", c);
    os << buf;
  }
  os << '\n';
  std::snprintf(buf, sizeof(buf), "%-*s", lw, label.c_str());
  os << buf;
  for (double v : metric_values(mean)) {
    std::snprintf(buf, sizeof(buf), " %7.3f", v);
    os << buf;
  }
  os << '\n';
  if (!flagged.empty()) os << "all-zero masks (F-measures set to 0): " << join(flagged, ", ") << '\n';
  return os.str();
}

}  // namespace rgbdsod
