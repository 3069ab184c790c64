#include "rgbdsod/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace rgbdsod {

std::string_view to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::Rectangles:
      return "rectangles";
    case ShapeFamily::Ellipses:
      return "ellipses";
    case ShapeFamily::Mixed:
      return "mixed";
  }
  return "?";
}

ShapeFamily parse_shape_family(std::string_view name) {
  for (ShapeFamily f : {ShapeFamily::Rectangles, ShapeFamily::Ellipses, ShapeFamily::Mixed})
    if (to_string(f) == name) return f;
  throw ConfigError("unknown shape family: " + std::string(name));
}

void SyntheticSpec::validate() const {
  if (n_images < 1) throw ConfigError("n_images must be >= 1");
  if (size < 8) throw ConfigError("size must be >= 8");
  if (!(depth_quality >= 0.0 && depth_quality <= 1.0)) throw ConfigError("depth_quality must lie in [0,1]");
  if (rgb_contrast < 0.0 || rgb_noise < 0.0) throw ConfigError("rgb contrast and noise must be nonnegative");
  if (depth_noise < 0.0 || depth_noise >= 0.1) throw ConfigError("depth_noise must lie in [0, 0.1)");
}

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  double sign() { return (gen_() & 1) ? 1.0 : -1.0; }

 private:
  std::mt19937_64 gen_;
};

struct Blob {
  bool ellipse = true;
  double cx = 0, cy = 0, rx = 0, ry = 0;

  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  }
};

Blob random_blob(Rng& rng, ShapeFamily family, double size, double min_r, double max_r, double lo, double hi) {
  Blob b;
  b.ellipse = family == ShapeFamily::Ellipses || (family == ShapeFamily::Mixed && rng.uniform() < 0.5);
  b.rx = rng.uniform(min_r, max_r) * size;
  b.ry = rng.uniform(min_r, max_r) * size;
  b.cx = rng.uniform(lo, hi) * size;
  b.cy = rng.uniform(lo, hi) * size;
  return b;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

std::vector<RgbdSample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.n_images, s = spec.size;
  const double sd = static_cast<double>(s);

  // Exactly round(n * depth_quality) high-quality samples, shuffled.
  const auto n_high = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.depth_quality));
  std::vector<bool> high(n, false);
  for (std::size_t i = 0; i < n_high; ++i) high[i] = true;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.index(i);
    const bool t = high[i - 1];
    high[i - 1] = high[j];
    high[j] = t;
  }

  std::vector<RgbdSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RgbdSample smp;
    char id[32];
    std::snprintf(id, sizeof(id), "syn%04zu", i);
    smp.id = id;
    smp.depth_high_quality = high[i];
    smp.rgb = Image(3, s, s);
    smp.depth = Image(1, s, s);
    smp.gt = Image(1, s, s);

    const Blob object = random_blob(rng, spec.shapes, sd, 0.14, 0.28, 0.3, 0.7);
    double bg[3], fg[3], dist[3];
    for (int c = 0; c < 3; ++c) {
      bg[c] = rng.uniform(0.2, 0.8);
      fg[c] = bg[c] + rng.sign() * spec.rgb_contrast;
      dist[c] = bg[c] + rng.sign() * 0.5 * spec.rgb_contrast;
    }
    const bool with_distractor = rng.uniform() < 0.5;
    const Blob distractor = random_blob(rng, spec.shapes, sd, 0.06, 0.12, 0.1, 0.9);

    // Depth layers; the low-quality map ignores the object entirely.
    const double d_bg = rng.uniform(0.1, 0.35), d_fg = rng.uniform(0.7, 0.9);
    const double ramp_angle = rng.uniform(0.0, 6.283185307179586);
    const double ramp_lo = rng.uniform(0.0, 0.4), ramp_span = rng.uniform(0.2, 0.5);
    const Blob depth_blob = random_blob(rng, spec.shapes, sd, 0.1, 0.25, 0.0, 1.0);
    const double blob_depth = rng.uniform(0.5, 1.0);

    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const bool in_obj = object.contains(px, py);
        const bool in_dist = with_distractor && !in_obj && distractor.contains(px, py);
        smp.gt.at(0, y, x) = in_obj ? 1.0f : 0.0f;
        for (int c = 0; c < 3; ++c) {
          const double base = in_obj ? fg[c] : (in_dist ? dist[c] : bg[c]);
          smp.rgb.at(c, y, x) = clamp01(base + rng.uniform(-spec.rgb_noise, spec.rgb_noise));
        }
        double d;
        if (high[i]) {
          d = (in_obj ? d_fg : d_bg) + rng.uniform(-spec.depth_noise, spec.depth_noise);
        } else {
          const double t = ((px / sd - 0.5) * std::cos(ramp_angle) + (py / sd - 0.5) * std::sin(ramp_angle)) + 0.5;
          d = ramp_lo + ramp_span * t;
          if (depth_blob.contains(px, py)) d = blob_depth;
          d += rng.uniform(-spec.depth_noise, spec.depth_noise);
        }
        smp.depth.at(0, y, x) = clamp01(d);
      }
    }
    out.push_back(std::move(smp));
  }
  return out;
}

double depth_gt_correlation(const std::vector<RgbdSample>& samples) {
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.depth.data.size(); ++i) {
      const double x = s.depth.data[i], y = s.gt.data[i];
      n += 1;
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
  }
  if (n == 0) throw ConfigError("no samples");
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n), vy = syy / n - (sy / n) * (sy / n);
  if (vx <= 0 || vy <= 0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

}  // namespace rgbdsod
