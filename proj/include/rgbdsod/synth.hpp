#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgbdsod/image.hpp"

namespace rgbdsod {

enum class ShapeFamily { Rectangles, Ellipses, Mixed };

std::string_view to_string(ShapeFamily family);
ShapeFamily parse_shape_family(std::string_view name);

/// Random foreground shapes over flat color backgrounds. High-quality depth
/// puts the object on its own layer (a 0.5 threshold recovers the mask);
/// low-quality depth is a ramp plus an unrelated blob plus noise.
struct SyntheticSpec {
  std::size_t n_images = 40;
  std::size_t size = 32;
  std::uint64_t seed = 1;
  double depth_quality = 0.5;  // fraction of high-quality depth maps
  ShapeFamily shapes = ShapeFamily::Mixed;
  double rgb_contrast = 0.25;  // per-channel object/background offset
  double rgb_noise = 0.08;     // uniform noise amplitude on color planes
  double depth_noise = 0.05;   // uniform noise amplitude on depth

  void validate() const;
};

/// Deterministic per seed. Sample ids are "syn0000", "syn0001", ...
std::vector<RgbdSample> generate_synthetic(const SyntheticSpec& spec);

/// Pearson correlation of depth and mask pixels pooled over the samples.
double depth_gt_correlation(const std::vector<RgbdSample>& samples);

}  // namespace rgbdsod
