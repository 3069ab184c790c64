#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgbdsod/tensor.hpp"

namespace rgbdsod {

/// Planar float image, channel-major (C, H, W).
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t plane_size() const { return height * width; }
  bool empty() const { return data.empty(); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::span<float> plane(std::size_t c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(std::size_t c) const { return {data.data() + c * plane_size(), plane_size()}; }

  /// Single-channel copy of channel c.
  Image channel(std::size_t c) const;
  bool same_size(const Image& other) const { return height == other.height && width == other.width; }
};

/// Paired color image, depth map, and binary mask at a common resolution.
struct RgbdSample {
  Image rgb;    // 3 channels in [0,1]
  Image depth;  // 1 channel in [0,1]
  Image gt;     // 1 channel in {0,1}
  std::string id;
  /// Generator label: true when depth alone separates the object.
  std::optional<bool> depth_high_quality;

  /// Throws DimensionError / ConfigError if the invariants do not hold.
  void validate() const;
};

/// [1, C, H, W] tensor view of an image.
Tensor to_tensor(const Image& image);
/// Inverse of to_tensor for batch element n.
Image from_tensor(const Tensor& tensor, std::size_t n = 0);

/// Bilinear resize (half-pixel centers).
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
/// Resizes every plane of a sample; the mask is re-binarized at 0.5.
RgbdSample resize_sample(const RgbdSample& sample, std::size_t size);

}  // namespace rgbdsod
