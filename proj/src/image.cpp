#include "rgbdsod/image.hpp"

#include <algorithm>
#include <cmath>

namespace rgbdsod {

Image Image::channel(std::size_t c) const {
  if (c >= channels) throw DimensionError("channel index out of range");
  Image out(1, height, width);
  auto src = plane(c);
  std::copy(src.begin(), src.end(), out.data.begin());
  return out;
}

void RgbdSample::validate() const {
  if (rgb.channels != 3) throw DimensionError("sample " + id + ": rgb must have 3 channels");
  if (depth.channels != 1 || gt.channels != 1) throw DimensionError("sample " + id + ": depth and gt must have 1 channel");
  if (rgb.empty()) throw DimensionError("sample " + id + ": empty image");
  if (!rgb.same_size(depth) || !rgb.same_size(gt)) throw DimensionError("sample " + id + ": plane sizes differ");
  for (float v : gt.data)
    if (v != 0.0f && v != 1.0f) throw ConfigError("sample " + id + ": gt must be binary");
}

Tensor to_tensor(const Image& image) {
  return Tensor({1, image.channels, image.height, image.width}, image.data);
}

Image from_tensor(const Tensor& tensor, std::size_t n) {
  if (tensor.rank() != 4) throw DimensionError("from_tensor expects NCHW");
  Image out(tensor.dim(1), tensor.dim(2), tensor.dim(3));
  const std::size_t len = out.data.size();
  auto src = tensor.data().subspan(n * len, len);
  std::copy(src.begin(), src.end(), out.data.begin());
  return out;
}

namespace {

struct Taps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> frac;
};

Taps make_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    t.i0[o] = i0;
    t.i1[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.empty() || height == 0 || width == 0) throw DimensionError("resize of an empty image");
  if (image.height == height && image.width == width) return image;
  const Taps ty = make_taps(image.height, height);
  const Taps tx = make_taps(image.width, width);
  Image out(image.channels, height, width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = ty.frac[y];
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = tx.frac[x];
        const double top = (1 - fx) * image.at(c, ty.i0[y], tx.i0[x]) + fx * image.at(c, ty.i0[y], tx.i1[x]);
        const double bot = (1 - fx) * image.at(c, ty.i1[y], tx.i0[x]) + fx * image.at(c, ty.i1[y], tx.i1[x]);
        out.at(c, y, x) = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

RgbdSample resize_sample(const RgbdSample& sample, std::size_t size) {
  RgbdSample out;
  out.id = sample.id;
  out.depth_high_quality = sample.depth_high_quality;
  out.rgb = resize_bilinear(sample.rgb, size, size);
  out.depth = resize_bilinear(sample.depth, size, size);
  out.gt = resize_bilinear(sample.gt, size, size);
  for (float& v : out.gt.data) v = v >= 0.5f ? 1.0f : 0.0f;
  return out;
}

}  // namespace rgbdsod
