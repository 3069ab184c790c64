#pragma once

#include <random>
#include <string>

#include "rgbdsod/image.hpp"

namespace testing_util {

inline rgbdsod::RgbdSample random_sample(std::mt19937_64& rng, std::size_t h, std::size_t w,
                                         const std::string& id = "s") {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  rgbdsod::RgbdSample s;
  s.id = id;
  s.rgb = rgbdsod::Image(3, h, w);
  s.depth = rgbdsod::Image(1, h, w);
  s.gt = rgbdsod::Image(1, h, w);
  for (float& v : s.rgb.data) v = u(rng);
  for (float& v : s.depth.data) v = u(rng);
  for (float& v : s.gt.data) v = u(rng) < 0.4f ? 1.0f : 0.0f;
  return s;
}

inline rgbdsod::Image random_map(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  rgbdsod::Image m(1, h, w);
  for (float& v : m.data) v = u(rng);
  return m;
}

}  // namespace testing_util
