#include "rgbdsod/recombine.hpp"

#include <algorithm>
#include <array>

namespace rgbdsod {

namespace {

struct KindName {
  RecombinationKind kind;
  std::string_view name;
};

constexpr std::array<KindName, 12> kKindNames{{
    {RecombinationKind::DGB, "DGB"},
    {RecombinationKind::RDB, "RDB"},
    {RecombinationKind::RGD, "RGD"},
    {RecombinationKind::RGB, "RGB"},
    {RecombinationKind::DDD, "DDD"},
    {RecombinationKind::RGBD, "RGBD"},
    {RecombinationKind::GB_RB_RG, "GB+RB+RG"},
    {RecombinationKind::RD_GD_BD, "RD+GD+BD"},
    {RecombinationKind::YUD_YDV_DUV, "YUD+YDV+DUV"},
    {RecombinationKind::SGB, "SGB"},
    {RecombinationKind::RSB, "RSB"},
    {RecombinationKind::RGS, "RGS"},
}};

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }
float chroma_u(float r, float g, float b) { return 0.5f - 0.168736f * r - 0.331264f * g + 0.5f * b; }
float chroma_v(float r, float g, float b) { return 0.5f + 0.5f * r - 0.418688f * g - 0.081312f * b; }

}  // namespace

std::string_view to_string(RecombinationKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.name;
  return "?";
}

RecombinationKind parse_recombination_kind(std::string_view name) {
  for (const auto& k : kKindNames)
    if (k.name == name) return k.kind;
  if (name == "GB_RB_RG") return RecombinationKind::GB_RB_RG;
  if (name == "RD_GD_BD") return RecombinationKind::RD_GD_BD;
  if (name == "YUD_YDV_DUV") return RecombinationKind::YUD_YDV_DUV;
  throw ConfigError("unknown recombination kind: " + std::string(name));
}

const std::vector<RecombinationKind>& all_recombination_kinds() {
  static const std::vector<RecombinationKind> kinds = [] {
    std::vector<RecombinationKind> v;
    for (const auto& k : kKindNames) v.push_back(k.kind);
    return v;
  }();
  return kinds;
}

std::vector<std::string> channel_recipes(RecombinationKind kind) {
  switch (kind) {
    case RecombinationKind::GB_RB_RG:
      return {"GB", "RB", "RG"};
    case RecombinationKind::RD_GD_BD:
      return {"RD", "GD", "BD"};
    case RecombinationKind::YUD_YDV_DUV:
      return {"YUD", "YDV", "DUV"};
    default:
      return {std::string(to_string(kind))};
  }
}

bool recipe_uses_saliency(std::string_view recipe) { return recipe.find('S') != std::string_view::npos; }

std::string substitute_saliency(std::string_view recipe) {
  std::string out(recipe);
  std::replace(out.begin(), out.end(), 'D', 'S');
  return out;
}

std::string pretrain_recipe(std::size_t channels) {
  switch (channels) {
    case 1:
      return "R";
    case 2:
      return "RG";
    case 3:
      return "RGB";
    case 4:
      return "RGB0";
    default:
      throw ConfigError("no RGB-only recipe for " + std::to_string(channels) + " channels");
  }
}

Image normalize_depth(const Image& raw, bool reverse) {
  if (raw.empty()) throw DimensionError("normalize_depth of an empty image");
  if (raw.channels != 1) throw DimensionError("normalize_depth expects a single-channel image");
  const auto [lo_it, hi_it] = std::minmax_element(raw.data.begin(), raw.data.end());
  const double lo = *lo_it, hi = *hi_it;
  Image out(1, raw.height, raw.width, 0.0f);
  if (hi - lo <= 0.0) return out;
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    const double v = (raw.data[i] - lo) / (hi - lo);
    out.data[i] = static_cast<float>(reverse ? 1.0 - v : v);
  }
  return out;
}

Image compose_channels(const RgbdSample& sample, std::string_view recipe, const Image* saliency) {
  if (recipe.empty()) throw ConfigError("empty channel recipe");
  if (sample.rgb.channels != 3 || !sample.rgb.same_size(sample.depth))
    throw DimensionError("sample " + sample.id + " has inconsistent planes");
  const bool needs_s = recipe_uses_saliency(recipe);
  if (needs_s) {
    if (saliency == nullptr) throw ConfigError("recipe " + std::string(recipe) + " requires a saliency map");
    if (saliency->channels != 1 || !saliency->same_size(sample.rgb))
      throw DimensionError("saliency map must be 1-channel at the sample resolution");
  }
  const std::size_t n = sample.rgb.plane_size();
  Image out(recipe.size(), sample.rgb.height, sample.rgb.width);
  auto r = sample.rgb.plane(0), g = sample.rgb.plane(1), b = sample.rgb.plane(2);
  for (std::size_t c = 0; c < recipe.size(); ++c) {
    auto dst = out.plane(c);
    switch (recipe[c]) {
      case 'R':
        std::copy(r.begin(), r.end(), dst.begin());
        break;
      case 'G':
        std::copy(g.begin(), g.end(), dst.begin());
        break;
      case 'B':
        std::copy(b.begin(), b.end(), dst.begin());
        break;
      case 'D': {
        auto d = sample.depth.plane(0);
        std::copy(d.begin(), d.end(), dst.begin());
        break;
      }
      case 'S': {
        auto s = saliency->plane(0);
        std::copy(s.begin(), s.end(), dst.begin());
        break;
      }
      case 'Y':
        for (std::size_t i = 0; i < n; ++i) dst[i] = luma(r[i], g[i], b[i]);
        break;
      case 'U':
        for (std::size_t i = 0; i < n; ++i) dst[i] = std::clamp(chroma_u(r[i], g[i], b[i]), 0.0f, 1.0f);
        break;
      case 'V':
        for (std::size_t i = 0; i < n; ++i) dst[i] = std::clamp(chroma_v(r[i], g[i], b[i]), 0.0f, 1.0f);
        break;
      case '0':
        std::fill(dst.begin(), dst.end(), 0.0f);
        break;
      default:
        throw ConfigError("unknown channel letter '" + std::string(1, recipe[c]) + "' in recipe " +
                          std::string(recipe));
    }
  }
  return out;
}

std::vector<Image> recombine(const RgbdSample& sample, RecombinationKind kind, const Image* saliency) {
  std::vector<Image> out;
  for (const auto& recipe : channel_recipes(kind)) out.push_back(compose_channels(sample, recipe, saliency));
  return out;
}

}  // namespace rgbdsod
