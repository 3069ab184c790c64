#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "rgbdsod/image.hpp"

namespace rgbdsod {

/// Channel-level recombinations of an RGB-D sample.
///
/// Alongside the three cyclic depth substitutions (DGB, RDB, RGD) this covers
/// the comparison inputs (RGB, DDD, 4-channel RGBD), the 2-channel triples,
/// the YUV variant, and the saliency-for-depth substitutions used by the
/// recurrent pass (SGB, RSB, RGS).
enum class RecombinationKind {
  DGB,
  RDB,
  RGD,
  RGB,
  DDD,
  RGBD,
  GB_RB_RG,
  RD_GD_BD,
  YUD_YDV_DUV,
  SGB,
  RSB,
  RGS,
};

std::string_view to_string(RecombinationKind kind);
RecombinationKind parse_recombination_kind(std::string_view name);
const std::vector<RecombinationKind>& all_recombination_kinds();

/// A channel recipe spells one output image letter by letter:
///   R G B   color planes
///   D       depth
///   S       supplied saliency map
///   Y U V   BT.601 luma and offset chroma (full-range YCbCr, in [0,1])
///   0       all-zero plane
/// "DGB" means (depth, green, blue).
std::vector<std::string> channel_recipes(RecombinationKind kind);

bool recipe_uses_saliency(std::string_view recipe);
/// Replaces every D with S.
std::string substitute_saliency(std::string_view recipe);
/// Depth-free input of the given width used for RGB-only pretraining:
/// 2 -> "RG", 3 -> "RGB", 4 -> "RGB0".
std::string pretrain_recipe(std::size_t channels);

/// Min-max normalization to [0,1]; reverse maps v to 1 - v.
/// A constant image maps to all zeros regardless of reverse.
Image normalize_depth(const Image& raw, bool reverse);

/// Builds one image from a recipe. `saliency` is required iff the recipe
/// contains S.
Image compose_channels(const RgbdSample& sample, std::string_view recipe, const Image* saliency = nullptr);

/// Outputs one image per recipe of `kind` (three for the triples).
std::vector<Image> recombine(const RgbdSample& sample, RecombinationKind kind, const Image* saliency = nullptr);

}  // namespace rgbdsod
