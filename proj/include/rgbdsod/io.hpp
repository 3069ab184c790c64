#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rgbdsod/image.hpp"
#include "rgbdsod/network.hpp"

namespace rgbdsod {

/// Unreadable, corrupt, or incompatible files.
class FormatError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// 8-bit PNG to [0,1] floats: 1 (gray), 2 (gray+alpha), 3 (RGB) or 4
/// (RGBA) channels as stored; palette files load as RGB.
Image read_png(const std::string& path);
/// Writes 1 (gray), 2 (gray+alpha), 3 (RGB) or 4 (RGBA) channels, values
/// clamped to [0,1] and rounded to 8 bits.
void write_png(const std::string& path, const Image& image);
/// Value of v after the 8-bit round trip.
inline float quantize8(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<float>(static_cast<int>(c * 255.0f + 0.5f)) / 255.0f;
}

struct ManifestEntry {
  std::string id;
  std::string rgb;
  std::string depth;
  std::string gt;
  std::string split = "train";  // "train" or "test"
  std::optional<bool> high_quality;
};

/// JSON dataset description. Relative file paths resolve against `root`,
/// which itself resolves against the manifest's directory.
struct DatasetManifest {
  std::string root = ".";
  bool depth_reverse = false;
  /// Min-max normalize depth on load; off for corpora written already normalized.
  bool depth_normalize = true;
  std::vector<ManifestEntry> entries;
  std::string base_dir = ".";  // directory the manifest was read from; not serialized

  static DatasetManifest load(const std::string& path);
  static DatasetManifest parse(const std::string& json_text, const std::string& base_dir);
  std::string to_json() const;
  void save(const std::string& path) const;

  std::string resolve(const std::string& file) const;
  /// Ids unique, splits known, every referenced file present and decodable.
  void validate() const;
};

/// Loads the entries of one split ("" for all) in manifest order, resized
/// to `size` when nonzero.
std::vector<RgbdSample> load_corpus(const DatasetManifest& manifest, const std::string& split = "",
                                    std::size_t size = 0);

/// Writes rgb/depth/gt PNGs under `dir` plus dir/manifest.json; returns the manifest.
DatasetManifest write_corpus(const std::string& dir, const std::vector<RgbdSample>& samples,
                             const std::vector<std::string>& splits);

/// Versioned little-endian checkpoint: model config text, then every
/// parameter and batch-norm statistic as a length-prefixed named array.
void save_checkpoint(const std::string& path, const SodModel& model);
SodModel load_checkpoint(const std::string& path);
/// Byte image of save_checkpoint.
std::string checkpoint_bytes(const SodModel& model);
SodModel checkpoint_from_bytes(const std::string& bytes);

}  // namespace rgbdsod
