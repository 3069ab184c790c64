#include "rgbdsod/io.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rgbdsod/recombine.hpp"
#include "rgbdsod/text_util.hpp"

namespace rgbdsod {

namespace fs = std::filesystem;
using nlohmann::json;

Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw FormatError("cannot decode " + path + ": " + png.message);
  const bool color = png.format & PNG_FORMAT_FLAG_COLOR;
  const bool alpha = png.format & PNG_FORMAT_FLAG_ALPHA;
  png.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  const std::size_t channels = PNG_IMAGE_PIXEL_CHANNELS(png.format);
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError("cannot decode " + path + ": " + msg);
  }
  Image out(channels, png.height, png.width);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        out.at(c, y, x) = buffer[(y * out.width + x) * channels + c] / 255.0f;
  return out;
}

void write_png(const std::string& path, const Image& image) {
  if (image.channels < 1 || image.channels > 4 || image.empty())
    throw DimensionError("PNG needs 1 to 4 channels, got " + std::to_string(image.channels));
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  static const png_uint_32 formats[] = {PNG_FORMAT_GRAY, PNG_FORMAT_GA, PNG_FORMAT_RGB, PNG_FORMAT_RGBA};
  png.format = formats[image.channels - 1];
  const std::size_t ch = image.channels;
  std::vector<png_byte> buffer(image.data.size());
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < ch; ++c)
        buffer[(y * image.width + x) * ch + c] =
            static_cast<png_byte>(std::lround(quantize8(image.at(c, y, x)) * 255.0f));
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw FormatError("cannot write " + path + ": " + png.message);
}

// ---------------------------------------------------------------------------

DatasetManifest DatasetManifest::load(const std::string& path) {
  const fs::path p(path);
  return parse(read_text_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

DatasetManifest DatasetManifest::parse(const std::string& json_text, const std::string& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  json j;
  try {
    j = json::parse(json_text);
    m.root = j.value("root", std::string("."));
    m.depth_reverse = j.value("depth_reverse", false);
    m.depth_normalize = j.value("depth_normalize", true);
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.rgb = e.at("rgb").get<std::string>();
      entry.depth = e.at("depth").get<std::string>();
      entry.gt = e.at("gt").get<std::string>();
      entry.split = e.value("split", std::string("train"));
      if (e.contains("quality")) {
        const std::string q = e.at("quality").get<std::string>();
        if (q != "high" && q != "low") throw FormatError("entry " + entry.id + ": quality must be high or low");
        entry.high_quality = q == "high";
      }
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string DatasetManifest::to_json() const {
  json j;
  j["root"] = root;
  j["depth_reverse"] = depth_reverse;
  j["depth_normalize"] = depth_normalize;
  j["entries"] = json::array();
  for (const auto& e : entries) {
    json o{{"id", e.id}, {"rgb", e.rgb}, {"depth", e.depth}, {"gt", e.gt}, {"split", e.split}};
    if (e.high_quality) o["quality"] = *e.high_quality ? "high" : "low";
    j["entries"].push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

void DatasetManifest::save(const std::string& path) const { write_text_file(path, to_json()); }

std::string DatasetManifest::resolve(const std::string& file) const {
  const fs::path f(file);
  if (f.is_absolute()) return f.string();
  fs::path r(root);
  if (!r.is_absolute()) r = fs::path(base_dir) / r;
  return (r / f).lexically_normal().string();
}

void DatasetManifest::validate() const {
  if (entries.empty()) throw ConfigError("manifest has no entries");
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.id.empty()) throw ConfigError("manifest entry without id");
    if (!ids.insert(e.id).second) throw ConfigError("duplicate id " + e.id);
    if (e.split != "train" && e.split != "test") throw ConfigError(e.id + ": unknown split '" + e.split + "'");
    Image planes[3];
    const std::string* files[3] = {&e.rgb, &e.depth, &e.gt};
    for (int i = 0; i < 3; ++i) {
      const std::string path = resolve(*files[i]);
      if (!fs::exists(path)) throw FormatError(e.id + ": missing file " + path);
      planes[i] = read_png(path);
    }
    if (!planes[0].same_size(planes[1]) || !planes[0].same_size(planes[2]))
      throw DimensionError(e.id + ": rgb, depth and gt sizes differ");
  }
}

namespace {

Image first_plane(const Image& im) { return im.channels == 1 ? im : im.channel(0); }

Image as_rgb(const Image& im) {
  if (im.channels >= 3) {
    Image out(3, im.height, im.width);
    std::copy(im.data.begin(), im.data.begin() + static_cast<std::ptrdiff_t>(3 * im.plane_size()), out.data.begin());
    return out;
  }
  Image out(3, im.height, im.width);
  for (std::size_t c = 0; c < 3; ++c) std::copy(im.plane(0).begin(), im.plane(0).end(), out.plane(c).begin());
  return out;
}

}  // namespace

std::vector<RgbdSample> load_corpus(const DatasetManifest& manifest, const std::string& split, std::size_t size) {
  std::vector<RgbdSample> out;
  for (const auto& e : manifest.entries) {
    if (!split.empty() && e.split != split) continue;
    RgbdSample s;
    s.id = e.id;
    s.rgb = as_rgb(read_png(manifest.resolve(e.rgb)));
    Image depth = first_plane(read_png(manifest.resolve(e.depth)));
    if (manifest.depth_normalize) {
      s.depth = normalize_depth(depth, manifest.depth_reverse);
    } else {
      if (manifest.depth_reverse)
        for (float& v : depth.data) v = 1.0f - v;
      s.depth = std::move(depth);
    }
    s.gt = first_plane(read_png(manifest.resolve(e.gt)));
    for (float& v : s.gt.data) v = v >= 0.5f ? 1.0f : 0.0f;
    s.depth_high_quality = e.high_quality;
    if (!s.rgb.same_size(s.depth) || !s.rgb.same_size(s.gt))
      throw DimensionError(e.id + ": rgb, depth and gt sizes differ");
    if (size && (s.rgb.height != size || s.rgb.width != size)) s = resize_sample(s, size);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ConfigError("no manifest entries" + (split.empty() ? std::string() : " in split " + split));
  return out;
}

DatasetManifest write_corpus(const std::string& dir, const std::vector<RgbdSample>& samples,
                             const std::vector<std::string>& splits) {
  if (splits.size() != samples.size()) throw ConfigError("one split tag per sample required");
  fs::create_directories(fs::path(dir) / "rgb");
  fs::create_directories(fs::path(dir) / "depth");
  fs::create_directories(fs::path(dir) / "gt");
  DatasetManifest m;
  m.base_dir = dir;
  m.depth_normalize = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ManifestEntry e;
    e.id = s.id;
    e.rgb = "rgb/" + s.id + ".png";
    e.depth = "depth/" + s.id + ".png";
    e.gt = "gt/" + s.id + ".png";
    e.split = splits[i];
    e.high_quality = s.depth_high_quality;
    write_png(m.resolve(e.rgb), s.rgb);
    write_png(m.resolve(e.depth), s.depth);
    write_png(m.resolve(e.gt), s.gt);
    m.entries.push_back(std::move(e));
  }
  m.save((fs::path(dir) / "manifest.json").string());
  return m;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'G', 'B', 'D', 'S', 'O', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

void put_floats(std::string& out, std::span<const float> data) {
  put_u64(out, data.size());
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats() {
    const std::uint64_t n = u64();
    if (n > (b_.size() - pos_) / 4) throw FormatError("checkpoint truncated");
    std::vector<float> v(n);
    for (auto& f : v) {
      const std::uint32_t bits = u32();
      std::memcpy(&f, &bits, 4);
    }
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw FormatError("checkpoint truncated");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const SodModel& model) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_string(out, model.config().serialize());
  const auto params = model.params().parameters();
  const auto& states = model.params().state_names();
  put_u64(out, params.size() + 2 * states.size());
  for (const Parameter* p : params) {
    put_string(out, p->name);
    put_floats(out, p->value.data());
  }
  for (const auto& name : states) {
    const BatchNormState* st = model.params().find_state(name);
    put_string(out, name + "/running_mean");
    put_floats(out, st->running_mean.data());
    put_string(out, name + "/running_var");
    put_floats(out, st->running_var.data());
  }
  return out;
}

SodModel checkpoint_from_bytes(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw FormatError("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion));
  const ModelConfig config = ModelConfig::parse(r.str());
  SodModel model(config, 0);
  const std::uint64_t count = r.u64();
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    std::vector<float> values = r.floats();
    if (!seen.insert(name).second) throw FormatError("checkpoint repeats " + name);
    Tensor* target = nullptr;
    if (Parameter* p = model.params().find(name)) {
      target = &p->value;
    } else {
      const auto slash = name.rfind('/');
      const std::string layer = slash == std::string::npos ? name : name.substr(0, slash);
      const std::string field = slash == std::string::npos ? "" : name.substr(slash + 1);
      if (model.params().find_state(layer)) {
        BatchNormState& st = model.params().state(layer);
        if (field == "running_mean") target = &st.running_mean;
        if (field == "running_var") target = &st.running_var;
      }
    }
    if (!target) throw FormatError("checkpoint entry " + name + " does not belong to the stored model config");
    if (target->numel() != values.size())
      throw FormatError("checkpoint entry " + name + " has " + std::to_string(values.size()) + " values, expected " +
                        std::to_string(target->numel()));
    *target = Tensor(target->shape(), std::move(values));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  const std::size_t expected = model.params().parameters().size() + 2 * model.params().state_names().size();
  if (seen.size() != expected)
    throw FormatError("checkpoint has " + std::to_string(seen.size()) + " arrays, model needs " +
                      std::to_string(expected));
  return model;
}

void save_checkpoint(const std::string& path, const SodModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  const std::string bytes = checkpoint_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path);
}

SodModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace rgbdsod
