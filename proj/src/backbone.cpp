#include "rgbdsod/backbone.hpp"

#include <cmath>

namespace rgbdsod {

BackboneConfig BackboneConfig::preset(const std::string& name) {
  BackboneConfig c;
  if (name == "toy") return c;
  if (name == "small") {
    c.block_channels = {16, 32, 64, 64, 64};
    c.skip_channels = 32;
    c.input_size = 128;
    c.scale = "small";
    return c;
  }
  throw ConfigError("unknown backbone preset: " + name);
}

void BackboneConfig::validate() const {
  if (block_channels.size() != 5 || convs_per_block.size() != 5)
    throw ConfigError("backbone needs exactly 5 blocks");
  if (in_channels < 1) throw ConfigError("backbone in_channels must be positive");
  for (std::size_t i = 0; i < 5; ++i)
    if (block_channels[i] == 0 || convs_per_block[i] == 0) throw ConfigError("backbone blocks must be nonempty");
  if (skip_channels == 0) throw ConfigError("skip_channels must be positive");
  if (input_size == 0 || input_size % 8 != 0) throw ConfigError("input_size must be a positive multiple of 8");
}

Tensor Initializer::conv_weight(std::size_t cout, std::size_t cin, std::size_t k) {
  Tensor w({cout, cin, k, k});
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : w.data()) v = static_cast<float>(dist(rng_));
  return w;
}

void add_conv(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              Initializer& init) {
  store.add(name + "/weight", init.conv_weight(cout, cin, k));
  store.add(name + "/bias", Tensor({cout}, 0.0f));
}

void add_batchnorm(ParameterStore& store, const std::string& name, std::size_t channels) {
  store.add(name + "/gamma", Tensor({channels}, 1.0f));
  store.add(name + "/beta", Tensor({channels}, 0.0f));
  store.add_batchnorm_state(name, channels);
}

Var apply_conv(Graph& g, ParameterStore& store, const std::string& name, Var x) {
  Var w = g.parameter(store.get(name + "/weight"));
  Var b = g.parameter(store.get(name + "/bias"));
  const int pad = static_cast<int>(w.shape()[2] / 2);
  return conv2d(x, w, b, 1, pad);
}

Var apply_batchnorm(Graph& g, ParameterStore& store, const std::string& name, Var x, Mode mode) {
  Var gamma = g.parameter(store.get(name + "/gamma"));
  Var beta = g.parameter(store.get(name + "/beta"));
  return batchnorm(x, gamma, beta, store.state(name), mode);
}

namespace {

std::string block_conv(const std::string& prefix, std::size_t block, std::size_t conv) {
  return prefix + "/block" + std::to_string(block + 1) + "/conv" + std::to_string(conv + 1);
}

std::string skip_name(const std::string& prefix, std::size_t i) { return prefix + "/skip" + std::to_string(i); }

// Channels of Conv_j (1-based).
std::size_t conv_width(const BackboneConfig& c, std::size_t j) { return c.block_channels[j - 1]; }

}  // namespace

void add_backbone(ParameterStore& store, const std::string& prefix, const BackboneConfig& config, bool with_sal_head,
                  Initializer& init) {
  config.validate();
  std::size_t cin = config.in_channels;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t c = 0; c < config.convs_per_block[b]; ++c) {
      add_conv(store, block_conv(prefix, b, c), cin, config.block_channels[b], 3, init);
      cin = config.block_channels[b];
    }
  }
  const std::size_t w = config.skip_channels;
  for (std::size_t i = 1; i <= 4; ++i) {
    const std::string s = skip_name(prefix, i);
    const std::size_t conv_ch = conv_width(config, i == 1 ? 4 : 5 - i);
    const std::size_t prev_ch = i == 1 ? conv_width(config, 5) : w;
    add_batchnorm(store, s + "/bn_conv", conv_ch);
    add_batchnorm(store, s + "/bn_prev", prev_ch);
    add_conv(store, s + "/conv1", conv_ch + prev_ch, w, 3, init);
    add_conv(store, s + "/conv2", w, w, 3, init);
    add_conv(store, prefix + "/side" + std::to_string(i), w, 1, 1, init);
  }
  if (with_sal_head) {
    for (std::size_t stage = 1; stage <= 3; ++stage) {
      const std::string s = prefix + "/sal/stage" + std::to_string(stage);
      add_batchnorm(store, s + "/bn_a", w);
      add_batchnorm(store, s + "/bn_prev", w);
      add_conv(store, s + "/conv", 2 * w, stage == 3 ? 1 : w, 3, init);
    }
  }
}

BackboneFeatures backbone_forward(Graph& g, Var input, const BackboneConfig& config, ParameterStore& store,
                                  const std::string& prefix, Mode mode, bool with_sal_head) {
  config.validate();
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != config.in_channels || s[2] != config.input_size || s[3] != config.input_size) {
    throw DimensionError("backbone " + prefix + " expects [N," + std::to_string(config.in_channels) + "," +
                         std::to_string(config.input_size) + "," + std::to_string(config.input_size) + "], got " +
                         shape_string(s));
  }
  BackboneFeatures f;
  Var x = input;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t c = 0; c < config.convs_per_block[b]; ++c) x = relu(apply_conv(g, store, block_conv(prefix, b, c), x));
    f.conv_outputs.push_back(x);
    if (b < 3) {
      x = maxpool2d(x, 2, 2, 0);
    } else if (b == 3) {
      x = maxpool2d(x, 3, 1, 1);  // Pool_4 keeps the resolution
    }
  }

  const std::size_t size = config.input_size;
  for (std::size_t i = 1; i <= 4; ++i) {
    const std::string sk = skip_name(prefix, i);
    Var conv = f.conv_outputs[i == 1 ? 3 : 4 - i];  // Conv_4 for A_1, else Conv_{5-i}
    Var prev = i == 1 ? f.conv_outputs[4] : f.A.back();
    prev = resample_to(prev, conv.shape()[2], conv.shape()[3]);
    Var cat = concat(apply_batchnorm(g, store, sk + "/bn_conv", conv, mode),
                     apply_batchnorm(g, store, sk + "/bn_prev", prev, mode));
    Var a = apply_conv(g, store, sk + "/conv2", relu(apply_conv(g, store, sk + "/conv1", cat)));
    f.A.push_back(a);
    Var side = apply_conv(g, store, prefix + "/side" + std::to_string(i), a);
    f.side_logits.push_back(upsample_to(side, size, size));
  }

  if (with_sal_head) {
    // Nested deepest flow over A_1..A_4, upsampling before each concat.
    Var t = f.A[0];
    for (std::size_t stage = 1; stage <= 3; ++stage) {
      const std::string st = prefix + "/sal/stage" + std::to_string(stage);
      Var a = f.A[stage];
      Var prev = upsample_to(t, a.shape()[2], a.shape()[3]);
      Var cat = concat(apply_batchnorm(g, store, st + "/bn_a", a, mode),
                       apply_batchnorm(g, store, st + "/bn_prev", prev, mode));
      t = apply_conv(g, store, st + "/conv", cat);
      if (stage < 3) t = relu(t);
    }
    f.sal = t;
  }
  return f;
}

ParameterCount count_parameters(const ParameterStore& store) {
  ParameterCount out;
  for (const Parameter* p : store.parameters()) {
    const std::size_t n = p->value.numel();
    out.total += n;
    const auto slash = p->name.rfind('/');
    const std::string layer = slash == std::string::npos ? p->name : p->name.substr(0, slash);
    if (!out.per_layer.empty() && out.per_layer.back().first == layer) {
      out.per_layer.back().second += n;
    } else {
      out.per_layer.emplace_back(layer, n);
    }
  }
  return out;
}

std::size_t count_parameters_with_prefix(const ParameterStore& store, const std::string& prefix) {
  std::size_t n = 0;
  for (const Parameter* p : store.parameters())
    if (p->name.compare(0, prefix.size(), prefix) == 0) n += p->value.numel();
  return n;
}

}  // namespace rgbdsod
