#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rgbdsod/tensor.hpp"

namespace rgbdsod {

/// Desk-scale VGG-style branch: five conv blocks, pools 1-3 (2,2,0),
/// Pool_4 (3,1,1), no pool after block 5.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> block_channels{8, 16, 32, 32, 32};
  std::vector<std::size_t> convs_per_block{2, 2, 2, 2, 2};
  std::size_t skip_channels = 16;
  std::size_t input_size = 64;
  std::string scale = "toy";

  /// "toy" (64 px, [8,16,32,32,32], skip 16) or "small" (128 px, [16,32,64,64,64], skip 32).
  static BackboneConfig preset(const std::string& name);
  void validate() const;
};

/// Forward products of one branch.
struct BackboneFeatures {
  std::vector<Var> conv_outputs;  // Conv_1 .. Conv_5
  std::vector<Var> A;             // A_1 .. A_4
  std::optional<Var> sal;         // deepest-flow logits, when the head exists
  std::vector<Var> side_logits;   // per A_i, 1 channel at input resolution
};

/// He-normal conv weights, zero biases, unit gamma, zero beta.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor conv_weight(std::size_t cout, std::size_t cin, std::size_t k);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Layer helpers shared by the backbone and the fusion stages. Parameters
// live at "<name>/weight", "<name>/bias", "<name>/gamma", "<name>/beta";
// batch-norm running statistics at "<name>".
void add_conv(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              Initializer& init);
void add_batchnorm(ParameterStore& store, const std::string& name, std::size_t channels);
Var apply_conv(Graph& g, ParameterStore& store, const std::string& name, Var x);
Var apply_batchnorm(Graph& g, ParameterStore& store, const std::string& name, Var x, Mode mode);

/// Registers every parameter of one branch under `prefix`.
void add_backbone(ParameterStore& store, const std::string& prefix, const BackboneConfig& config, bool with_sal_head,
                  Initializer& init);

/// Runs one branch. Throws DimensionError on config/shape mismatch.
BackboneFeatures backbone_forward(Graph& g, Var input, const BackboneConfig& config, ParameterStore& store,
                                  const std::string& prefix, Mode mode, bool with_sal_head);

struct ParameterCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> per_layer;
};

/// Learnable scalars only (weights, biases, gamma, beta). Layers are the
/// parameter names with their final path component stripped.
ParameterCount count_parameters(const ParameterStore& store);
/// Learnable scalars whose name starts with `prefix`.
std::size_t count_parameters_with_prefix(const ParameterStore& store, const std::string& prefix);

}  // namespace rgbdsod
