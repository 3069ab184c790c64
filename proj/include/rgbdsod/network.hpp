#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rgbdsod/backbone.hpp"
#include "rgbdsod/image.hpp"
#include "rgbdsod/recombine.hpp"

namespace rgbdsod {

/// Cross-branch fusion layouts.
///   A  single-level: each pair fuses only its two A_4 features.
///   B  multi-scale chain per pair, final map from a 1x1 projection of the
///      concatenated pair outputs.
///   C  dense: every node of the chain sees all eight A_i of its pair.
///   D  sparse alternating chain (default): A_1, A_3 from the first branch
///      of a pair, A_2, A_4 from the second.
enum class FusionScheme { A, B, C, D };

std::string_view to_string(FusionScheme scheme);
FusionScheme parse_fusion_scheme(std::string_view name);

struct BranchPair {
  std::size_t first = 0;
  std::size_t second = 0;
  /// Branch index supplying A_1..A_4 to the chain.
  std::array<std::size_t, 4> level_source{};

  static BranchPair alternating(std::size_t first, std::size_t second);
};

/// Declarative description of which branch feature feeds which fused node.
struct FusionGraph {
  FusionScheme scheme = FusionScheme::D;
  std::vector<BranchPair> pairs;

  /// Three branches, pairs {0,1}, {1,2}, {0,2} with alternating routing.
  static FusionGraph triple(FusionScheme scheme = FusionScheme::D);
  /// Two branches, one pair.
  static FusionGraph bi(FusionScheme scheme = FusionScheme::D);

  /// Number of A_i -> fusion-node edges.
  std::size_t cross_connections() const;
  /// Fusion-node supervision points (F_{k,r} side outputs).
  std::size_t fusion_side_count() const;

  /// "scheme=D" followed by one "pair=<first>,<second> route=<s1>,<s2>,<s3>,<s4>" line per pair.
  std::string serialize() const;
  static FusionGraph parse(const std::string& text);
  void validate(std::size_t branch_count) const;
};

enum class FusionHead {
  Saliency,      // single branch, deepest-flow head
  LinearConcat,  // concat of every branch's A_4, one 3x3 conv
  MultiLevel,    // FusionGraph chain per pair
};

std::string_view to_string(FusionHead head);
FusionHead parse_fusion_head(std::string_view name);

struct ModelConfig {
  BackboneConfig backbone;             // in_channels is taken per branch from its recipe
  std::vector<std::string> branches;   // channel recipes, e.g. {"DGB","RDB","RGD"}
  FusionHead head = FusionHead::Saliency;
  FusionGraph graph;
  /// Normalization statistics used by predict: per-sample (Mode::Infer) or
  /// running averages (Mode::Eval).
  Mode inference_mode = Mode::Infer;

  static ModelConfig single(const std::string& recipe, BackboneConfig backbone = {});
  static ModelConfig multi(std::vector<std::string> recipes, FusionHead head,
                           FusionScheme scheme = FusionScheme::D, BackboneConfig backbone = {});
  /// The triple-stream network over {DGB, RDB, RGD}.
  static ModelConfig trinet(FusionScheme scheme = FusionScheme::D, BackboneConfig backbone = {});

  BackboneConfig branch_config(std::size_t branch) const;
  void validate() const;

  /// Flat key=value text; round-trips through parse.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
};

enum class LossGroup { Final, Backbone, Fusion };

struct SideLogit {
  std::string name;  // "A<i>_<j>" for level i of branch j, "F<k>_<r>" for fusion node k of pair r
  LossGroup group = LossGroup::Backbone;
  std::size_t level = 0;  // 1-based i or k
  std::size_t index = 0;  // 1-based branch j or pair r
  Var logits;
};

struct FusionOutputs {
  std::vector<BackboneFeatures> branches;
  std::vector<std::vector<Var>> F_kr;  // [pair][level]
  std::vector<Var> F_r;
  Var sod;                             // final logits at input resolution
  std::vector<SideLogit> side_logits;  // backbone sides then fusion sides
  std::size_t expected_backbone_sides = 0;
  std::size_t expected_fusion_sides = 0;
};

struct PairFusion {
  std::vector<Var> F_k;     // chain nodes F_{1,r}..F_{K,r}
  Var F_r;                  // fused pair feature
  std::vector<Var> sides;   // one logit per F_{k,r}, input resolution
};

/// Registers the parameters of one pair's fusion chain.
void add_pair_fusion(ParameterStore& store, const std::string& prefix, FusionScheme scheme, std::size_t width,
                     Initializer& init);

/// Fuses two branches. `routing[i]` is 0 when A_{i+1} comes from x, 1 when from y.
PairFusion fuse_pair(Graph& g, ParameterStore& store, const std::string& prefix, FusionScheme scheme,
                     const BackboneFeatures& x, const BackboneFeatures& y, const std::array<int, 4>& routing,
                     std::size_t input_size);

struct RecurrentResult {
  Image sod;
  Image sod_plus;
};

/// A single-, bi- or triple-stream saliency network.
class SodModel {
 public:
  SodModel(ModelConfig config, std::uint64_t seed);
  SodModel(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::size_t branch_count() const { return config_.branches.size(); }
  static std::string branch_prefix(std::size_t branch) { return "branch" + std::to_string(branch); }

  /// One input tensor per branch.
  FusionOutputs forward(Graph& g, const std::vector<Tensor>& inputs, Mode mode);
  BackboneFeatures branch_forward(Graph& g, std::size_t branch, const Tensor& input, Mode mode);
  bool branch_has_sal_head() const { return config_.head == FusionHead::Saliency; }
  std::vector<Parameter*> branch_parameters(std::size_t branch);

  /// Branch inputs composed from the sample. With a saliency map, every
  /// D in the recipes is replaced by S.
  std::vector<Tensor> inputs_for(const RgbdSample& sample, const Image* saliency = nullptr) const;

  /// Sigmoid saliency map, normalized per config.inference_mode.
  Image predict(const RgbdSample& sample, const Image* saliency = nullptr);
  /// First pass on the recombined inputs, second pass with the first-pass
  /// map substituted for depth, same parameters.
  RecurrentResult recurrent_pass(const RgbdSample& sample);

  ParameterCount parameter_count() const { return count_parameters(params_); }
  std::size_t backbone_parameter_count() const;
  std::size_t fusion_parameter_count() const;

 private:
  void build(std::uint64_t seed);

  ModelConfig config_;
  ParameterStore params_;
};

}  // namespace rgbdsod
