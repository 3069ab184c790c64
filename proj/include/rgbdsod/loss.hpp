#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rgbdsod/network.hpp"

namespace rgbdsod {

/// Which loss groups are active: S (final map), A (backbone sides),
/// F (fusion sides). SFA_Uniform is S+F+A with every weight set to 1.
enum class LossVariant { S, SA, SF, SFA, SFA_Uniform };

std::string_view to_string(LossVariant v);
LossVariant parse_loss_variant(std::string_view name);
const std::vector<LossVariant>& all_loss_variants();

struct LossWeights {
  double alpha0 = 1.0;
  std::array<double, 4> alphaA{0.6, 0.7, 0.8, 0.9};  // per level, shared by every branch
  double alphaF = 0.9;
  /// Optional per-node fusion weights, indexed [k-1][r-1].
  std::optional<std::array<std::array<double, 3>, 3>> alphaF_override;
  LossVariant variant = LossVariant::SFA;

  static LossWeights for_variant(LossVariant variant);

  bool uses(LossGroup group) const;
  /// Effective weight of a supervision point under the active variant.
  double weight(LossGroup group, std::size_t level, std::size_t index) const;
  LossWeights scaled(double factor) const;
};

struct LossTerm {
  std::string name;
  double weight = 0.0;
  double value = 0.0;
};

struct LossResult {
  Var total;
  double total_value = 0.0;
  std::vector<LossTerm> terms;  // active terms only, final map first
};

/// Weighted sum of per-map sigmoid cross-entropies against `gt`
/// ([1,1,H,W] at input resolution). Throws ConfigError when an active group
/// has fewer supervision points than the model declares, and NumericalError
/// naming the term when a value is not finite.
LossResult total_loss(const FusionOutputs& outputs, const Tensor& gt, const LossWeights& weights);

/// Loss over one branch alone (pretraining / per-branch fine-tuning): the
/// four side maps plus the deepest-flow map when the branch has that head.
LossResult branch_loss(const BackboneFeatures& features, std::size_t branch_index, const Tensor& gt,
                       const LossWeights& weights);

}  // namespace rgbdsod
