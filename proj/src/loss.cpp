#include "rgbdsod/loss.hpp"

#include <cmath>
#include <optional>

namespace rgbdsod {

std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::S:
      return "S";
    case LossVariant::SA:
      return "S+A";
    case LossVariant::SF:
      return "S+F";
    case LossVariant::SFA:
      return "S+F+A";
    case LossVariant::SFA_Uniform:
      return "S+F+A_uniform";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view name) {
  for (LossVariant v : all_loss_variants())
    if (to_string(v) == name) return v;
  throw ConfigError("unknown loss variant: " + std::string(name));
}

const std::vector<LossVariant>& all_loss_variants() {
  static const std::vector<LossVariant> v{LossVariant::S, LossVariant::SA, LossVariant::SF, LossVariant::SFA,
                                          LossVariant::SFA_Uniform};
  return v;
}

LossWeights LossWeights::for_variant(LossVariant variant) {
  LossWeights w;
  w.variant = variant;
  if (variant == LossVariant::SFA_Uniform) {
    w.alpha0 = 1.0;
    w.alphaA = {1.0, 1.0, 1.0, 1.0};
    w.alphaF = 1.0;
  }
  return w;
}

bool LossWeights::uses(LossGroup group) const {
  switch (group) {
    case LossGroup::Final:
      return true;
    case LossGroup::Backbone:
      return variant == LossVariant::SA || variant == LossVariant::SFA || variant == LossVariant::SFA_Uniform;
    case LossGroup::Fusion:
      return variant == LossVariant::SF || variant == LossVariant::SFA || variant == LossVariant::SFA_Uniform;
  }
  return false;
}

double LossWeights::weight(LossGroup group, std::size_t level, std::size_t index) const {
  if (!uses(group)) return 0.0;
  switch (group) {
    case LossGroup::Final:
      return alpha0;
    case LossGroup::Backbone:
      if (level < 1 || level > 4) throw ConfigError("backbone side level out of range");
      return alphaA[level - 1];
    case LossGroup::Fusion:
      if (alphaF_override && level >= 1 && level <= 3 && index >= 1 && index <= 3)
        return (*alphaF_override)[level - 1][index - 1];
      return alphaF;
  }
  return 0.0;
}

LossWeights LossWeights::scaled(double factor) const {
  LossWeights w = *this;
  w.alpha0 *= factor;
  for (double& a : w.alphaA) a *= factor;
  w.alphaF *= factor;
  if (w.alphaF_override)
    for (auto& row : *w.alphaF_override)
      for (double& a : row) a *= factor;
  return w;
}

namespace {

struct Accumulator {
  std::vector<Var> vars;
  std::vector<double> weights;
  LossResult result;

  void add(const std::string& name, double weight, Var logits, const Tensor& gt) {
    std::optional<Var> l;
    try {
      l = sigmoid_bce(logits, gt);
    } catch (const NumericalError&) {
      throw NumericalError("loss term " + name + " is not finite");
    }
    const double v = l->value()[0];
    if (!std::isfinite(v)) throw NumericalError("loss term " + name + " is not finite");
    vars.push_back(*l);
    weights.push_back(weight);
    result.terms.push_back({name, weight, v});
  }

  LossResult finish() {
    result.total = weighted_sum(vars, weights);
    result.total_value = result.total.value()[0];
    if (!std::isfinite(result.total_value)) throw NumericalError("total loss is not finite");
    return std::move(result);
  }
};

}  // namespace

LossResult total_loss(const FusionOutputs& outputs, const Tensor& gt, const LossWeights& weights) {
  std::size_t n_backbone = 0, n_fusion = 0;
  for (const auto& s : outputs.side_logits) (s.group == LossGroup::Backbone ? n_backbone : n_fusion)++;
  if (weights.uses(LossGroup::Backbone) && n_backbone != outputs.expected_backbone_sides)
    throw ConfigError("backbone side logits missing: have " + std::to_string(n_backbone) + ", expected " +
                      std::to_string(outputs.expected_backbone_sides));
  if (weights.uses(LossGroup::Fusion) && n_fusion != outputs.expected_fusion_sides)
    throw ConfigError("fusion side logits missing: have " + std::to_string(n_fusion) + ", expected " +
                      std::to_string(outputs.expected_fusion_sides));

  Accumulator acc;
  acc.add("SOD", weights.weight(LossGroup::Final, 0, 0), outputs.sod, gt);
  for (const auto& s : outputs.side_logits) {
    if (!weights.uses(s.group)) continue;
    acc.add(s.name, weights.weight(s.group, s.level, s.index), s.logits, gt);
  }
  return acc.finish();
}

LossResult branch_loss(const BackboneFeatures& features, std::size_t branch_index, const Tensor& gt,
                       const LossWeights& weights) {
  Accumulator acc;
  if (features.sal) acc.add("SOD", weights.alpha0, *features.sal, gt);
  for (std::size_t i = 0; i < features.side_logits.size(); ++i) {
    acc.add("A" + std::to_string(i + 1) + "_" + std::to_string(branch_index + 1), weights.alphaA[i],
            features.side_logits[i], gt);
  }
  return acc.finish();
}

}  // namespace rgbdsod
