#include "rgbdsod/network.hpp"

#include <algorithm>
#include <sstream>

#include "rgbdsod/text_util.hpp"

namespace rgbdsod {

std::string_view to_string(FusionScheme scheme) {
  switch (scheme) {
    case FusionScheme::A:
      return "A";
    case FusionScheme::B:
      return "B";
    case FusionScheme::C:
      return "C";
    case FusionScheme::D:
      return "D";
  }
  return "?";
}

FusionScheme parse_fusion_scheme(std::string_view name) {
  if (name == "A") return FusionScheme::A;
  if (name == "B") return FusionScheme::B;
  if (name == "C") return FusionScheme::C;
  if (name == "D") return FusionScheme::D;
  throw ConfigError("unknown fusion scheme: " + std::string(name));
}

std::string_view to_string(FusionHead head) {
  switch (head) {
    case FusionHead::Saliency:
      return "sal";
    case FusionHead::LinearConcat:
      return "lc";
    case FusionHead::MultiLevel:
      return "mf";
  }
  return "?";
}

FusionHead parse_fusion_head(std::string_view name) {
  if (name == "sal") return FusionHead::Saliency;
  if (name == "lc") return FusionHead::LinearConcat;
  if (name == "mf") return FusionHead::MultiLevel;
  throw ConfigError("unknown fusion head: " + std::string(name));
}

// ---------------------------------------------------------------------------
// FusionGraph

BranchPair BranchPair::alternating(std::size_t first, std::size_t second) {
  return BranchPair{first, second, {first, second, first, second}};
}

FusionGraph FusionGraph::triple(FusionScheme scheme) {
  // The third pair lists DGB first so that it reproduces the worked routing
  // A_1(DGB), A_2(RGD), A_3(DGB), A_4(RGD).
  return FusionGraph{scheme,
                     {BranchPair::alternating(0, 1), BranchPair::alternating(1, 2), BranchPair::alternating(0, 2)}};
}

FusionGraph FusionGraph::bi(FusionScheme scheme) { return FusionGraph{scheme, {BranchPair::alternating(0, 1)}}; }

std::size_t FusionGraph::cross_connections() const {
  std::size_t per_pair = 0;
  switch (scheme) {
    case FusionScheme::A:
      per_pair = 2;
      break;
    case FusionScheme::B:
    case FusionScheme::D:
      per_pair = 4;
      break;
    case FusionScheme::C:
      per_pair = 3 * 8;
      break;
  }
  return per_pair * pairs.size();
}

std::size_t FusionGraph::fusion_side_count() const {
  return (scheme == FusionScheme::A ? 1 : 3) * pairs.size();
}

std::string FusionGraph::serialize() const {
  std::ostringstream os;
  os << "scheme=" << to_string(scheme) << '\n';
  for (const auto& p : pairs) {
    os << "pair=" << p.first << ',' << p.second << " route=" << p.level_source[0] << ',' << p.level_source[1]
       << ',' << p.level_source[2] << ',' << p.level_source[3] << '\n';
  }
  return os.str();
}

namespace {

BranchPair parse_pair(const std::string& value) {
  // "<first>,<second> route=<a>,<b>,<c>,<d>"
  const auto parts = split_whitespace(value);
  if (parts.empty() || parts.size() > 2) throw ConfigError("malformed pair entry: " + value);
  const auto ends = parse_size_list(parts[0]);
  if (ends.size() != 2) throw ConfigError("pair needs two branch indices: " + value);
  BranchPair p = BranchPair::alternating(ends[0], ends[1]);
  if (parts.size() == 2) {
    if (parts[1].rfind("route=", 0) != 0) throw ConfigError("malformed pair route: " + value);
    const auto route = parse_size_list(parts[1].substr(6));
    if (route.size() != 4) throw ConfigError("route needs 4 entries: " + value);
    std::copy(route.begin(), route.end(), p.level_source.begin());
  }
  return p;
}

}  // namespace

FusionGraph FusionGraph::parse(const std::string& text) {
  FusionGraph g;
  g.pairs.clear();
  bool have_scheme = false;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "scheme") {
      g.scheme = parse_fusion_scheme(value);
      have_scheme = true;
    } else if (key == "pair") {
      g.pairs.push_back(parse_pair(value));
    } else {
      throw ConfigError("unknown fusion graph key: " + key);
    }
  }
  if (!have_scheme) throw ConfigError("fusion graph lacks a scheme line");
  return g;
}

void FusionGraph::validate(std::size_t branch_count) const {
  if (pairs.empty()) throw ConfigError("fusion graph has no pairs");
  for (const auto& p : pairs) {
    if (p.first >= branch_count || p.second >= branch_count || p.first == p.second)
      throw ConfigError("fusion pair references invalid branches");
    for (std::size_t s : p.level_source)
      if (s != p.first && s != p.second) throw ConfigError("pair route must use the pair's own branches");
  }
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::single(const std::string& recipe, BackboneConfig backbone) {
  ModelConfig c;
  c.backbone = std::move(backbone);
  c.branches = {recipe};
  c.head = FusionHead::Saliency;
  c.graph = FusionGraph{FusionScheme::D, {}};
  return c;
}

ModelConfig ModelConfig::multi(std::vector<std::string> recipes, FusionHead head, FusionScheme scheme,
                               BackboneConfig backbone) {
  ModelConfig c;
  c.backbone = std::move(backbone);
  c.branches = std::move(recipes);
  c.head = head;
  if (head == FusionHead::MultiLevel) {
    if (c.branches.size() == 3) {
      c.graph = FusionGraph::triple(scheme);
    } else if (c.branches.size() == 2) {
      c.graph = FusionGraph::bi(scheme);
    } else {
      throw ConfigError("multi-level fusion needs 2 or 3 branches");
    }
  } else {
    c.graph = FusionGraph{scheme, {}};
  }
  return c;
}

ModelConfig ModelConfig::trinet(FusionScheme scheme, BackboneConfig backbone) {
  return multi({"DGB", "RDB", "RGD"}, FusionHead::MultiLevel, scheme, std::move(backbone));
}

BackboneConfig ModelConfig::branch_config(std::size_t branch) const {
  BackboneConfig c = backbone;
  c.in_channels = branches.at(branch).size();
  return c;
}

void ModelConfig::validate() const {
  if (branches.empty()) throw ConfigError("model needs at least one branch");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (branches[i].empty()) throw ConfigError("empty branch recipe");
    branch_config(i).validate();
  }
  if (head == FusionHead::Saliency && branches.size() != 1)
    throw ConfigError("the saliency head serves exactly one branch");
  if (head != FusionHead::Saliency && branches.size() < 2) throw ConfigError("fusion heads need 2+ branches");
  if (head == FusionHead::MultiLevel) graph.validate(branches.size());
  if (inference_mode == Mode::Train) throw ConfigError("inference cannot update batch-norm statistics");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "branches=" << join(branches, ",") << '\n';
  os << "head=" << to_string(head) << '\n';
  os << "block_channels=" << join_sizes(backbone.block_channels) << '\n';
  os << "convs_per_block=" << join_sizes(backbone.convs_per_block) << '\n';
  os << "skip_channels=" << backbone.skip_channels << '\n';
  os << "input_size=" << backbone.input_size << '\n';
  os << "scale=" << backbone.scale << '\n';
  os << "bn_stats=" << (inference_mode == Mode::Eval ? "running" : "sample") << '\n';
  os << graph.serialize();
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::ostringstream graph_text;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "branches") {
      c.branches = split(value, ',');
    } else if (key == "head") {
      c.head = parse_fusion_head(value);
    } else if (key == "block_channels") {
      c.backbone.block_channels = parse_size_list(value);
    } else if (key == "convs_per_block") {
      c.backbone.convs_per_block = parse_size_list(value);
    } else if (key == "skip_channels") {
      c.backbone.skip_channels = parse_size(value);
    } else if (key == "input_size") {
      c.backbone.input_size = parse_size(value);
    } else if (key == "scale") {
      c.backbone.scale = value;
    } else if (key == "bn_stats") {
      if (value != "running" && value != "sample") throw ConfigError("bn_stats must be running or sample");
      c.inference_mode = value == "running" ? Mode::Eval : Mode::Infer;
    } else if (key == "scheme" || key == "pair") {
      graph_text << key << '=' << value << '\n';
    } else {
      throw ConfigError("unknown model config key: " + key);
    }
  }
  c.graph = FusionGraph::parse(graph_text.str());
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Pair fusion

namespace {

std::string node_name(const std::string& prefix, std::size_t k) { return prefix + "/node" + std::to_string(k); }
std::string side_name(const std::string& prefix, std::size_t k) { return prefix + "/side" + std::to_string(k); }

Var fusion_node(Graph& g, ParameterStore& store, const std::string& name, Var x) {
  return relu(apply_conv(g, store, name, x));
}

}  // namespace

void add_pair_fusion(ParameterStore& store, const std::string& prefix, FusionScheme scheme, std::size_t width,
                     Initializer& init) {
  const std::size_t w = width;
  switch (scheme) {
    case FusionScheme::A:
      add_conv(store, node_name(prefix, 1), 2 * w, w, 3, init);
      add_conv(store, side_name(prefix, 1), w, 1, 1, init);
      return;
    case FusionScheme::B:
    case FusionScheme::D:
      for (std::size_t k = 1; k <= 3; ++k) {
        add_conv(store, node_name(prefix, k), 2 * w, w, 3, init);
        add_conv(store, side_name(prefix, k), w, 1, 1, init);
      }
      if (scheme == FusionScheme::D) add_conv(store, prefix + "/out", w, w, 3, init);
      return;
    case FusionScheme::C:
      for (std::size_t k = 1; k <= 3; ++k) {
        add_conv(store, node_name(prefix, k), (k == 1 ? 8 : 9) * w, w, 3, init);
        add_conv(store, side_name(prefix, k), w, 1, 1, init);
      }
      add_conv(store, prefix + "/out", w, w, 3, init);
      return;
  }
}

PairFusion fuse_pair(Graph& g, ParameterStore& store, const std::string& prefix, FusionScheme scheme,
                     const BackboneFeatures& x, const BackboneFeatures& y, const std::array<int, 4>& routing,
                     std::size_t input_size) {
  if (x.A.size() != 4 || y.A.size() != 4) throw DimensionError("fuse_pair needs four A features per branch");
  for (std::size_t i = 0; i < 4; ++i) {
    if (x.A[i].shape() != y.A[i].shape())
      throw DimensionError("fuse_pair: branch features disagree at A_" + std::to_string(i + 1));
  }
  auto src = [&](std::size_t level) -> Var { return routing[level] == 0 ? x.A[level] : y.A[level]; };
  auto side = [&](std::size_t k, Var f) {
    return upsample_to(apply_conv(g, store, side_name(prefix, k), f), input_size, input_size);
  };

  PairFusion out;
  switch (scheme) {
    case FusionScheme::A: {
      Var f = fusion_node(g, store, node_name(prefix, 1), concat(x.A[3], y.A[3]));
      out.F_k = {f};
      out.F_r = f;
      out.sides = {side(1, f)};
      return out;
    }
    case FusionScheme::B:
    case FusionScheme::D: {
      Var f = src(0);
      for (std::size_t k = 1; k <= 3; ++k) {
        Var next = src(k);
        Var prev = upsample_to(f, next.shape()[2], next.shape()[3]);
        f = fusion_node(g, store, node_name(prefix, k), concat(prev, next));
        out.F_k.push_back(f);
        out.sides.push_back(side(k, f));
      }
      out.F_r = scheme == FusionScheme::D ? fusion_node(g, store, prefix + "/out", f) : f;
      return out;
    }
    case FusionScheme::C: {
      std::optional<Var> f;
      for (std::size_t k = 1; k <= 3; ++k) {
        const std::size_t h = x.A[k].shape()[2], w = x.A[k].shape()[3];
        std::vector<Var> parts;
        if (f) parts.push_back(upsample_to(*f, h, w));
        for (std::size_t i = 0; i < 4; ++i) {
          parts.push_back(resample_to(x.A[i], h, w));
          parts.push_back(resample_to(y.A[i], h, w));
        }
        f = fusion_node(g, store, node_name(prefix, k), concat(parts));
        out.F_k.push_back(*f);
        out.sides.push_back(side(k, *f));
      }
      out.F_r = fusion_node(g, store, prefix + "/out", *f);
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SodModel

namespace {

std::string pair_prefix(std::size_t r) { return "fusion/pair" + std::to_string(r + 1); }

}  // namespace

SodModel::SodModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

SodModel::SodModel(ModelConfig config, ParameterStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  // Every expected parameter must exist with the right shape.
  SodModel reference(config_, 0);
  for (const Parameter* p : reference.params().parameters()) {
    const Parameter* have = params_.find(p->name);
    if (!have || have->value.shape() != p->value.shape())
      throw ConfigError("parameters do not match model config at " + p->name);
  }
  if (params_.parameters().size() != reference.params().parameters().size())
    throw ConfigError("parameter set has entries the model config does not define");
  for (const auto& name : reference.params().state_names())
    if (!params_.find_state(name)) throw ConfigError("missing batch-norm statistics " + name);
}

void SodModel::build(std::uint64_t seed) {
  for (std::size_t b = 0; b < branch_count(); ++b) {
    Initializer init(seed * 1000003ULL + b * 7919ULL + 17ULL);
    add_backbone(params_, branch_prefix(b), config_.branch_config(b), branch_has_sal_head(), init);
  }
  Initializer init(seed * 1000003ULL + 999983ULL);
  const std::size_t w = config_.backbone.skip_channels;
  switch (config_.head) {
    case FusionHead::Saliency:
      break;
    case FusionHead::LinearConcat:
      add_conv(params_, "fusion/lc_head", w * branch_count(), 1, 3, init);
      break;
    case FusionHead::MultiLevel: {
      for (std::size_t r = 0; r < config_.graph.pairs.size(); ++r)
        add_pair_fusion(params_, pair_prefix(r), config_.graph.scheme, w, init);
      const std::size_t k = config_.graph.scheme == FusionScheme::B ? 1 : 3;
      add_conv(params_, "fusion/sod", w * config_.graph.pairs.size(), 1, k, init);
      break;
    }
  }
}

BackboneFeatures SodModel::branch_forward(Graph& g, std::size_t branch, const Tensor& input, Mode mode) {
  Var x = g.constant(input);
  return backbone_forward(g, x, config_.branch_config(branch), params_, branch_prefix(branch), mode,
                          branch_has_sal_head());
}

FusionOutputs SodModel::forward(Graph& g, const std::vector<Tensor>& inputs, Mode mode) {
  if (inputs.size() != branch_count())
    throw DimensionError("model expects " + std::to_string(branch_count()) + " inputs, got " +
                         std::to_string(inputs.size()));
  for (const auto& t : inputs) {
    if (t.rank() != 4 || t.dim(2) != inputs.front().dim(2) || t.dim(3) != inputs.front().dim(3))
      throw DimensionError("branch inputs must share one spatial size");
  }
  FusionOutputs out;
  const std::size_t size = config_.backbone.input_size;
  for (std::size_t b = 0; b < branch_count(); ++b) {
    out.branches.push_back(branch_forward(g, b, inputs[b], mode));
    for (std::size_t i = 0; i < 4; ++i) {
      out.side_logits.push_back({"A" + std::to_string(i + 1) + "_" + std::to_string(b + 1), LossGroup::Backbone,
                                 i + 1, b + 1, out.branches.back().side_logits[i]});
    }
  }
  out.expected_backbone_sides = 4 * branch_count();

  switch (config_.head) {
    case FusionHead::Saliency:
      out.sod = *out.branches.front().sal;
      break;
    case FusionHead::LinearConcat: {
      std::vector<Var> parts;
      for (const auto& f : out.branches) parts.push_back(f.A[3]);
      out.sod = apply_conv(g, params_, "fusion/lc_head", concat(parts));
      break;
    }
    case FusionHead::MultiLevel: {
      std::vector<Var> fused;
      for (std::size_t r = 0; r < config_.graph.pairs.size(); ++r) {
        const BranchPair& p = config_.graph.pairs[r];
        std::array<int, 4> routing{};
        for (std::size_t i = 0; i < 4; ++i) routing[i] = p.level_source[i] == p.first ? 0 : 1;
        PairFusion pf = fuse_pair(g, params_, pair_prefix(r), config_.graph.scheme, out.branches[p.first],
                                  out.branches[p.second], routing, size);
        for (std::size_t k = 0; k < pf.sides.size(); ++k) {
          out.side_logits.push_back({"F" + std::to_string(k + 1) + "_" + std::to_string(r + 1), LossGroup::Fusion,
                                     k + 1, r + 1, pf.sides[k]});
        }
        out.F_kr.push_back(pf.F_k);
        out.F_r.push_back(pf.F_r);
        fused.push_back(pf.F_r);
      }
      out.expected_fusion_sides = config_.graph.fusion_side_count();
      out.sod = apply_conv(g, params_, "fusion/sod", concat(fused));
      break;
    }
  }
  return out;
}

std::vector<Parameter*> SodModel::branch_parameters(std::size_t branch) {
  const std::string prefix = branch_prefix(branch) + "/";
  std::vector<Parameter*> out;
  for (Parameter* p : params_.parameters())
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p);
  return out;
}

std::vector<Tensor> SodModel::inputs_for(const RgbdSample& sample, const Image* saliency) const {
  std::vector<Tensor> out;
  for (const auto& recipe : config_.branches) {
    const std::string r = saliency ? substitute_saliency(recipe) : recipe;
    out.push_back(to_tensor(compose_channels(sample, r, saliency)));
  }
  return out;
}

Image SodModel::predict(const RgbdSample& sample, const Image* saliency) {
  Graph g;
  g.set_grad_enabled(false);
  FusionOutputs out = forward(g, inputs_for(sample, saliency), config_.inference_mode);
  return from_tensor(sigmoid(out.sod.value()));
}

RecurrentResult SodModel::recurrent_pass(const RgbdSample& sample) {
  RecurrentResult r;
  r.sod = predict(sample);
  r.sod_plus = predict(sample, &r.sod);
  return r;
}

std::size_t SodModel::backbone_parameter_count() const { return count_parameters_with_prefix(params_, "branch"); }

std::size_t SodModel::fusion_parameter_count() const { return count_parameters_with_prefix(params_, "fusion/"); }

}  // namespace rgbdsod
