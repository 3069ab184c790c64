#include "rgbdsod/train.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "rgbdsod/text_util.hpp"

namespace rgbdsod {

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.iters = {5000, 5000, 5000};
  c.lr = 1e-7;
  c.momentum = 0.9;
  c.weight_decay = 5e-4;
  c.iter_size = 10;
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

void TrainConfig::validate() const {
  for (int n : iters)
    if (n < 1) throw ConfigError("every step needs at least one iteration");
  if (iter_size < 1) throw ConfigError("iter_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (recurrent_finetune_iters < 0) throw ConfigError("recurrent_finetune_iters must be nonnegative");
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "iters=" << iters[0] << ',' << iters[1] << ',' << iters[2] << '\n'
     << "lr=" << lr << '\n'
     << "momentum=" << momentum << '\n'
     << "weight_decay=" << weight_decay << '\n'
     << "iter_size=" << iter_size << '\n'
     << "seed=" << seed << '\n'
     << "loss=" << to_string(loss.variant) << '\n'
     << "share_pretrain=" << (share_pretrain ? "true" : "false") << '\n'
     << "recurrent_finetune_iters=" << recurrent_finetune_iters << '\n';
  return os.str();
}

bool TrainConfig::apply_key_value(const std::string& key, const std::string& value) {
  if (key == "iters") {
    const auto v = parse_size_list(value);
    if (v.size() == 1) {
      iters = {static_cast<int>(v[0]), static_cast<int>(v[0]), static_cast<int>(v[0])};
    } else if (v.size() == 3) {
      iters = {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
    } else {
      throw ConfigError("iters needs 1 or 3 values");
    }
  } else if (key == "lr") {
    lr = parse_double(value);
  } else if (key == "momentum") {
    momentum = parse_double(value);
  } else if (key == "weight_decay") {
    weight_decay = parse_double(value);
  } else if (key == "iter_size") {
    iter_size = static_cast<int>(parse_int(value));
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_size(value));
  } else if (key == "loss") {
    const auto override_f = loss.alphaF_override;
    loss = LossWeights::for_variant(parse_loss_variant(value));
    loss.alphaF_override = override_f;
  } else if (key == "share_pretrain") {
    share_pretrain = parse_bool(value);
  } else if (key == "recurrent_finetune_iters") {
    recurrent_finetune_iters = static_cast<int>(parse_int(value));
  } else {
    return false;
  }
  return true;
}

std::vector<double> TrainResult::totals(int step, int branch) const {
  std::vector<double> out;
  for (const auto& e : log)
    if (e.step == step && e.branch == branch && e.term == "total") out.push_back(e.value);
  return out;
}

std::string loss_log_csv(const std::vector<LossLogEntry>& log) {
  std::ostringstream os;
  os << "step,branch,iteration,term,value\n";
  for (const auto& e : log)
    os << e.step << ',' << e.branch << ',' << e.iteration << ',' << e.term << ',' << format_fixed(e.value, 8) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

SampleOrder::SampleOrder(std::size_t count, std::uint64_t seed) : order_(count), state_(seed) {
  if (count == 0) throw ConfigError("empty sample order");
  for (std::size_t i = 0; i < count; ++i) order_[i] = i;
  reshuffle();
}

void SampleOrder::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = splitmix64(state_) % i;
    std::swap(order_[i - 1], order_[j]);
  }
  pos_ = 0;
}

std::size_t SampleOrder::next() {
  if (pos_ == order_.size()) reshuffle();
  return order_[pos_++];
}

namespace {

void reset_velocity(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) std::fill(p->velocity.begin(), p->velocity.end(), 0.0f);
}

std::string context(int step, int branch, int iteration) {
  std::string s = "step " + std::to_string(step);
  if (branch >= 0) s += " branch " + std::to_string(branch);
  return s + " iteration " + std::to_string(iteration) + ": ";
}

/// Runs `iterations` SGD updates; `pass` performs one forward/backward on
/// the given sample and returns its loss.
template <typename Pass>
void run_step(int step, int branch, int iterations, const TrainConfig& cfg, std::size_t corpus_size,
              std::uint64_t order_seed, const std::vector<Parameter*>& params, std::vector<LossLogEntry>& log,
              Pass&& pass) {
  SampleOrder order(corpus_size, order_seed);
  reset_velocity(params);
  for (Parameter* p : params) p->value.zero_grad();
  for (int it = 1; it <= iterations; ++it) {
    std::map<std::string, double> term_sums;
    std::vector<std::string> term_order;
    double total = 0.0;
    for (int k = 0; k < cfg.iter_size; ++k) {
      LossResult r;
      try {
        r = pass(order.next());
      } catch (const NumericalError& e) {
        throw NumericalError(context(step, branch, it) + e.what());
      }
      total += r.total_value;
      for (const auto& t : r.terms) {
        if (!term_sums.count(t.name)) term_order.push_back(t.name);
        term_sums[t.name] += t.value;
      }
    }
    sgd_step(params, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.iter_size);
    const double inv = 1.0 / cfg.iter_size;
    log.push_back({step, branch, it, "total", total * inv});
    for (const auto& name : term_order) log.push_back({step, branch, it, name, term_sums[name] * inv});
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  return splitmix64(x);
}

}  // namespace

TrainResult train_pipeline(const std::vector<RgbdSample>& corpus, const ModelConfig& model_config,
                           const TrainConfig& cfg, const TrainHooks& hooks) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  cfg.validate();
  model_config.validate();
  const std::size_t size = model_config.backbone.input_size;
  for (const auto& s : corpus) {
    s.validate();
    if (s.rgb.height != size || s.rgb.width != size)
      throw DimensionError("sample " + s.id + " is not at the model input size " + std::to_string(size));
  }

  TrainResult result{SodModel(model_config, cfg.seed), {}};
  SodModel& model = result.model;
  const std::size_t nb = model.branch_count();

  std::vector<Tensor> gts;
  for (const auto& s : corpus) gts.push_back(to_tensor(s.gt));

  auto inputs_for_recipe = [&](const std::string& recipe) {
    std::vector<Tensor> t;
    for (const auto& s : corpus) t.push_back(to_tensor(compose_channels(s, recipe)));
    return t;
  };

  auto branch_pass = [&](std::size_t b, const std::vector<Tensor>& inputs) {
    return [&, b](std::size_t idx) {
      Graph g;
      BackboneFeatures f = model.branch_forward(g, b, inputs[idx], Mode::Train);
      LossResult r = branch_loss(f, b, gts[idx], cfg.loss);
      g.backward(r.total);
      return r;
    };
  };

  // Step 1: RGB-only pretraining.
  if (hooks.on_step_begin) hooks.on_step_begin(1, model.params());
  const bool share = cfg.share_pretrain && nb > 1;
  for (std::size_t b = 0; b < nb; ++b) {
    const std::string recipe = pretrain_recipe(model_config.branches[b].size());
    if (share && b > 0 && model_config.branches[b].size() == model_config.branches[0].size()) {
      const std::string from = SodModel::branch_prefix(0) + "/", to = SodModel::branch_prefix(b) + "/";
      for (Parameter* p : model.branch_parameters(b))
        p->value = model.params().get(from + p->name.substr(to.size())).value;
      for (const auto& name : model.params().state_names()) {
        if (name.compare(0, to.size(), to) == 0)
          model.params().state(name) = model.params().state(from + name.substr(to.size()));
      }
      continue;
    }
    const auto inputs = inputs_for_recipe(recipe);
    run_step(1, static_cast<int>(b), cfg.iters[0], cfg, corpus.size(), mix_seed(cfg.seed, 1, b),
             model.branch_parameters(b), result.log, branch_pass(b, inputs));
  }
  if (hooks.on_step_end) hooks.on_step_end(1, model.params());

  // Step 2: each branch on its own recombined input.
  if (hooks.on_step_begin) hooks.on_step_begin(2, model.params());
  for (std::size_t b = 0; b < nb; ++b) {
    const auto inputs = inputs_for_recipe(model_config.branches[b]);
    run_step(2, static_cast<int>(b), cfg.iters[1], cfg, corpus.size(), mix_seed(cfg.seed, 2, b),
             model.branch_parameters(b), result.log, branch_pass(b, inputs));
  }
  if (hooks.on_step_end) hooks.on_step_end(2, model.params());

  // Step 3: joint fine-tuning.
  if (hooks.on_step_begin) hooks.on_step_begin(3, model.params());
  std::vector<std::vector<Tensor>> joint_inputs;
  for (const auto& s : corpus) joint_inputs.push_back(model.inputs_for(s));
  auto joint_pass = [&](const std::vector<std::vector<Tensor>>& inputs) {
    return [&](std::size_t idx) {
      Graph g;
      FusionOutputs out = model.forward(g, inputs[idx], Mode::Train);
      LossResult r = total_loss(out, gts[idx], cfg.loss);
      g.backward(r.total);
      return r;
    };
  };
  run_step(3, -1, cfg.iters[2], cfg, corpus.size(), mix_seed(cfg.seed, 3, 0), model.params().parameters(),
           result.log, joint_pass(joint_inputs));
  if (hooks.on_step_end) hooks.on_step_end(3, model.params());

  // Optional: fine-tune on saliency-substituted inputs.
  if (cfg.recurrent_finetune_iters > 0) {
    if (hooks.on_step_begin) hooks.on_step_begin(4, model.params());
    std::vector<std::vector<Tensor>> rec_inputs;
    for (const auto& s : corpus) {
      const Image sod = model.predict(s);
      rec_inputs.push_back(model.inputs_for(s, &sod));
    }
    run_step(4, -1, cfg.recurrent_finetune_iters, cfg, corpus.size(), mix_seed(cfg.seed, 4, 0),
             model.params().parameters(), result.log, joint_pass(rec_inputs));
    if (hooks.on_step_end) hooks.on_step_end(4, model.params());
  }
  return result;
}

TrainResult train_baseline(const std::vector<RgbdSample>& corpus, const ModelConfig& model,
                           const TrainConfig& config) {
  return train_pipeline(corpus, model, config);
}

}  // namespace rgbdsod
