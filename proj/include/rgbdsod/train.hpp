#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rgbdsod/loss.hpp"
#include "rgbdsod/network.hpp"

namespace rgbdsod {

/// Three-step protocol: RGB-only pretraining of each branch, per-branch
/// fine-tuning on its recombined input, joint fine-tuning with the full loss.
struct TrainConfig {
  std::array<int, 3> iters{200, 200, 200};
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iter_size = 10;
  std::uint64_t seed = 7;
  LossWeights loss;
  /// Pretrain one branch and copy it into the others (same input width only).
  bool share_pretrain = false;
  /// Optional fourth step: joint fine-tuning on saliency-substituted inputs.
  int recurrent_finetune_iters = 0;

  /// 5000 iterations per step, lr 1e-7, decay 5e-4, momentum 0.9, iter_size 10.
  static TrainConfig paper();
  /// Desk preset: 200 iterations per step, lr 1e-3 for mean-reduced losses.
  static TrainConfig desk();
  void validate() const;

  /// Flat key=value text (see apply_key_value for the keys).
  std::string serialize() const;
  /// Applies one config key; returns false for unknown keys.
  bool apply_key_value(const std::string& key, const std::string& value);
};

struct LossLogEntry {
  int step = 0;         // 1..3, 4 for recurrent fine-tuning
  int branch = -1;      // branch index for steps 1-2, -1 for joint steps
  int iteration = 0;    // 1-based within the step
  std::string term;     // loss term name or "total"
  double value = 0.0;
};

using StepHook = std::function<void(int step, const ParameterStore& params)>;

struct TrainHooks {
  StepHook on_step_begin;
  StepHook on_step_end;
};

struct TrainResult {
  SodModel model;
  std::vector<LossLogEntry> log;

  /// Per-iteration totals for one step (and branch, for steps 1-2).
  std::vector<double> totals(int step, int branch = -1) const;
};

/// Trains a model on `corpus` (all samples at the model's input size).
/// Throws ConfigError on an empty corpus and NumericalError naming the
/// offending term on a non-finite loss.
TrainResult train_pipeline(const std::vector<RgbdSample>& corpus, const ModelConfig& model,
                           const TrainConfig& config, const TrainHooks& hooks = {});

/// Single- or bi-stream comparison models go through the same protocol.
TrainResult train_baseline(const std::vector<RgbdSample>& corpus, const ModelConfig& model,
                           const TrainConfig& config);

/// CSV with header "step,branch,iteration,term,value".
std::string loss_log_csv(const std::vector<LossLogEntry>& log);

/// Deterministic per-epoch shuffled index stream.
class SampleOrder {
 public:
  SampleOrder(std::size_t count, std::uint64_t seed);
  std::size_t next();

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t state_;
};

}  // namespace rgbdsod
