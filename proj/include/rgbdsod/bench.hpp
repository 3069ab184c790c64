#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rgbdsod/metrics.hpp"
#include "rgbdsod/train.hpp"

namespace rgbdsod {

struct CorpusSplit {
  std::vector<RgbdSample> train;
  std::vector<RgbdSample> test;
};

/// Shuffled split stratified by the depth-quality label, so both halves
/// keep the corpus mix.
CorpusSplit split_corpus(const std::vector<RgbdSample>& samples, double test_fraction, std::uint64_t seed);

/// Experiment row names:
///   single:<in>            one branch, saliency head ("D" is shorthand for DDD)
///   bi:<a>+<b>             two branches, linear-concatenation head
///   bi-mf:<a>+<b>          two branches, multi-level fusion
///   lc:<a>+<b>+<c>         three branches, linear-concatenation head
///   mf:<a>+<b>+<c>         three branches, multi-level fusion
///   final                  mf:DGB+RDB+RGD scored on the recurrent SOD+ map
/// Inputs are channel recipes or recombination names (DGB, RGBD, ...); a
/// triple name such as GB+RB+RG expands inside lc:/mf:. Suffixes "@<scheme>"
/// and "#<loss variant>" override the fusion scheme and loss.
struct RowSpec {
  std::string name;
  ModelConfig model;
  std::optional<LossVariant> loss;
  bool recurrent = false;
};

RowSpec parse_row(const std::string& row, const BackboneConfig& backbone, FusionScheme default_scheme = FusionScheme::D);

/// Every comparison row of the component table.
const std::vector<std::string>& component_rows();

struct BenchConfig {
  BackboneConfig backbone = BackboneConfig::preset("toy");
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  FusionScheme scheme = FusionScheme::D;
};

/// Trains rows lazily and caches one model per (row, seed).
class Experiment {
 public:
  Experiment(CorpusSplit corpus, BenchConfig config);

  const CorpusSplit& corpus() const { return corpus_; }
  const BenchConfig& config() const { return config_; }

  TrainResult& result(const std::string& row, std::uint64_t seed);
  SodModel& model(const std::string& row, std::uint64_t seed) { return result(row, seed).model; }
  /// Test-split metrics; `subset` replaces the test split when given.
  MetricsReport evaluate(const std::string& row, std::uint64_t seed,
                         const std::vector<RgbdSample>* subset = nullptr);

 private:
  CorpusSplit corpus_;
  BenchConfig config_;
  std::map<std::pair<std::string, std::uint64_t>, std::unique_ptr<TrainResult>> cache_;
};

/// Saliency maps for `samples` (recurrent: the SOD+ map).
std::vector<SaliencyPair> predict_pairs(SodModel& model, const std::vector<RgbdSample>& samples, bool recurrent);

double median(std::vector<double> values);

struct TrioRow {
  std::string row;
  std::vector<double> meanF, maxF, mae;  // one per seed
};

struct ComponentTable {
  std::vector<std::uint64_t> seeds;
  std::vector<TrioRow> rows;

  std::string csv() const;
  std::string table() const;
};

/// Throws ConfigError on an unknown row name before training anything.
ComponentTable run_component_ablation(Experiment& exp, const std::vector<std::string>& rows);

/// MAE before fusion (depth-only and color-only branches), after bi-stream
/// fusion and for the triple-stream model, on the high- and low-quality
/// test subsets.
struct BiasTable {
  static constexpr const char* kRows[4] = {"before:D", "before:C", "bi-fused", "tri"};
  double mae[4][2] = {};  // [row][high, low]
  std::size_t count[2] = {};

  std::string csv() const;
  std::string table() const;
};

/// Keys "D", "C", "bi", "tri"; a missing model is a ConfigError.
BiasTable run_table1(const std::vector<RgbdSample>& test, const std::map<std::string, SodModel*>& models);
/// Medians over the experiment seeds of single:D, single:RGB, bi:RGB+D, mf:DGB+RDB+RGD.
BiasTable run_table1(Experiment& exp);

struct SchemeRow {
  FusionScheme scheme;
  std::size_t params = 0;
  std::size_t fusion_params = 0;
  std::size_t connections = 0;
  double ft_ratio = 0.0;
  TrioRow metrics;
};

struct SchemeTable {
  std::vector<SchemeRow> rows;
  std::string csv() const;
  std::string table() const;
};

/// Parameter accounting of the four schemes without training.
SchemeTable count_schemes(const BackboneConfig& backbone);
SchemeTable run_scheme_ablation(Experiment& exp);

struct LossRow {
  LossVariant variant;
  std::size_t terms = 0;  // active terms in the joint-step log
  TrioRow metrics;
};

struct LossTable {
  std::vector<LossRow> rows;
  std::string csv() const;
  std::string table() const;
};

LossTable run_loss_ablation(Experiment& exp);

struct InferenceRow {
  std::string id;
  double ms = 0.0;
};

struct InferenceReport {
  std::vector<InferenceRow> rows;
  std::vector<std::string> written;
  double mean_ms = 0.0;
  double median_ms = 0.0;

  std::string csv() const;  // id,ms then mean and median rows
};

/// Writes <id>.png (and <id>_plus.png with `recurrent`) as 8-bit maps at
/// each sample's own resolution.
InferenceReport infer(SodModel& model, const std::vector<RgbdSample>& samples, const std::string& out_dir,
                      bool recurrent);

}  // namespace rgbdsod
