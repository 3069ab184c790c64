#include <gtest/gtest.h>

#include <filesystem>

#include "rgbdsod/bench.hpp"
#include "rgbdsod/io.hpp"
#include "rgbdsod/synth.hpp"

using namespace rgbdsod;
namespace fs = std::filesystem;

namespace {

BackboneConfig small_backbone() {
  BackboneConfig bb;
  bb.input_size = 16;
  return bb;
}

CorpusSplit small_split() {
  SyntheticSpec spec;
  spec.n_images = 10;
  spec.size = 16;
  return split_corpus(generate_synthetic(spec), 0.3, 5);
}

BenchConfig quick_bench() {
  BenchConfig bc;
  bc.backbone = small_backbone();
  bc.train.iters = {2, 2, 2};
  bc.train.iter_size = 1;
  bc.train.lr = 1e-2;
  bc.seeds = {1, 2};
  return bc;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(SplitTest, StratifiedAndDisjoint) {
  SyntheticSpec spec;
  spec.n_images = 20;
  const auto samples = generate_synthetic(spec);
  const CorpusSplit s = split_corpus(samples, 0.3, 5);
  EXPECT_EQ(s.train.size() + s.test.size(), 20u);
  std::size_t high = 0;
  for (const auto& x : s.test) high += *x.depth_high_quality;
  EXPECT_EQ(s.test.size(), 6u);
  EXPECT_EQ(high, 3u);
  for (const auto& a : s.test)
    for (const auto& b : s.train) EXPECT_NE(a.id, b.id);
  EXPECT_EQ(split_corpus(samples, 0.3, 5).test[0].id, s.test[0].id);
  EXPECT_THROW(split_corpus(samples, 1.0, 5), ConfigError);
}

TEST(RowTest, ParsesEveryComponentRow) {
  for (const auto& row : component_rows()) EXPECT_NO_THROW(parse_row(row, small_backbone())) << row;
  const RowSpec d = parse_row("single:D", small_backbone());
  EXPECT_EQ(d.model.branches, (std::vector<std::string>{"DDD"}));
  const RowSpec gb = parse_row("mf:GB+RB+RG", small_backbone());
  EXPECT_EQ(gb.model.branches, (std::vector<std::string>{"GB", "RB", "RG"}));
  const RowSpec bi = parse_row("bi:RGB+D", small_backbone());
  EXPECT_EQ(bi.model.head, FusionHead::LinearConcat);
  EXPECT_EQ(bi.model.branches, (std::vector<std::string>{"RGB", "DDD"}));
  const RowSpec fin = parse_row("final", small_backbone());
  EXPECT_TRUE(fin.recurrent);
  EXPECT_EQ(fin.model.head, FusionHead::MultiLevel);
  const RowSpec s = parse_row("mf:DGB+RDB+RGD@B#S+A", small_backbone());
  EXPECT_EQ(s.model.graph.scheme, FusionScheme::B);
  EXPECT_EQ(s.loss, LossVariant::SA);
  EXPECT_THROW(parse_row("quad:RGB", small_backbone()), ConfigError);
  EXPECT_THROW(parse_row("bi:RGB", small_backbone()), ConfigError);
  EXPECT_THROW(parse_row("single:XYZ", small_backbone()), ConfigError);
}

TEST(BenchTest, Median) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), ConfigError);
}

TEST(BenchTest, ComponentTableShape) {
  Experiment exp(small_split(), quick_bench());
  EXPECT_THROW(run_component_ablation(exp, {"single:RGB", "nope"}), ConfigError);
  const ComponentTable t = run_component_ablation(exp, {"single:RGB", "lc:DGB+RDB+RGD", "final"});
  ASSERT_EQ(t.rows.size(), 3u);
  for (const TrioRow& r : t.rows) {
    EXPECT_EQ(r.mae.size(), 2u);
    for (double v : r.mae) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  const std::string csv = t.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "row,seed,meanF,maxF,MAE");
  EXPECT_EQ(lines(csv), 1u + 3u * 3u);
  EXPECT_NE(csv.find("final,median,"), std::string::npos);
  EXPECT_FALSE(t.table().empty());
}

TEST(BenchTest, CachedRowsAreReused) {
  Experiment exp(small_split(), quick_bench());
  TrainResult& a = exp.result("single:RGB", 1);
  EXPECT_EQ(&a, &exp.result("single:RGB", 1));
  EXPECT_NE(&a, &exp.result("single:RGB", 2));
}

TEST(BenchTest, BiasTableShape) {
  Experiment exp(small_split(), quick_bench());
  const BiasTable t = run_table1(exp);
  EXPECT_EQ(t.count[0] + t.count[1], exp.corpus().test.size());
  const std::string csv = t.csv();
  EXPECT_EQ(lines(csv), 6u);
  EXPECT_NE(csv.find("before:D,"), std::string::npos);
  EXPECT_NE(csv.find("tri,"), std::string::npos);
  EXPECT_THROW(run_table1(exp.corpus().test, {}), ConfigError);
}

TEST(BenchTest, SchemeCountsWithoutTraining) {
  const SchemeTable t = count_schemes(BackboneConfig::preset("toy"));
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[3].connections, 12u);
  EXPECT_LT(t.rows[0].params, t.rows[1].params);
  EXPECT_LT(t.rows[1].params, t.rows[3].params);
  EXPECT_LT(t.rows[3].params, t.rows[2].params);
  for (const SchemeRow& r : t.rows) EXPECT_TRUE(r.metrics.mae.empty());
  EXPECT_EQ(lines(t.csv()), 5u);
}

TEST(BenchTest, LossTableCountsTerms) {
  BenchConfig bc = quick_bench();
  bc.seeds = {1};
  Experiment exp(small_split(), bc);
  const LossTable t = run_loss_ablation(exp);
  std::map<LossVariant, std::size_t> terms;
  for (const LossRow& r : t.rows) terms[r.variant] = r.terms;
  EXPECT_EQ(terms[LossVariant::S], 1u);
  EXPECT_EQ(terms[LossVariant::SA], 13u);
  EXPECT_EQ(terms[LossVariant::SF], 10u);
  EXPECT_EQ(terms[LossVariant::SFA], 22u);
}

TEST(BenchTest, InferWritesMapsAtSampleResolution) {
  const fs::path dir = fs::temp_directory_path() / "rgbdsod_bench_infer";
  fs::remove_all(dir);
  SodModel model(ModelConfig::trinet(FusionScheme::D, small_backbone()), 2);
  SyntheticSpec spec;
  spec.n_images = 3;
  spec.size = 20;
  const auto samples = generate_synthetic(spec);
  const InferenceReport rep = infer(model, samples, dir.string(), true);
  EXPECT_EQ(rep.written.size(), 6u);
  EXPECT_EQ(rep.rows.size(), 3u);
  const Image map = read_png((dir / "syn0001_plus.png").string());
  EXPECT_EQ(map.height, 20u);
  EXPECT_EQ(map.channels, 1u);
  EXPECT_EQ(lines(rep.csv()), 6u);
}

TEST(RecurrentTest, SodPlusIsAValidMap) {
  SodModel model(ModelConfig::trinet(FusionScheme::D, small_backbone()), 3);
  SyntheticSpec spec;
  spec.n_images = 2;
  spec.size = 16;
  for (const RgbdSample& s : generate_synthetic(spec)) {
    const RecurrentResult r = model.recurrent_pass(s);
    for (float v : r.sod_plus.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    // Substituting the depth map itself reproduces the first pass.
    EXPECT_EQ(model.predict(s, &s.depth).data, model.predict(s).data);
  }
}
