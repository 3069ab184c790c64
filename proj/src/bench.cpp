#include "rgbdsod/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "rgbdsod/io.hpp"
#include "rgbdsod/text_util.hpp"

namespace rgbdsod {

namespace fs = std::filesystem;

CorpusSplit split_corpus(const std::vector<RgbdSample>& samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0,1)");
  std::vector<std::size_t> groups[3];  // high, low, unlabeled
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& q = samples[i].depth_high_quality;
    groups[q ? (*q ? 0 : 1) : 2].push_back(i);
  }
  std::vector<bool> is_test(samples.size(), false);
  for (std::size_t g = 0; g < 3; ++g) {
    SampleOrder order(std::max<std::size_t>(groups[g].size(), 1), seed * 31 + g);
    const auto n_test = static_cast<std::size_t>(std::llround(groups[g].size() * test_fraction));
    for (std::size_t k = 0; k < n_test; ++k) is_test[groups[g][order.next()]] = true;
  }
  CorpusSplit out;
  for (std::size_t i = 0; i < samples.size(); ++i) (is_test[i] ? out.test : out.train).push_back(samples[i]);
  if (out.train.empty()) throw ConfigError("split leaves no training samples");
  return out;
}

// ---------------------------------------------------------------------------
// Row names

namespace {

bool is_recipe(const std::string& s) {
  if (s.empty() || s.size() > 4) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return std::string_view("RGBDSYUV0").find(c) != std::string_view::npos; });
}

std::string input_recipe(const std::string& token) {
  if (token == "D") return "DDD";
  try {
    const auto recipes = channel_recipes(parse_recombination_kind(token));
    if (recipes.size() == 1) return recipes[0];
  } catch (const ConfigError&) {
  }
  if (!is_recipe(token)) throw ConfigError("unknown input '" + token + "'");
  return token;
}

}  // namespace

RowSpec parse_row(const std::string& row, const BackboneConfig& backbone, FusionScheme default_scheme) {
  RowSpec spec;
  spec.name = row;
  std::string base = row;
  FusionScheme scheme = default_scheme;
  if (const auto hash = base.find('#'); hash != std::string::npos) {
    spec.loss = parse_loss_variant(base.substr(hash + 1));
    base = base.substr(0, hash);
  }
  if (const auto at = base.find('@'); at != std::string::npos) {
    scheme = parse_fusion_scheme(base.substr(at + 1));
    base = base.substr(0, at);
  }
  if (base == "final") {
    base = "mf:DGB+RDB+RGD";
    spec.recurrent = true;
  }
  const auto colon = base.find(':');
  if (colon == std::string::npos) throw ConfigError("unknown row '" + row + "'");
  const std::string kind = base.substr(0, colon);
  std::vector<std::string> recipes;
  for (const auto& tok : split(base.substr(colon + 1), '+')) recipes.push_back(input_recipe(tok));

  auto need = [&](std::size_t n) {
    if (recipes.size() != n)
      throw ConfigError("row '" + row + "' needs " + std::to_string(n) + " inputs, got " + std::to_string(recipes.size()));
  };
  if (kind == "single") {
    need(1);
    spec.model = ModelConfig::single(recipes[0], backbone);
  } else if (kind == "bi") {
    need(2);
    spec.model = ModelConfig::multi(recipes, FusionHead::LinearConcat, scheme, backbone);
  } else if (kind == "bi-mf") {
    need(2);
    spec.model = ModelConfig::multi(recipes, FusionHead::MultiLevel, scheme, backbone);
  } else if (kind == "lc") {
    need(3);
    spec.model = ModelConfig::multi(recipes, FusionHead::LinearConcat, scheme, backbone);
  } else if (kind == "mf") {
    need(3);
    spec.model = ModelConfig::multi(recipes, FusionHead::MultiLevel, scheme, backbone);
  } else {
    throw ConfigError("unknown row kind '" + kind + "' in '" + row + "'");
  }
  spec.model.validate();
  return spec;
}

const std::vector<std::string>& component_rows() {
  static const std::vector<std::string> rows{
      "single:RGB",     "single:D",        "single:RGBD",     "single:DGB",      "single:RDB",
      "single:RGD",     "bi:RGB+D",        "bi:DGB+RDB",      "bi:RDB+RGD",      "bi:RGD+DGB",
      "lc:RGB+D+D",     "lc:RGB+RGB+D",    "lc:DGB+RDB+RGD",  "mf:RGB+D+D",      "mf:GB+RB+RG",
      "mf:RGB+RGB+D",   "mf:RGB+RGB+RGB",  "mf:DGB+RDB+RGD",  "final"};
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<RgbdSample> at_size(std::vector<RgbdSample> samples, std::size_t size) {
  for (auto& s : samples)
    if (s.rgb.height != size || s.rgb.width != size) s = resize_sample(s, size);
  return samples;
}

/// Training-equivalent rows share one cache key.
std::string cache_key(const RowSpec& spec, const TrainConfig& train) {
  const LossVariant v = spec.loss.value_or(train.loss.variant);
  return spec.model.serialize() + "#" + std::string(to_string(v));
}

}  // namespace

Experiment::Experiment(CorpusSplit corpus, BenchConfig config) : config_(std::move(config)) {
  config_.backbone.validate();
  config_.train.validate();
  if (config_.seeds.empty()) throw ConfigError("at least one seed required");
  corpus_.train = at_size(std::move(corpus.train), config_.backbone.input_size);
  corpus_.test = std::move(corpus.test);
  if (corpus_.train.empty()) throw ConfigError("training corpus is empty");
}

TrainResult& Experiment::result(const std::string& row, std::uint64_t seed) {
  const RowSpec spec = parse_row(row, config_.backbone, config_.scheme);
  TrainConfig cfg = config_.train;
  cfg.seed = seed;
  if (spec.loss) {
    const auto override_f = cfg.loss.alphaF_override;
    cfg.loss = LossWeights::for_variant(*spec.loss);
    cfg.loss.alphaF_override = override_f;
  }
  auto key = std::make_pair(cache_key(spec, cfg), seed);
  auto it = cache_.find(key);
  if (it == cache_.end())
    it = cache_.emplace(key, std::make_unique<TrainResult>(train_pipeline(corpus_.train, spec.model, cfg))).first;
  return *it->second;
}

MetricsReport Experiment::evaluate(const std::string& row, std::uint64_t seed, const std::vector<RgbdSample>* subset) {
  const RowSpec spec = parse_row(row, config_.backbone, config_.scheme);
  const auto& samples = subset ? *subset : corpus_.test;
  if (samples.empty()) throw ConfigError("no test samples to evaluate");
  return evaluate_corpus(predict_pairs(model(row, seed), samples, spec.recurrent));
}

std::vector<SaliencyPair> predict_pairs(SodModel& model, const std::vector<RgbdSample>& samples, bool recurrent) {
  const std::size_t size = model.config().backbone.input_size;
  std::vector<SaliencyPair> out;
  for (const auto& s : samples) {
    const bool resize = s.rgb.height != size || s.rgb.width != size;
    const RgbdSample in = resize ? resize_sample(s, size) : s;
    Image pred = recurrent ? model.recurrent_pass(in).sod_plus : model.predict(in);
    if (resize) pred = resize_bilinear(pred, s.gt.height, s.gt.width);
    for (float& v : pred.data) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back({std::move(pred), s.gt, s.id});
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "n/a" : format_fixed(v, 4); }

std::string pad(const std::string& s, std::size_t w, bool left = true) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

TrioRow trio(Experiment& exp, const std::string& row, const std::string& label) {
  TrioRow t;
  t.row = label;
  for (std::uint64_t seed : exp.config().seeds) {
    const MetricsReport r = exp.evaluate(row, seed);
    t.meanF.push_back(r.mean.meanF);
    t.maxF.push_back(r.mean.maxF);
    t.mae.push_back(r.mean.mae);
  }
  return t;
}

void trio_csv(std::ostringstream& os, const TrioRow& t) {
  os << ',' << format_fixed(median(t.meanF), 6) << ',' << format_fixed(median(t.maxF), 6) << ','
     << format_fixed(median(t.mae), 6);
}

std::string trio_cells(const TrioRow& t) {
  return pad(cell(median(t.meanF)), 8, false) + pad(cell(median(t.maxF)), 8, false) + pad(cell(median(t.mae)), 8, false);
}

}  // namespace

ComponentTable run_component_ablation(Experiment& exp, const std::vector<std::string>& rows) {
  if (rows.empty()) throw ConfigError("no rows requested");
  for (const auto& r : rows) parse_row(r, exp.config().backbone, exp.config().scheme);
  ComponentTable t;
  t.seeds = exp.config().seeds;
  for (const auto& r : rows) t.rows.push_back(trio(exp, r, r));
  return t;
}

std::string ComponentTable::csv() const {
  std::ostringstream os;
  os << "row,seed,meanF,maxF,MAE\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < seeds.size(); ++i)
      os << r.row << ',' << seeds[i] << ',' << format_fixed(r.meanF[i], 6) << ',' << format_fixed(r.maxF[i], 6) << ','
         << format_fixed(r.mae[i], 6) << '\n';
    os << r.row << ",median";
    trio_csv(os, r);
    os << '\n';
  }
  return os.str();
}

std::string ComponentTable::table() const {
  std::size_t w = 12;
  for (const auto& r : rows) w = std::max(w, r.row.size() + 2);
  std::ostringstream os;
  os << pad("row", w) << pad("meanF", 8, false) << pad("maxF", 8, false) << pad("MAE", 8, false) << '\n';
  for (const auto& r : rows) os << pad(r.row, w) << trio_cells(r) << '\n';
  os << "(medians over " << seeds.size() << " seeds)\n";
  return os.str();
}

// ---------------------------------------------------------------------------

BiasTable run_table1(const std::vector<RgbdSample>& test, const std::map<std::string, SodModel*>& models) {
  static const char* keys[4] = {"D", "C", "bi", "tri"};
  for (const char* k : keys) {
    auto it = models.find(k);
    if (it == models.end() || !it->second) throw ConfigError(std::string("bias table needs the '") + k + "' model");
  }
  if (test.empty()) throw ConfigError("no test samples");
  std::vector<std::vector<double>> per_image(4);
  for (int m = 0; m < 4; ++m)
    for (const auto& p : predict_pairs(*models.at(keys[m]), test, false)) per_image[m].push_back(mae(p));

  BiasTable t;
  double sums[4][2] = {};
  for (std::size_t i = 0; i < test.size(); ++i) {
    // Unlabeled samples count as high quality when depth alone does better.
    const bool high = test[i].depth_high_quality.value_or(per_image[0][i] < per_image[1][i]);
    const int col = high ? 0 : 1;
    ++t.count[col];
    for (int m = 0; m < 4; ++m) sums[m][col] += per_image[m][i];
  }
  for (int m = 0; m < 4; ++m)
    for (int c = 0; c < 2; ++c) t.mae[m][c] = t.count[c] ? sums[m][c] / t.count[c] : std::nan("");
  return t;
}

BiasTable run_table1(Experiment& exp) {
  static const char* rows[4] = {"single:D", "single:RGB", "bi:RGB+D", "mf:DGB+RDB+RGD"};
  std::vector<double> cells[4][2];
  BiasTable out;
  for (std::uint64_t seed : exp.config().seeds) {
    std::map<std::string, SodModel*> models{{"D", &exp.model(rows[0], seed)},
                                            {"C", &exp.model(rows[1], seed)},
                                            {"bi", &exp.model(rows[2], seed)},
                                            {"tri", &exp.model(rows[3], seed)}};
    const BiasTable t = run_table1(exp.corpus().test, models);
    out.count[0] = t.count[0];
    out.count[1] = t.count[1];
    for (int m = 0; m < 4; ++m)
      for (int c = 0; c < 2; ++c) cells[m][c].push_back(t.mae[m][c]);
  }
  for (int m = 0; m < 4; ++m)
    for (int c = 0; c < 2; ++c) out.mae[m][c] = std::isnan(cells[m][c][0]) ? std::nan("") : median(cells[m][c]);
  return out;
}

std::string BiasTable::csv() const {
  std::ostringstream os;
  os << "row,high_quality,low_quality\n";
  os << "images," << count[0] << ',' << count[1] << '\n';
  for (int m = 0; m < 4; ++m) os << kRows[m] << ',' << cell(mae[m][0]) << ',' << cell(mae[m][1]) << '\n';
  return os.str();
}

std::string BiasTable::table() const {
  std::ostringstream os;
  os << pad("MAE", 12) << pad("high (" + std::to_string(count[0]) + ")", 12, false)
     << pad("low (" + std::to_string(count[1]) + ")", 12, false) << '\n';
  for (int m = 0; m < 4; ++m) os << pad(kRows[m], 12) << pad(cell(mae[m][0]), 12, false) << pad(cell(mae[m][1]), 12, false) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

SchemeTable count_schemes(const BackboneConfig& backbone) {
  SchemeTable t;
  for (FusionScheme s : {FusionScheme::A, FusionScheme::B, FusionScheme::C, FusionScheme::D}) {
    const SodModel m(ModelConfig::trinet(s, backbone), 0);
    SchemeRow r;
    r.scheme = s;
    r.params = m.parameter_count().total;
    r.fusion_params = m.fusion_parameter_count();
    r.connections = m.config().graph.cross_connections();
    r.ft_ratio = static_cast<double>(r.fusion_params) / static_cast<double>(r.params);
    r.metrics.row = std::string(to_string(s));
    t.rows.push_back(std::move(r));
  }
  return t;
}

SchemeTable run_scheme_ablation(Experiment& exp) {
  SchemeTable t = count_schemes(exp.config().backbone);
  for (auto& r : t.rows) r.metrics = trio(exp, "mf:DGB+RDB+RGD@" + std::string(to_string(r.scheme)), r.metrics.row);
  return t;
}

std::string SchemeTable::csv() const {
  std::ostringstream os;
  os << "scheme,params,backbone_params,fusion_params,ft_ratio,connections,meanF,maxF,MAE\n";
  for (const auto& r : rows) {
    os << to_string(r.scheme) << ',' << r.params << ',' << r.params - r.fusion_params << ',' << r.fusion_params << ','
       << format_fixed(r.ft_ratio, 6) << ',' << r.connections;
    if (r.metrics.mae.empty()) os << ",,,";
    else trio_csv(os, r.metrics);
    os << '\n';
  }
  return os.str();
}

std::string SchemeTable::table() const {
  std::ostringstream os;
  os << pad("scheme", 8) << pad("params", 10, false) << pad("fusion", 10, false) << pad("F-T", 8, false)
     << pad("conn", 6, false) << pad("meanF", 8, false) << pad("maxF", 8, false) << pad("MAE", 8, false) << '\n';
  for (const auto& r : rows) {
    os << pad(std::string(to_string(r.scheme)), 8) << pad(std::to_string(r.params), 10, false)
       << pad(std::to_string(r.fusion_params), 10, false) << pad(format_fixed(100.0 * r.ft_ratio, 1) + "%", 8, false)
       << pad(std::to_string(r.connections), 6, false);
    if (!r.metrics.mae.empty()) os << trio_cells(r.metrics);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

LossTable run_loss_ablation(Experiment& exp) {
  LossTable t;
  for (LossVariant v : all_loss_variants()) {
    const std::string row = "mf:DGB+RDB+RGD#" + std::string(to_string(v));
    LossRow r;
    r.variant = v;
    std::set<std::string> names;
    for (const auto& e : exp.result(row, exp.config().seeds.front()).log)
      if (e.step == 3 && e.term != "total") names.insert(e.term);
    r.terms = names.size();
    r.metrics = trio(exp, row, std::string(to_string(v)));
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::string LossTable::csv() const {
  std::ostringstream os;
  os << "variant,terms,meanF,maxF,MAE\n";
  for (const auto& r : rows) {
    os << to_string(r.variant) << ',' << r.terms;
    trio_csv(os, r.metrics);
    os << '\n';
  }
  return os.str();
}

std::string LossTable::table() const {
  std::ostringstream os;
  os << pad("loss", 16) << pad("terms", 6, false) << pad("meanF", 8, false) << pad("maxF", 8, false)
     << pad("MAE", 8, false) << '\n';
  for (const auto& r : rows)
    os << pad(std::string(to_string(r.variant)), 16) << pad(std::to_string(r.terms), 6, false) << trio_cells(r.metrics)
       << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

InferenceReport infer(SodModel& model, const std::vector<RgbdSample>& samples, const std::string& out_dir,
                      bool recurrent) {
  if (samples.empty()) throw ConfigError("nothing to infer");
  fs::create_directories(out_dir);
  const std::size_t size = model.config().backbone.input_size;
  InferenceReport rep;
  std::vector<double> times;
  for (const auto& s : samples) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool resize = s.rgb.height != size || s.rgb.width != size;
    const RgbdSample in = resize ? resize_sample(s, size) : s;
    RecurrentResult r;
    if (recurrent) r = model.recurrent_pass(in);
    else r.sod = model.predict(in);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    auto emit = [&](Image map, const std::string& suffix) {
      if (resize) map = resize_bilinear(map, s.rgb.height, s.rgb.width);
      const std::string path = (fs::path(out_dir) / (s.id + suffix + ".png")).string();
      write_png(path, map);
      rep.written.push_back(path);
    };
    emit(r.sod, "");
    if (recurrent) emit(r.sod_plus, "_plus");
    rep.rows.push_back({s.id, ms});
    times.push_back(ms);
  }
  double sum = 0.0;
  for (double t : times) sum += t;
  rep.mean_ms = sum / times.size();
  rep.median_ms = median(times);
  return rep;
}

std::string InferenceReport::csv() const {
  std::ostringstream os;
  os << "id,ms\n";
  for (const auto& r : rows) os << r.id << ',' << format_fixed(r.ms, 3) << '\n';
  os << "mean," << format_fixed(mean_ms, 3) << '\n';
  os << "median," << format_fixed(median_ms, 3) << '\n';
  return os.str();
}

}  // namespace rgbdsod
