// rgbdsod: corpus generation, training, inference, evaluation and the
// ablation harnesses.
//
// Exit codes: 0 success, 2 validation error, 3 numerical abort.

#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "rgbdsod/bench.hpp"
#include "rgbdsod/io.hpp"
#include "rgbdsod/synth.hpp"
#include "rgbdsod/text_util.hpp"

namespace fs = std::filesystem;
using namespace rgbdsod;

namespace {

struct SynthOptions {
  std::size_t n = 40;
  std::size_t size = 32;
  std::uint64_t seed = 1;
  double depth_quality = 0.5;
  std::string shapes = "mixed";
  double contrast = 0.25;
  double test_fraction = 0.3;

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "n", n, "number of images");
    app->add_option("--" + prefix + "size", size, "image size");
    app->add_option("--" + prefix + "seed", seed, "generator seed");
    app->add_option("--" + prefix + "depth-quality", depth_quality, "fraction of high-quality depth maps");
    app->add_option("--" + prefix + "shapes", shapes, "rectangles, ellipses or mixed");
    app->add_option("--" + prefix + "contrast", contrast, "color contrast of the object");
    app->add_option("--test-fraction", test_fraction, "held-out fraction");
  }

  SyntheticSpec spec() const {
    SyntheticSpec s;
    s.n_images = n;
    s.size = size;
    s.seed = seed;
    s.depth_quality = depth_quality;
    s.shapes = parse_shape_family(shapes);
    s.rgb_contrast = contrast;
    return s;
  }
};

/// Training and model options shared by train and the harnesses. A config
/// file is applied first; flags given on the command line override it.
struct TrainOptions {
  std::string config_file;
  std::string preset = "toy";
  std::size_t input_size = 0;
  std::string iters;
  double lr = 0.0;
  int iter_size = 0;
  std::uint64_t seed = 0;
  std::string loss;
  std::string scheme = "D";
  bool share_pretrain = false;
  int recurrent_iters = -1;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "flat key=value config file");
    app->add_option("--preset", preset, "backbone preset (toy, small)");
    app->add_option("--input-size", input_size, "network input size");
    app->add_option("--iters", iters, "iterations per step, e.g. 200,200,200");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--iter-size", iter_size, "gradient accumulation passes per update");
    app->add_option("--seed", seed, "training seed");
    app->add_option("--loss", loss, "S, S+A, S+F, S+F+A or S+F+A_uniform");
    app->add_option("--scheme", scheme, "fusion scheme A, B, C or D");
    app->add_flag("--share-pretrain", share_pretrain, "pretrain one backbone and copy it");
    app->add_option("--recurrent-iters", recurrent_iters, "fine-tuning iterations on saliency-substituted inputs");
  }

  void resolve(BackboneConfig& bb, TrainConfig& tc) const {
    bb = BackboneConfig::preset(preset);
    tc = TrainConfig::desk();
    if (!config_file.empty()) {
      for (const auto& [key, value] : parse_key_values(read_text_file(config_file))) {
        if (tc.apply_key_value(key, value)) continue;
        if (key == "preset") {
          const std::size_t keep = bb.input_size;
          bb = BackboneConfig::preset(value);
          if (keep != BackboneConfig::preset("toy").input_size) bb.input_size = keep;
        } else if (key == "input_size") {
          bb.input_size = parse_size(value);
        } else if (key == "block_channels") {
          bb.block_channels = parse_size_list(value);
        } else if (key == "convs_per_block") {
          bb.convs_per_block = parse_size_list(value);
        } else if (key == "skip_channels") {
          bb.skip_channels = parse_size(value);
        } else {
          throw ConfigError("unknown config key: " + key);
        }
      }
    }
    if (input_size) bb.input_size = input_size;
    if (!iters.empty()) tc.apply_key_value("iters", iters);
    if (lr > 0.0) tc.lr = lr;
    if (iter_size > 0) tc.iter_size = iter_size;
    if (seed) tc.seed = seed;
    if (!loss.empty()) tc.apply_key_value("loss", loss);
    if (share_pretrain) tc.share_pretrain = true;
    if (recurrent_iters >= 0) tc.recurrent_finetune_iters = recurrent_iters;
    bb.validate();
    tc.validate();
  }
};

/// Where an experiment's corpus comes from: a manifest or a synthetic spec.
struct CorpusOptions {
  std::string manifest;
  SynthOptions synth;
  std::uint64_t split_seed = 5;

  void add(CLI::App* app) {
    app->add_option("--corpus", manifest, "dataset manifest (default: synthetic corpus)");
    synth.add(app, "synth-");
    app->add_option("--split-seed", split_seed, "seed of the train/test split");
  }

  CorpusSplit load() const {
    if (manifest.empty()) return split_corpus(generate_synthetic(synth.spec()), synth.test_fraction, split_seed);
    const DatasetManifest m = DatasetManifest::load(manifest);
    m.validate();
    CorpusSplit s;
    s.train = load_corpus(m, "train");
    bool any_test = false;
    for (const auto& e : m.entries) any_test |= e.split == "test";
    if (any_test) {
      s.test = load_corpus(m, "test");
      return s;
    }
    return split_corpus(s.train, synth.test_fraction, split_seed);
  }
};

void write_outputs(const std::string& dir, const std::string& stem, const std::string& csv, const std::string& table) {
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / (stem + ".csv")).string(), csv);
  write_text_file((fs::path(dir) / (stem + ".txt")).string(), table);
  std::cout << table;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (auto v : parse_size_list(text)) seeds.push_back(v);
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

std::string model_row(const std::string& mode, const std::string& inputs, const std::string& head,
                      const std::string& scheme) {
  if (mode == "single") return "single:" + (inputs.empty() ? "DGB" : inputs);
  if (mode == "bi") return (head == "mf" ? "bi-mf:" : "bi:") + (inputs.empty() ? "RGB+D" : inputs) + "@" + scheme;
  if (mode == "tri") return (head == "lc" ? "lc:" : "mf:") + (inputs.empty() ? "DGB+RDB+RGD" : inputs) + "@" + scheme;
  throw ConfigError("mode must be single, bi or tri");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-D salient object detection toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D corpus");
  SynthOptions synth_opts;
  std::string synth_out;
  std::uint64_t synth_split_seed = 5;
  synth_opts.add(synth);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--split-seed", synth_split_seed, "seed of the train/test split");

  // recombine
  auto* recomb = app.add_subcommand("recombine", "write recombined inputs for every manifest entry");
  std::string rc_manifest, rc_kind = "DGB", rc_out, rc_saliency;
  recomb->add_option("--manifest", rc_manifest, "dataset manifest")->required();
  recomb->add_option("--kind", rc_kind, "recombination kind");
  recomb->add_option("--saliency-dir", rc_saliency, "directory of <id>.png maps for SGB/RSB/RGS");
  recomb->add_option("--out", rc_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a single-, bi- or triple-stream model");
  TrainOptions train_opts;
  std::string tr_manifest, tr_mode = "tri", tr_inputs, tr_head = "mf", tr_out, tr_log;
  train_opts.add(train);
  train->add_option("--corpus", tr_manifest, "dataset manifest")->required();
  train->add_option("--mode", tr_mode, "single, bi or tri");
  train->add_option("--inputs", tr_inputs, "inputs, e.g. DGB or RGB+D");
  train->add_option("--head", tr_head, "lc or mf for bi/tri modes");
  train->add_option("--out", tr_out, "checkpoint path")->required();
  train->add_option("--log", tr_log, "loss log CSV");

  // infer
  auto* inf = app.add_subcommand("infer", "predict saliency maps");
  std::string in_ckpt, in_manifest, in_split, in_out, in_timing;
  bool in_recurrent = false;
  inf->add_option("--checkpoint", in_ckpt, "checkpoint path")->required();
  inf->add_option("--manifest", in_manifest, "dataset manifest")->required();
  inf->add_option("--split", in_split, "train or test (default: all)");
  inf->add_option("--out", in_out, "output directory")->required();
  inf->add_flag("--recurrent", in_recurrent, "also write the recurrent SOD+ map");
  inf->add_option("--timing", in_timing, "timing CSV path");

  // eval
  auto* ev = app.add_subcommand("eval", "score predicted maps against the manifest masks");
  std::string ev_pred, ev_manifest, ev_split, ev_suffix, ev_csv, ev_curves;
  ev->add_option("--pred-dir", ev_pred, "directory of <id><suffix>.png maps")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  ev->add_option("--split", ev_split, "train or test (default: all)");
  ev->add_option("--suffix", ev_suffix, "file suffix, e.g. _plus");
  ev->add_option("--csv", ev_csv, "per-image CSV path");
  ev->add_option("--curves", ev_curves, "threshold curve CSV path");

  // harnesses
  struct Harness {
    CLI::App* cmd;
    TrainOptions train;
    CorpusOptions corpus;
    std::string seeds = "1,2,3";
    std::string out = "results";
  };
  std::map<std::string, Harness> harnesses;
  std::vector<std::string> ablate_rows;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"table1", "depth-quality bias table"},
           {"ablate-components", "component table over input combinations"},
           {"ablate-schemes", "fusion scheme table"},
           {"ablate-loss", "loss variant table"}}) {
    Harness& h = harnesses[name];
    h.cmd = app.add_subcommand(name, help);
    h.train.add(h.cmd);
    h.corpus.add(h.cmd);
    h.cmd->add_option("--seeds", h.seeds, "comma-separated seeds");
    h.cmd->add_option("--out-dir", h.out, "directory for CSV and text tables");
  }
  harnesses["ablate-components"].cmd->add_option("--rows", ablate_rows, "row names (default: all)")->delimiter(',');

  // count-params
  auto* cp = app.add_subcommand("count-params", "parameter accounting per fusion scheme");
  std::string cp_preset = "toy", cp_row, cp_csv;
  std::size_t cp_size = 0;
  bool cp_layers = false;
  cp->add_option("--preset", cp_preset, "backbone preset");
  cp->add_option("--input-size", cp_size, "network input size");
  cp->add_option("--row", cp_row, "count one model row instead of the scheme table");
  cp->add_flag("--layers", cp_layers, "list per-layer counts");
  cp->add_option("--csv", cp_csv, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      const auto samples = generate_synthetic(synth_opts.spec());
      const CorpusSplit split = split_corpus(samples, synth_opts.test_fraction, synth_split_seed);
      std::map<std::string, std::string> tag;
      for (const auto& s : split.test) tag[s.id] = "test";
      std::vector<std::string> splits;
      for (const auto& s : samples) splits.push_back(tag.count(s.id) ? "test" : "train");
      write_corpus(synth_out, samples, splits);
      std::cout << "wrote " << samples.size() << " samples (" << split.test.size() << " test) to " << synth_out
                << "/manifest.json\n";
    } else if (*recomb) {
      const DatasetManifest m = DatasetManifest::load(rc_manifest);
      m.validate();
      const RecombinationKind kind = parse_recombination_kind(rc_kind);
      fs::create_directories(rc_out);
      std::size_t written = 0;
      for (const auto& s : load_corpus(m)) {
        Image sal;
        if (!rc_saliency.empty()) sal = read_png((fs::path(rc_saliency) / (s.id + ".png")).string()).channel(0);
        const auto images = recombine(s, kind, rc_saliency.empty() ? nullptr : &sal);
        const auto recipes = channel_recipes(kind);
        for (std::size_t i = 0; i < images.size(); ++i) {
          write_png((fs::path(rc_out) / (s.id + "_" + recipes[i] + ".png")).string(), images[i]);
          ++written;
        }
      }
      std::cout << "wrote " << written << " images to " << rc_out << '\n';
    } else if (*train) {
      BackboneConfig bb;
      TrainConfig tc;
      train_opts.resolve(bb, tc);
      const DatasetManifest m = DatasetManifest::load(tr_manifest);
      m.validate();
      const RowSpec row = parse_row(model_row(tr_mode, tr_inputs, tr_head, train_opts.scheme), bb);
      const auto corpus = load_corpus(m, "train", bb.input_size);
      TrainHooks hooks;
      hooks.on_step_end = [](int step, const ParameterStore&) { std::cerr << "step " << step << " done\n"; };
      TrainResult result = train_pipeline(corpus, row.model, tc, hooks);
      save_checkpoint(tr_out, result.model);
      if (!tr_log.empty()) write_text_file(tr_log, loss_log_csv(result.log));
      const auto totals = result.totals(3);
      std::cout << row.name << ": joint loss " << format_fixed(totals.front(), 4) << " -> "
                << format_fixed(totals.back(), 4) << ", checkpoint " << tr_out << '\n';
    } else if (*inf) {
      SodModel model = load_checkpoint(in_ckpt);
      const DatasetManifest m = DatasetManifest::load(in_manifest);
      m.validate();
      const InferenceReport rep = infer(model, load_corpus(m, in_split), in_out, in_recurrent);
      if (!in_timing.empty()) write_text_file(in_timing, rep.csv());
      std::cout << "wrote " << rep.written.size() << " maps to " << in_out << "; mean "
                << format_fixed(rep.mean_ms, 2) << " ms, median " << format_fixed(rep.median_ms, 2)
                << " ms per image\n";
    } else if (*ev) {
      const DatasetManifest m = DatasetManifest::load(ev_manifest);
      m.validate();
      std::vector<SaliencyPair> pairs;
      for (const auto& s : load_corpus(m, ev_split)) {
        const std::string path = (fs::path(ev_pred) / (s.id + ev_suffix + ".png")).string();
        if (!fs::exists(path)) throw FormatError("missing prediction " + path);
        Image pred = read_png(path).channel(0);
        if (!pred.same_size(s.gt)) pred = resize_bilinear(pred, s.gt.height, s.gt.width);
        pairs.push_back({std::move(pred), s.gt, s.id});
      }
      const MetricsReport rep = evaluate_corpus(std::move(pairs));
      if (!ev_csv.empty()) write_text_file(ev_csv, rep.csv());
      if (!ev_curves.empty()) write_text_file(ev_curves, rep.curves_csv());
      std::cout << rep.table(fs::path(ev_pred).filename().string());
    } else if (*cp) {
      BackboneConfig bb = BackboneConfig::preset(cp_preset);
      if (cp_size) bb.input_size = cp_size;
      bb.validate();
      if (!cp_row.empty()) {
        const SodModel model(parse_row(cp_row, bb).model, 0);
        const ParameterCount count = model.parameter_count();
        if (cp_layers)
          for (const auto& [layer, n] : count.per_layer) std::cout << layer << ' ' << n << '\n';
        std::cout << cp_row << ": " << count.total << " parameters (" << model.backbone_parameter_count()
                  << " backbone, " << model.fusion_parameter_count() << " fusion)\n";
      } else {
        const SchemeTable t = count_schemes(bb);
        if (!cp_csv.empty()) write_text_file(cp_csv, t.csv());
        std::cout << t.table();
      }
    } else {
      for (auto& [name, h] : harnesses) {
        if (!*h.cmd) continue;
        BenchConfig bc;
        h.train.resolve(bc.backbone, bc.train);
        bc.seeds = parse_seeds(h.seeds);
        bc.scheme = parse_fusion_scheme(h.train.scheme);
        Experiment exp(h.corpus.load(), bc);
        if (name == "table1") {
          const BiasTable t = run_table1(exp);
          write_outputs(h.out, "table1", t.csv(), t.table());
        } else if (name == "ablate-components") {
          const ComponentTable t = run_component_ablation(exp, ablate_rows.empty() ? component_rows() : ablate_rows);
          write_outputs(h.out, "components", t.csv(), t.table());
        } else if (name == "ablate-schemes") {
          const SchemeTable t = run_scheme_ablation(exp);
          write_outputs(h.out, "schemes", t.csv(), t.table());
        } else {
          const LossTable t = run_loss_ablation(exp);
          write_outputs(h.out, "loss", t.csv(), t.table());
        }
      }
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
