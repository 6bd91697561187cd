#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "faultseg/experiment.hpp"

using namespace faultseg;

namespace {

struct ConfigArgs {
  std::string config;
  std::string profile = "desk";
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.config, "key=value config file");
  cmd->add_option("--profile", a.profile, "base profile: desk (64^3) or quick (32^3)")
      ->check(CLI::IsMember({"desk", "quick"}));
  cmd->add_option("-s,--set", a.overrides, "override one key, e.g. --set train.epochs=1");
}

ExperimentConfig resolve(const ConfigArgs& a) {
  ExperimentConfig c = a.profile == "quick" ? quick_profile() : desk_profile();
  if (!a.config.empty()) {
    std::ifstream in(a.config, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + a.config);
    std::ostringstream s;
    s << in.rdbuf();
    c = parse_experiment(s.str(), c);
  }
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    set_key(c, o.substr(0, eq), o.substr(eq + 1));
  }
  validate(c);
  return c;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw DataError("cannot write " + p.string());
}

ModelParams load_compatible(const ExperimentConfig& c, const std::string& path) {
  const ModelParams p = load_checkpoint(path.empty() ? c.run_dir / "best.fck" : std::filesystem::path(path));
  require_compatible(c.model, p);
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-slice 3D fault segmentation"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, predict_args, ablate_args, xval_args, flops_args;
  std::string eval_checkpoint, eval_split = "val", predict_checkpoint, predict_input, predict_output;
  std::string slice_input, slice_output;
  int slice_axis = 0;
  std::int64_t slice_index = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus into corpus.dir");
  add_config_args(gen, gen_args);
  auto* tr = app.add_subcommand("train", "train on the corpus into run.dir");
  add_config_args(tr, train_args);
  auto* ev = app.add_subcommand("eval", "metrics of a checkpoint on a corpus split");
  add_config_args(ev, eval_args);
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint (default run.dir/best.fck)");
  ev->add_option("--split", eval_split, "train or val")->check(CLI::IsMember({"train", "val"}));
  auto* pr = app.add_subcommand("predict", "tiled inference over a whole volume");
  add_config_args(pr, predict_args);
  pr->add_option("--checkpoint", predict_checkpoint, "checkpoint (default run.dir/best.fck)");
  pr->add_option("-i,--input", predict_input, "amplitude volume")->required();
  pr->add_option("-o,--output", predict_output, "probability volume")->required();
  auto* ab = app.add_subcommand("ablate", "AAM x rotation x mode grid");
  add_config_args(ab, ablate_args);
  auto* xv = app.add_subcommand("xval", "K-fold cross validation");
  add_config_args(xv, xval_args);
  auto* fl = app.add_subcommand("flops", "operation count of the model on one cuboid");
  add_config_args(fl, flops_args);
  auto* ex = app.add_subcommand("export-slice", "write one slice of a volume as an 8-bit PGM");
  ex->add_option("-i,--input", slice_input, "volume")->required();
  ex->add_option("--axis", slice_axis, "0, 1 or 2")->check(CLI::Range(0, 2));
  ex->add_option("--index", slice_index, "slice index")->required();
  ex->add_option("-o,--output", slice_output, "PGM path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const ExperimentConfig c = resolve(gen_args);
      const Manifest m = generate_corpus(c);
      save_experiment(c, c.corpus_dir / "config.txt");
      std::cout << "wrote " << m.entries.size() << " volumes to " << c.corpus_dir.string() << '\n';
    } else if (*tr) {
      const ExperimentConfig c = resolve(train_args);
      const RunSummary s = run_training(c, c.run_dir, &std::cout);
      std::cout << "best step " << s.result.best_step << " val " << s.result.best_val << '\n'
                << s.val_metrics.to_text();
    } else if (*ev) {
      ExperimentConfig c = resolve(eval_args);
      const ModelParams p = load_compatible(c, eval_checkpoint);
      const Manifest m = read_manifest(c.corpus_dir / "manifest.txt");
      const auto samples = load_split(c.corpus_dir, m, eval_split == "train", sample_options(c), c.model);
      if (samples.empty()) throw DataError("no cuboids survive the fault-voxel filter in the " + eval_split + " split");
      const MetricReport r = evaluate_samples(p, samples);
      std::filesystem::create_directories(c.run_dir);
      write_file(c.run_dir / ("eval_" + eval_split + ".txt"), r.to_text());
      save_experiment(c, c.run_dir / ("eval_" + eval_split + ".config.txt"));
      std::cout << r.to_text();
    } else if (*pr) {
      const ExperimentConfig c = resolve(predict_args);
      const ModelParams p = load_compatible(c, predict_checkpoint);
      const Volume out = predict_volume(p, load_volume(predict_input), c.model.edge, c.overlap);
      const std::filesystem::path o(predict_output);
      if (o.has_parent_path()) std::filesystem::create_directories(o.parent_path());
      save_volume(out, o);
      save_experiment(c, o.string() + ".config.txt");
      std::cout << "wrote " << o.string() << '\n';
    } else if (*ab) {
      const ExperimentConfig c = resolve(ablate_args);
      std::cout << run_ablation(c, c.run_dir, &std::cout).to_text();
      save_experiment(c, c.run_dir / "config.txt");
    } else if (*xv) {
      const ExperimentConfig c = resolve(xval_args);
      std::cout << run_cross_validation(c, c.run_dir, &std::cout).to_text();
      save_experiment(c, c.run_dir / "config.txt");
    } else if (*fl) {
      const ExperimentConfig c = resolve(flops_args);
      std::cout << count_flops(c.model) << '\n';
    } else if (*ex) {
      export_slice(load_volume(slice_input), slice_axis, slice_index, slice_output);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::out_of_range& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
