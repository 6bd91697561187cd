#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "faultseg/experiment.hpp"

using namespace faultseg;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "faultseg_experiment" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig tiny_experiment(const std::filesystem::path& dir) {
  ExperimentConfig c = quick_profile();
  c.synth.size = 16;
  c.synth.seed = 3;
  c.corpus_count = 6;
  c.train_fraction = 4.0 / 6.0;
  c.model.depth = 1;
  c.model.base_channels = 2;
  c.model.edge = 16;
  c.model.aam_levels = {0};
  c.train.epochs = 1;
  c.train.batch_size = 2;
  c.train.val_every = 1;
  c.min_fault_voxels = 0;
  c.overlap = 4;
  c.folds = 3;
  c.corpus_dir = dir / "corpus";
  c.run_dir = dir / "run";
  return c;
}

}  // namespace

TEST_CASE("config text round trip") {
  for (const ExperimentConfig& c : {desk_profile(), quick_profile()}) {
    CHECK(parse_experiment(to_text(c)) == c);
  }

  ExperimentConfig c;
  c.synth.seed = 0xfedcba9876543210ull;
  c.synth.noise_std = {0.1234567890123456789, 0.3};
  c.train.adam.lr = 3.0e-4 / 7.0;
  c.train.rotate = false;
  c.model.aam_levels = {};
  c.mode = parse_mode("F");
  c.ablate_modes = {parse_mode("A"), mode_all(), parse_mode("H")};
  c.corpus_dir = "some/where else";
  const ExperimentConfig back = parse_experiment(to_text(c));
  CHECK(back == c);
  CHECK(to_text(back) == to_text(c));

  const auto keys = experiment_keys();
  std::istringstream lines(to_text(c));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    REQUIRE(n < keys.size());
    CHECK(line.substr(0, line.find('=')) == keys[n++]);
  }
  CHECK(n == keys.size());

  const auto dir = scratch("roundtrip");
  save_experiment(c, dir / "c.txt");
  CHECK(load_experiment(dir / "c.txt") == c);
}

TEST_CASE("config parsing") {
  const ExperimentConfig base = quick_profile();
  const ExperimentConfig c = parse_experiment("# comment\n\n  train.epochs = 3 \r\nmodel.aam_levels=0,1\n", base);
  CHECK(c.train.epochs == 3);
  CHECK(c.model.aam_levels == std::vector<int>{0, 1});
  CHECK(c.model.edge == base.model.edge);
  CHECK(parse_experiment("model.aam_levels=none\n").model.aam_levels.empty());
  CHECK_FALSE(parse_experiment("train.rotate=off\n").train.rotate);

  CHECK_THROWS_AS(parse_experiment("no.such.key=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("train.epochs\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("train.epochs=3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("train.epochs=\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("train.lr=fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("train.rotate=maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("samples.mode=Z\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("synth.seed=-1\n"), ConfigError);
  ExperimentConfig m;
  CHECK_THROWS_AS(set_key(m, "model.depth", "two"), ConfigError);
  CHECK_THROWS_AS(load_experiment(scratch("missing") / "absent.txt"), ConfigError);
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(validate(desk_profile()));
  CHECK_NOTHROW(validate(quick_profile()));
  auto bad = [](auto&& edit) {
    ExperimentConfig c;
    edit(c);
    CHECK_THROWS_AS(validate(c), ConfigError);
  };
  bad([](ExperimentConfig& c) { c.train_fraction = 1.0; });
  bad([](ExperimentConfig& c) { c.corpus_count = 1; });
  bad([](ExperimentConfig& c) { c.stride = 0; });
  bad([](ExperimentConfig& c) { c.overlap = 40; });
  bad([](ExperimentConfig& c) { c.folds = 1; });
  bad([](ExperimentConfig& c) { c.ablate_modes.clear(); });
  bad([](ExperimentConfig& c) { c.train.epochs = 0; });
  bad([](ExperimentConfig& c) { c.model.depth = 0; });
  bad([](ExperimentConfig& c) { c.synth.dip = {10, 100}; });

  const SampleOptions o = sample_options(quick_profile());
  CHECK(o.edge == 32);
  CHECK(o.stride == 25);
  CHECK(o.min_fault_voxels == 64);
}

TEST_CASE("checkpoint compatibility") {
  const ModelConfig m = tiny_experiment("x").model;
  const ModelParams p = init_params(m, 1);
  CHECK_NOTHROW(require_compatible(m, p));
  ModelConfig other = m;
  other.base_channels = 4;
  CHECK_THROWS_AS(require_compatible(other, p), ConfigError);
  other = m;
  other.aam_levels.clear();
  CHECK_THROWS_AS(require_compatible(other, p), ConfigError);
}

TEST_CASE("training run writes its outputs") {
  const auto dir = scratch("train");
  const ExperimentConfig c = tiny_experiment(dir);
  const Manifest m = generate_corpus(c);
  CHECK(m.entries.size() == 6);
  const RunSummary s = run_training(c, c.run_dir);
  CHECK(s.train_samples == 4);
  CHECK(s.val_samples == 2);
  for (const char* f : {"config.txt", "train.log", "best.fck", "last.fck", "metrics.txt"})
    CHECK(std::filesystem::exists(c.run_dir / f));

  const ExperimentConfig resolved = load_experiment(c.run_dir / "config.txt");
  CHECK(resolved == c);
  CHECK(read_text(c.run_dir / "train.log").rfind("step=1 loss=", 0) == 0);
  CHECK(load_checkpoint(c.run_dir / "best.fck") == s.result.best);
  CHECK(load_checkpoint(c.run_dir / "last.fck") == s.result.last);
  CHECK(read_text(c.run_dir / "metrics.txt") == s.val_metrics.to_text());

  ExperimentConfig again = resolved;
  again.run_dir = dir / "again";
  run_training(again, again.run_dir);
  CHECK(read_text(dir / "again" / "best.fck") == read_text(c.run_dir / "best.fck"));

  ExperimentConfig small = c;
  small.min_fault_voxels = 1 << 20;
  CHECK_THROWS_AS(run_training(small, dir / "none"), DataError);
}

TEST_CASE("ablation grid and cross validation") {
  const auto dir = scratch("grid");
  ExperimentConfig c = tiny_experiment(dir);
  c.train.max_steps = 1;
  generate_corpus(c);

  const AblationTable t = run_ablation(c, c.run_dir);
  CHECK(t.cells.size() == 8);
  std::istringstream rows(t.to_text());
  std::string header, row;
  std::getline(rows, header);
  CHECK(header == "aam rotation ALL B");
  int n = 0;
  while (std::getline(rows, row)) {
    std::istringstream cols(row);
    std::string aam, rot;
    double a = -1, b = -1;
    cols >> aam >> rot >> a >> b;
    CHECK(cols);
    CHECK(a >= 0.0);
    CHECK(b >= 0.0);
    ++n;
  }
  CHECK(n == 4);
  CHECK(read_text(c.run_dir / "ablation.txt") == t.to_text());

  ExperimentConfig plain = c;
  plain.model.aam_levels.clear();
  plain.train.rotate = false;
  plain.mode = parse_mode("B");
  plain.run_dir = c.run_dir / "aam-off_rot-off_B";
  CHECK(load_experiment(plain.run_dir / "config.txt") == plain);
  const ModelParams p = load_checkpoint(plain.run_dir / "best.fck");
  for (const auto& [name, tensor] : p.tensors) CHECK(name.rfind("aam", 0) != 0);

  c.run_dir = dir / "xval";
  const CrossValidation cv = run_cross_validation(c, c.run_dir);
  REQUIRE(cv.folds.size() == 3);
  double iou = 0;
  for (const auto& f : cv.folds) iou += f.iou / 3.0;
  CHECK(cv.mean.iou == doctest::Approx(iou).epsilon(1e-12));
  for (int f = 1; f <= 3; ++f) CHECK(std::filesystem::exists(c.run_dir / ("fold" + std::to_string(f)) / "best.fck"));
  CHECK(read_text(c.run_dir / "xval.txt") == cv.to_text());
}
