#include "faultseg/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <type_traits>

namespace faultseg {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end)
    throw ConfigError("bad value for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError("bad value for " + key + ": '" + s + "' (expected true or false)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string join_modes(const std::vector<LabelingMode>& modes) {
  std::string s;
  for (const auto& m : modes) s += (s.empty() ? "" : ",") + m.name();
  return s;
}

std::string join_levels(const std::vector<int>& levels) {
  if (levels.empty()) return "none";
  std::string s;
  for (int l : levels) s += (s.empty() ? "" : ",") + std::to_string(l);
  return s;
}

struct Key {
  std::string name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
  else if constexpr (std::is_same_v<T, double>) return fmt(v);
  else if constexpr (std::is_same_v<T, std::filesystem::path>) return v.string();
  else return std::to_string(v);
}

template <typename T>
T parse_value(const std::string& key, const std::string& s) {
  if constexpr (std::is_same_v<T, bool>) return parse_bool(key, s);
  else if constexpr (std::is_same_v<T, std::filesystem::path>) return s;
  else return parse_number<T>(key, s);
}

template <typename T>
Key field(std::string name, T& (*ref)(ExperimentConfig&)) {
  return {name,
          [ref](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return format_value(ref(copy));
          },
          [ref, name](ExperimentConfig& c, const std::string& v) { ref(c) = parse_value<T>(name, v); }};
}

const std::vector<Key>& keys() {
  using C = ExperimentConfig;
  static const std::vector<Key> k = {
      field("synth.seed", +[](C& c) -> std::uint64_t& { return c.synth.seed; }),
      field("synth.size", +[](C& c) -> int& { return c.synth.size; }),
      field("synth.layer_count_min", +[](C& c) -> int& { return c.synth.layer_count.lo; }),
      field("synth.layer_count_max", +[](C& c) -> int& { return c.synth.layer_count.hi; }),
      field("synth.fold_amplitude_min", +[](C& c) -> double& { return c.synth.fold_amplitude.lo; }),
      field("synth.fold_amplitude_max", +[](C& c) -> double& { return c.synth.fold_amplitude.hi; }),
      field("synth.fault_count_min", +[](C& c) -> int& { return c.synth.fault_count.lo; }),
      field("synth.fault_count_max", +[](C& c) -> int& { return c.synth.fault_count.hi; }),
      field("synth.dip_min", +[](C& c) -> double& { return c.synth.dip.lo; }),
      field("synth.dip_max", +[](C& c) -> double& { return c.synth.dip.hi; }),
      field("synth.strike_min", +[](C& c) -> double& { return c.synth.strike.lo; }),
      field("synth.strike_max", +[](C& c) -> double& { return c.synth.strike.hi; }),
      field("synth.throw_min", +[](C& c) -> double& { return c.synth.throw_voxels.lo; }),
      field("synth.throw_max", +[](C& c) -> double& { return c.synth.throw_voxels.hi; }),
      field("synth.peak_frequency", +[](C& c) -> double& { return c.synth.peak_frequency; }),
      field("synth.noise_min", +[](C& c) -> double& { return c.synth.noise_std.lo; }),
      field("synth.noise_max", +[](C& c) -> double& { return c.synth.noise_std.hi; }),
      field("corpus.count", +[](C& c) -> std::size_t& { return c.corpus_count; }),
      field("corpus.train_fraction", +[](C& c) -> double& { return c.train_fraction; }),
      field("corpus.dir", +[](C& c) -> std::filesystem::path& { return c.corpus_dir; }),
      field("model.depth", +[](C& c) -> int& { return c.model.depth; }),
      field("model.base_channels", +[](C& c) -> int& { return c.model.base_channels; }),
      {"model.aam_levels", [](const C& c) { return join_levels(c.model.aam_levels); },
       [](C& c, const std::string& v) {
         c.model.aam_levels.clear();
         if (v == "none") return;
         for (const auto& s : split_list(v)) c.model.aam_levels.push_back(parse_number<int>("model.aam_levels", s));
       }},
      field("model.kernel", +[](C& c) -> int& { return c.model.kernel; }),
      field("model.edge", +[](C& c) -> int& { return c.model.edge; }),
      field("model.sigma", +[](C& c) -> double& { return c.model.sigma; }),
      {"model.attention_activation", [](const C& c) { return to_string(c.model.attention_activation); },
       [](C& c, const std::string& v) { c.model.attention_activation = parse_attention_activation(v); }},
      field("train.epochs", +[](C& c) -> int& { return c.train.epochs; }),
      field("train.batch_size", +[](C& c) -> int& { return c.train.batch_size; }),
      field("train.lr", +[](C& c) -> double& { return c.train.adam.lr; }),
      field("train.beta1", +[](C& c) -> double& { return c.train.adam.beta1; }),
      field("train.beta2", +[](C& c) -> double& { return c.train.adam.beta2; }),
      field("train.eps", +[](C& c) -> double& { return c.train.adam.eps; }),
      field("train.val_every", +[](C& c) -> int& { return c.train.val_every; }),
      field("train.rotate", +[](C& c) -> bool& { return c.train.rotate; }),
      field("train.alpha", +[](C& c) -> double& { return c.train.alpha; }),
      field("train.seed", +[](C& c) -> std::uint64_t& { return c.train.seed; }),
      field("train.max_steps", +[](C& c) -> std::int64_t& { return c.train.max_steps; }),
      {"samples.mode", [](const C& c) { return c.mode.name(); },
       [](C& c, const std::string& v) { c.mode = parse_mode(v); }},
      field("samples.stride", +[](C& c) -> std::int64_t& { return c.stride; }),
      field("samples.min_fault_voxels", +[](C& c) -> std::int64_t& { return c.min_fault_voxels; }),
      field("predict.overlap", +[](C& c) -> std::int64_t& { return c.overlap; }),
      field("xval.folds", +[](C& c) -> std::size_t& { return c.folds; }),
      {"ablate.modes", [](const C& c) { return join_modes(c.ablate_modes); },
       [](C& c, const std::string& v) {
         c.ablate_modes.clear();
         for (const auto& s : split_list(v)) c.ablate_modes.push_back(parse_mode(s));
       }},
      field("run.dir", +[](C& c) -> std::filesystem::path& { return c.run_dir; }),
  };
  return k;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<CuboidSample> load_entries(const ExperimentConfig& c, const ModelConfig& model,
                                       const std::vector<const ManifestEntry*>& entries, const LabelingMode& mode) {
  SampleOptions opt = sample_options(c);
  opt.mode = mode;
  std::vector<CuboidSample> out;
  for (const ManifestEntry* e : entries) {
    auto s = extract_samples(load_volume(amplitude_path(c.corpus_dir, *e)), load_volume(label_path(c.corpus_dir, *e)),
                             opt, model, e->stem);
    std::move(s.begin(), s.end(), std::back_inserter(out));
  }
  return out;
}

std::string metric_row(const std::string& label, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-6s %9.4f %9.4f %9.4f %9.4f %9s\n", label.c_str(), r.precision, r.recall, r.iou,
                r.dice, r.hausdorff ? fmt(*r.hausdorff).substr(0, 9).c_str() : "undefined");
  return buf;
}

}  // namespace

std::vector<std::string> experiment_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

std::string to_text(const ExperimentConfig& c) {
  std::string s;
  for (const auto& k : keys()) s += k.name + "=" + k.get(c) + "\n";
  return s;
}

void set_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : keys())
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_experiment(const std::string& text, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
    set_key(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_experiment(s.str());
}

void save_experiment(const ExperimentConfig& c, const std::filesystem::path& path) { write_text(path, to_text(c)); }

void validate(const ExperimentConfig& c) {
  validate(c.synth);
  validate(c.model);
  validate(c.train);
  if (c.corpus_count < 2) throw ConfigError("corpus.count must be >= 2");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("corpus.train_fraction must lie in (0, 1)");
  if (c.stride < 1) throw ConfigError("samples.stride must be >= 1");
  if (c.min_fault_voxels < 0) throw ConfigError("samples.min_fault_voxels must be >= 0");
  if (c.overlap < 0 || 2 * c.overlap > c.model.edge) throw ConfigError("predict.overlap must satisfy 0 <= 2 w <= edge");
  if (c.folds < 2) throw ConfigError("xval.folds must be >= 2");
  if (c.ablate_modes.empty()) throw ConfigError("ablate.modes is empty");
}

SampleOptions sample_options(const ExperimentConfig& c) {
  SampleOptions o;
  o.mode = c.mode;
  o.edge = c.model.edge;
  o.stride = c.stride;
  o.min_fault_voxels = c.min_fault_voxels;
  return o;
}

ExperimentConfig quick_profile() {
  ExperimentConfig c;
  c.synth.size = 32;
  c.model.depth = 2;
  c.model.base_channels = 8;
  c.model.edge = 32;
  c.train.batch_size = 1;
  c.overlap = 8;
  return c;
}

ExperimentConfig desk_profile() { return ExperimentConfig{}; }

Manifest generate_corpus(const ExperimentConfig& c) {
  validate(c);
  return make_corpus(c.corpus_count, c.synth, c.train_fraction, c.corpus_dir);
}

void require_compatible(const ModelConfig& expected, const ModelParams& checkpoint) {
  if (config_hash(expected) != config_hash(checkpoint.config)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "config hash mismatch: config %016llx, checkpoint %016llx",
                  static_cast<unsigned long long>(config_hash(expected)),
                  static_cast<unsigned long long>(config_hash(checkpoint.config)));
    throw ConfigError(buf);
  }
}

RunSummary run_training(const ExperimentConfig& c, const std::filesystem::path& dir, std::ostream* progress) {
  validate(c);
  const Manifest m = read_manifest(c.corpus_dir / "manifest.txt");
  if (m.size < c.model.edge) throw ConfigError("corpus volumes are smaller than model.edge");
  return run_training(c, load_entries(c, c.model, m.split(true), c.mode), load_entries(c, c.model, m.split(false), c.mode),
                      dir, progress);
}

RunSummary run_training(const ExperimentConfig& c, const std::vector<CuboidSample>& train_set,
                        const std::vector<CuboidSample>& val_set, const std::filesystem::path& dir,
                        std::ostream* progress) {
  validate(c);
  if (train_set.empty()) throw DataError("no training cuboids survive the fault-voxel filter");
  if (val_set.empty()) throw DataError("no validation cuboids survive the fault-voxel filter");
  std::filesystem::create_directories(dir);
  ExperimentConfig resolved = c;
  resolved.run_dir = dir;
  save_experiment(resolved, dir / "config.txt");
  std::ofstream log(dir / "train.log", std::ios::binary);
  if (!log) throw DataError("cannot write " + (dir / "train.log").string());

  RunSummary s;
  s.train_samples = train_set.size();
  s.val_samples = val_set.size();
  s.result = train(train_set, val_set, c.model, c.train, [&](const LogLine& line, bool best, const ModelParams& p) {
    log << line.to_text() << '\n' << std::flush;
    if (progress) *progress << dir.filename().string() << ' ' << line.to_text() << (best ? " *" : "") << std::endl;
    if (best) save_checkpoint(p, dir / "best.fck");
  });
  save_checkpoint(s.result.last, dir / "last.fck");
  s.val_metrics = evaluate_samples(s.result.best, val_set);
  write_text(dir / "metrics.txt", s.val_metrics.to_text());
  return s;
}

const AblationCell& AblationTable::at(bool aam, bool rotate, const LabelingMode& mode) const {
  for (const auto& cell : cells)
    if (cell.aam == aam && cell.rotate == rotate && cell.mode == mode) return cell;
  throw ConfigError("no ablation cell for mode " + mode.name());
}

std::string AblationTable::to_text() const {
  std::string s = "aam rotation";
  for (const auto& m : modes) s += " " + m.name();
  s += "\n";
  for (bool aam : {true, false})
    for (bool rot : {true, false}) {
      s += std::string(aam ? "on " : "off") + " " + (rot ? "on      " : "off     ");
      for (const auto& m : modes) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.4f", at(aam, rot, m).metrics.iou);
        s += buf;
      }
      s += "\n";
    }
  return s;
}

AblationTable run_ablation(const ExperimentConfig& c, const std::filesystem::path& dir, std::ostream* progress) {
  validate(c);
  if (c.model.aam_levels.empty()) throw ConfigError("ablation needs model.aam_levels for the AAM rows");
  const Manifest m = read_manifest(c.corpus_dir / "manifest.txt");
  AblationTable table;
  table.modes = c.ablate_modes;
  for (bool aam : {true, false}) {
    ExperimentConfig base = c;
    if (!aam) base.model.aam_levels.clear();
    for (const auto& mode : c.ablate_modes) {
      base.mode = mode;
      const auto tr = load_entries(base, base.model, m.split(true), mode);
      const auto va = load_entries(base, base.model, m.split(false), mode);
      for (bool rot : {true, false}) {
        ExperimentConfig run = base;
        run.train.rotate = rot;
        const std::string name = std::string("aam-") + (aam ? "on" : "off") + "_rot-" + (rot ? "on" : "off") + "_" + mode.name();
        table.cells.push_back({aam, rot, mode, run_training(run, tr, va, dir / name, progress).val_metrics});
      }
    }
  }
  std::filesystem::create_directories(dir);
  write_text(dir / "ablation.txt", table.to_text());
  return table;
}

std::string CrossValidation::to_text() const {
  std::string s = "fold   precision    recall       iou      dice hausdorff\n";
  for (std::size_t i = 0; i < folds.size(); ++i) s += metric_row(std::to_string(i + 1), folds[i]);
  s += metric_row("mean", mean);
  return s;
}

CrossValidation run_cross_validation(const ExperimentConfig& c, const std::filesystem::path& dir,
                                     std::ostream* progress) {
  validate(c);
  const Manifest m = read_manifest(c.corpus_dir / "manifest.txt");
  const auto folds = kfold_split(m.entries.size(), c.folds, c.train.seed);
  CrossValidation cv;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<const ManifestEntry*> held, rest;
    std::vector<bool> in_fold(m.entries.size(), false);
    for (std::size_t i : folds[f]) in_fold[i] = true;
    for (std::size_t i = 0; i < m.entries.size(); ++i) (in_fold[i] ? held : rest).push_back(&m.entries[i]);
    const auto tr = load_entries(c, c.model, rest, c.mode), va = load_entries(c, c.model, held, c.mode);
    cv.folds.push_back(run_training(c, tr, va, dir / ("fold" + std::to_string(f + 1)), progress).val_metrics);
  }
  double hd = 0.0;
  int defined = 0;
  for (const auto& r : cv.folds) {
    cv.mean.tp += r.tp, cv.mean.fp += r.fp, cv.mean.fn += r.fn, cv.mean.tn += r.tn;
    cv.mean.precision += r.precision / double(cv.folds.size());
    cv.mean.recall += r.recall / double(cv.folds.size());
    cv.mean.iou += r.iou / double(cv.folds.size());
    cv.mean.dice += r.dice / double(cv.folds.size());
    if (r.hausdorff) hd += *r.hausdorff, ++defined;
  }
  if (defined) cv.mean.hausdorff = hd / defined;
  std::filesystem::create_directories(dir);
  write_text(dir / "xval.txt", cv.to_text());
  return cv;
}

}  // namespace faultseg
