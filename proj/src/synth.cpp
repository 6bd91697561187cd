#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "faultseg/random.hpp"
#include "faultseg/synth.hpp"

namespace faultseg {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kPlaneAttempts = 16;

struct Bump {
  double amp, cz, cy, width;
};

struct Reflector {
  double depth, coeff;
};

void check_range(const RealRange& r, const char* name) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
    throw ConfigError(std::string("empty or non-finite range for ") + name);
}

void check_range(const IntRange& r, const char* name) {
  if (r.lo > r.hi) throw ConfigError(std::string("empty range for ") + name);
}

std::int64_t count_plane_voxels(const FaultPlane& f, int size) {
  std::int64_t n = 0;
  for (int z = 0; z < size; ++z)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) n += std::abs(f.signed_distance(z, y, x)) <= 0.5;
  return n;
}

FaultPlane sample_plane(const SynthParams& p, Rng& rng) {
  const double n = p.size;
  for (int attempt = 0; attempt < kPlaneAttempts; ++attempt) {
    const double strike = uniform(rng, p.strike.lo, p.strike.hi) * kPi / 180.0;
    const double dip = uniform(rng, p.dip.lo, p.dip.hi) * kPi / 180.0;
    FaultPlane f;
    // axis 2 is depth; a vertical plane (dip 90) has no depth component
    f.normal = {std::sin(dip) * std::cos(strike), std::sin(dip) * std::sin(strike), std::cos(dip)};
    const double c[3] = {uniform(rng, 0.25 * n, 0.75 * n), uniform(rng, 0.25 * n, 0.75 * n),
                         uniform(rng, 0.25 * n, 0.75 * n)};
    f.offset = f.normal[0] * c[0] + f.normal[1] * c[1] + f.normal[2] * c[2];
    const double t = uniform(rng, p.throw_voxels.lo, p.throw_voxels.hi);
    f.throw_ = uniform01(rng) < 0.5 ? -t : t;
    if (count_plane_voxels(f, p.size) >= p.size) return f;
  }
  throw DataError("could not place a fault plane inside the cuboid after 16 attempts");
}

}  // namespace

void validate(const SynthParams& p) {
  if (p.size < 4) throw ConfigError("synthetic cuboid size must be at least 4");
  if (p.size > 1024) throw ConfigError("synthetic cuboid size above 1024");
  check_range(p.layer_count, "layer_count");
  check_range(p.fold_amplitude, "fold_amplitude");
  check_range(p.fault_count, "fault_count");
  check_range(p.dip, "dip");
  check_range(p.strike, "strike");
  check_range(p.throw_voxels, "throw");
  check_range(p.noise_std, "noise_std");
  if (p.layer_count.lo < 1) throw ConfigError("layer_count must be at least 1");
  if (p.fault_count.lo < 0 || p.fault_count.hi > 4) throw ConfigError("fault_count must lie in 0..4");
  if (p.fault_count.hi > 0 && p.throw_voxels.lo < 1.0)
    throw ConfigError("fault throw must be at least 1 voxel");
  if (p.fold_amplitude.lo < 0.0) throw ConfigError("fold amplitude must be non-negative");
  if (p.dip.lo < 0.0 || p.dip.hi > 90.0) throw ConfigError("dip must lie in [0, 90] degrees");
  if (p.noise_std.lo < 0.0) throw ConfigError("noise_std must be non-negative");
  if (!(p.peak_frequency > 0.0 && p.peak_frequency < 0.5))
    throw ConfigError("peak frequency must lie in (0, 0.5) cycles per voxel");
}

double ricker(double t, double f) {
  const double a = kPi * kPi * f * f * t * t;
  return (1.0 - 2.0 * a) * std::exp(-a);
}

SynthVolume generate(const SynthParams& p) {
  validate(p);
  Rng rng(p.seed);
  const int n = p.size;

  std::vector<Bump> bumps(static_cast<std::size_t>(uniform_int(rng, 2, 4)));
  double fold_max = 0.0;
  for (Bump& b : bumps) {
    b.amp = uniform(rng, p.fold_amplitude.lo, p.fold_amplitude.hi) * (uniform01(rng) < 0.5 ? -1 : 1);
    b.cz = uniform(rng, 0, n);
    b.cy = uniform(rng, 0, n);
    b.width = uniform(rng, n / 6.0, n / 3.0);
    fold_max += std::abs(b.amp);
  }

  const int fault_count = static_cast<int>(uniform_int(rng, p.fault_count.lo, p.fault_count.hi));
  std::vector<FaultPlane> faults;
  for (int i = 0; i < fault_count; ++i) faults.push_back(sample_plane(p, rng));

  // reflectors span every depth a shifted sample can reach, plus the wavelet tail
  const double tail = 4.5 / (kPi * p.peak_frequency);
  const double pad = fold_max + fault_count * p.throw_voxels.hi + tail + 1.0;
  const double span = n + 2.0 * pad;
  const auto per_cuboid = uniform_int(rng, p.layer_count.lo, p.layer_count.hi);
  const auto layers = static_cast<std::size_t>(std::ceil(double(per_cuboid) * span / n));
  std::vector<Reflector> refl(layers);
  for (Reflector& r : refl) {
    r.depth = uniform(rng, -pad, n + pad);
    r.coeff = uniform(rng, -1.0, 1.0);
  }
  std::sort(refl.begin(), refl.end(), [](const Reflector& a, const Reflector& b) { return a.depth < b.depth; });

  const Dims dims{n, n, n};
  SynthVolume out{Volume(dims, VolumeKind::amplitude), Volume(dims, VolumeKind::label), faults, 0.0};
  std::vector<double> fold(static_cast<std::size_t>(n) * n);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y) {
      double s = 0.0;
      for (const Bump& b : bumps) {
        const double r2 = (z - b.cz) * (z - b.cz) + (y - b.cy) * (y - b.cy);
        s += b.amp * std::exp(-r2 / (2.0 * b.width * b.width));
      }
      fold[static_cast<std::size_t>(z) * n + y] = s;
    }

  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double src = x - fold[static_cast<std::size_t>(z) * n + y];
        bool on_fault = false;
        for (const FaultPlane& f : faults) {
          const double s = f.signed_distance(z, y, x);
          on_fault = on_fault || std::abs(s) <= 0.5;
          // linear ramp across the one-voxel fault core
          src -= f.throw_ * std::clamp(s + 0.5, 0.0, 1.0);
        }
        const auto lo = std::lower_bound(refl.begin(), refl.end(), src - tail,
                                         [](const Reflector& r, double d) { return r.depth < d; });
        double a = 0.0;
        for (auto it = lo; it != refl.end() && it->depth <= src + tail; ++it)
          a += it->coeff * ricker(src - it->depth, p.peak_frequency);
        out.amplitude.at(z, y, x) = static_cast<float>(a);
        out.label.at(z, y, x) = on_fault ? 1.0f : 0.0f;
      }

  const double signal_std = moments(out.amplitude).stddev;
  out.noise_level = uniform(rng, p.noise_std.lo, p.noise_std.hi);
  for (float& v : out.amplitude.voxels) v += static_cast<float>(out.noise_level * signal_std * normal(rng));
  out.amplitude = standardize(out.amplitude);
  return out;
}

std::vector<const ManifestEntry*> Manifest::split(bool train) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.train == train) out.push_back(&e);
  return out;
}

std::uint64_t volume_seed(std::uint64_t corpus_seed, std::size_t index) {
  return splitmix64(splitmix64(corpus_seed) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
}

std::vector<bool> split_assignment(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw ConfigError("train fraction must lie in [0, 1]");
  Rng rng(splitmix64(seed ^ 0x5eedULL));
  const auto order = shuffled_indices(n, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(double(n) * train_fraction));
  std::vector<bool> train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) train[order[i]] = true;
  return train;
}

std::filesystem::path amplitude_path(const std::filesystem::path& dir, const ManifestEntry& e) {
  return dir / (e.stem + "_amp.fvl");
}
std::filesystem::path label_path(const std::filesystem::path& dir, const ManifestEntry& e) {
  return dir / (e.stem + "_lbl.fvl");
}

Manifest make_corpus(std::size_t n, const SynthParams& params, double train_fraction,
                     const std::filesystem::path& dir) {
  if (n < 2) throw ConfigError("a corpus needs at least 2 volumes");
  validate(params);
  std::filesystem::create_directories(dir);
  const auto train = split_assignment(n, train_fraction, params.seed);
  Manifest m;
  m.size = params.size;
  for (std::size_t i = 0; i < n; ++i) {
    SynthParams vp = params;
    vp.seed = volume_seed(params.seed, i);
    const SynthVolume sv = generate(vp);
    char stem[32];
    std::snprintf(stem, sizeof stem, "vol%04zu", i);
    ManifestEntry e{stem, vp.seed, train[i], sv.faults, 0};
    for (float v : sv.label.voxels) e.fault_voxels += v == 1.0f;
    save_volume(sv.amplitude, amplitude_path(dir, e));
    save_volume(sv.label, label_path(dir, e));
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, dir / "manifest.txt");
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "# faultseg corpus manifest\n";
  out << "size=" << m.size << " count=" << m.entries.size() << '\n';
  char buf[256];
  for (const auto& e : m.entries) {
    out << "stem=" << e.stem << " seed=" << e.seed << " split=" << (e.train ? "train" : "val")
        << " faults=" << e.faults.size() << " fault_voxels=" << e.fault_voxels;
    for (const auto& f : e.faults) {
      std::snprintf(buf, sizeof buf, " plane=%.17g,%.17g,%.17g,%.17g,%.17g", f.normal[0], f.normal[1],
                    f.normal[2], f.offset, f.throw_);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t expected = 0;
  bool header = false;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream tokens(line);
    std::string tok;
    ManifestEntry e;
    std::size_t faults = 0;
    bool is_header = false;
    while (tokens >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) fail("token without '=': " + tok);
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      try {
        if (key == "size") {
          m.size = std::stoi(val);
          is_header = true;
        } else if (key == "count") {
          expected = std::stoull(val);
        } else if (key == "stem") {
          e.stem = val;
        } else if (key == "seed") {
          e.seed = std::stoull(val);
        } else if (key == "split") {
          if (val != "train" && val != "val") fail("split must be train or val");
          e.train = val == "train";
        } else if (key == "faults") {
          faults = std::stoull(val);
        } else if (key == "fault_voxels") {
          e.fault_voxels = std::stoll(val);
        } else if (key == "plane") {
          FaultPlane f;
          char c1, c2, c3, c4;
          std::istringstream pv(val);
          pv >> f.normal[0] >> c1 >> f.normal[1] >> c2 >> f.normal[2] >> c3 >> f.offset >> c4 >> f.throw_;
          if (!pv || c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') fail("bad plane " + val);
          e.faults.push_back(f);
        } else {
          fail("unknown manifest key " + key);
        }
      } catch (const std::logic_error&) {
        fail("bad value for " + key + ": " + val);
      }
    }
    if (is_header) {
      header = true;
      continue;
    }
    if (e.stem.empty()) fail("record without stem");
    if (faults != e.faults.size()) fail("fault count does not match the plane list");
    m.entries.push_back(std::move(e));
  }
  if (!header) throw DataError(path.string() + ": missing size/count header");
  if (m.entries.size() != expected)
    throw DataError(path.string() + ": manifest lists " + std::to_string(m.entries.size()) +
                    " records, header says " + std::to_string(expected));
  return m;
}

}  // namespace faultseg
