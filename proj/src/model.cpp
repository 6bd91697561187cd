#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "faultseg/model.hpp"
#include "faultseg/random.hpp"

namespace faultseg {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'K', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += 4;
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n)
      throw FormatError("truncated checkpoint: expected at least " + std::to_string(pos_ + n) +
                        " bytes, got " + std::to_string(b_.size()));
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 4;
};

std::uint32_t aam_mask(const ModelConfig& c) {
  std::uint32_t m = 0;
  for (int l : c.aam_levels) m |= 1u << l;
  return m;
}

std::vector<std::uint8_t> config_block(const ModelConfig& c) {
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(c.depth));
  put_u32(out, static_cast<std::uint32_t>(c.base_channels));
  put_u32(out, aam_mask(c));
  put_u32(out, static_cast<std::uint32_t>(c.kernel));
  put_u32(out, static_cast<std::uint32_t>(c.edge));
  put_f32(out, static_cast<float>(c.sigma));
  put_u32(out, static_cast<std::uint32_t>(c.attention_activation));
  return out;
}

Shape kernel_shape(const ConvSpec& s) { return {s.cout, s.cin, s.k, s.k, s.k}; }

struct ParamCursor {
  std::span<const Var> params;
  std::size_t next = 0;

  std::pair<Var, Var> take(const ConvSpec& s) {
    if (next + (s.bias ? 2 : 1) > params.size())
      throw ShapeError("parameter list is shorter than the model layout");
    const Var w = params[next++];
    const Var b = s.bias ? params[next++] : Var{};
    return {w, b};
  }
};

template <typename T>
Var conv_layer(Graph<T>& g, Var x, const ConvSpec& s, ParamCursor& cur) {
  const auto [w, b] = cur.take(s);
  Conv3dOptions opt;
  opt.padding = {s.k / 2, s.k / 2, s.k / 2};
  return conv3d(g, x, w, b, opt);
}

template <typename T>
Var conv_relu(Graph<T>& g, Var x, const ConvSpec& s, ParamCursor& cur) {
  return relu(g, conv_layer(g, x, s, cur));
}

}  // namespace

std::string to_string(AttentionActivation a) {
  return a == AttentionActivation::sigmoid ? "sigmoid" : "linear";
}

AttentionActivation parse_attention_activation(const std::string& s) {
  if (s == "sigmoid") return AttentionActivation::sigmoid;
  if (s == "linear") return AttentionActivation::linear;
  throw ConfigError("attention_activation must be sigmoid or linear, got '" + s + "'");
}

bool ModelConfig::has_aam(int level) const {
  return std::find(aam_levels.begin(), aam_levels.end(), level) != aam_levels.end();
}

void validate(const ModelConfig& c) {
  if (c.depth < 1 || c.depth > 6) throw ConfigError("model depth must lie in 1..6");
  if (c.base_channels < 1 || c.base_channels > 256) throw ConfigError("base_channels must lie in 1..256");
  if (c.kernel < 1 || c.kernel % 2 == 0) throw ConfigError("kernel size must be odd and positive");
  if (c.edge < 1 || c.edge % (1 << c.depth) != 0)
    throw ConfigError("cuboid edge " + std::to_string(c.edge) + " is not divisible by 2^" +
                      std::to_string(c.depth));
  if ((c.edge >> c.depth) < 1) throw ConfigError("cuboid edge too small for the model depth");
  for (std::size_t i = 0; i < c.aam_levels.size(); ++i) {
    const int l = c.aam_levels[i];
    if (l < 0 || l >= c.depth)
      throw ConfigError("aam level " + std::to_string(l) + " outside 0.." + std::to_string(c.depth - 1));
    if (i > 0 && c.aam_levels[i - 1] >= l) throw ConfigError("aam levels must be strictly increasing");
  }
  if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) throw ConfigError("sigma must be positive");
  if (c.attention_activation != AttentionActivation::sigmoid &&
      c.attention_activation != AttentionActivation::linear)
    throw ConfigError("unknown attention activation");
}

std::vector<ConvSpec> conv_layout(const ModelConfig& c) {
  validate(c);
  std::vector<ConvSpec> out;
  const int k = c.kernel;
  const auto lv = [](const char* p, int l, const char* s) { return p + std::to_string(l) + s; };
  int cin = 1;
  for (int l = 0; l < c.depth; ++l) {
    out.push_back({lv("enc", l, ".a"), cin, c.channels(l), k, true, l});
    out.push_back({lv("enc", l, ".b"), c.channels(l), c.channels(l), k, true, l});
    cin = c.channels(l);
  }
  out.push_back({"mid.a", cin, c.channels(c.depth), k, true, c.depth});
  out.push_back({"mid.b", c.channels(c.depth), c.channels(c.depth), k, true, c.depth});
  for (int l = c.depth - 1; l >= 0; --l) {
    const int cl = c.channels(l);
    out.push_back({lv("dec", l, ".up"), c.channels(l + 1), cl, k, true, l});
    if (c.has_aam(l)) {
      out.push_back({lv("aam", l, ".wl"), cl, cl, 1, true, l});
      out.push_back({lv("aam", l, ".wh"), cl, cl, 1, true, l});
      out.push_back({lv("aam", l, ".ws"), cl, 1, 1, true, l});
    }
    out.push_back({lv("dec", l, ".a"), 2 * cl, cl, k, true, l});
    out.push_back({lv("dec", l, ".b"), cl, cl, k, true, l});
  }
  out.push_back({"pred", c.channels(0), 1, 1, false, 0});
  return out;
}

std::int64_t ModelParams::count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.value.numel();
  return n;
}

const Tensor<float>& ModelParams::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no parameter tensor named " + name);
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name != o.tensors[i].name || !(tensors[i].value == o.tensors[i].value)) return false;
  return true;
}

std::int64_t parameter_count(const ModelConfig& c) {
  std::int64_t n = 0;
  for (const ConvSpec& s : conv_layout(c))
    n += std::int64_t{s.cout} * s.cin * s.k * s.k * s.k + (s.bias ? s.cout : 0);
  return n;
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p;
  p.config = c;
  Rng rng(seed);
  for (const ConvSpec& s : conv_layout(c)) {
    Tensor<float> w(kernel_shape(s));
    const double stddev = std::sqrt(2.0 / (double(s.cin) * s.k * s.k * s.k));
    for (auto& v : w.data()) v = static_cast<float>(stddev * normal(rng));
    p.tensors.push_back({s.name + ".w", std::move(w)});
    if (s.bias) p.tensors.push_back({s.name + ".b", Tensor<float>({s.cout})});
  }
  return p;
}

template <typename T>
std::vector<Var> bind_params(Graph<T>& g, const ModelParams& p, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(p.tensors.size());
  for (const auto& t : p.tensors) {
    if constexpr (std::is_same_v<T, float>) vars.push_back(g.leaf(t.value, requires_grad));
    else vars.push_back(g.leaf(t.value.template cast<T>(), requires_grad));
  }
  return vars;
}

template <typename T>
AamVars aam(Graph<T>& g, Var f_low, Var f_high, std::span<const Var> w, AttentionActivation act) {
  if (w.size() != 6) throw ShapeError("aam expects 6 parameter tensors");
  const Shape& a = g.value(f_low).shape();
  const Shape& b = g.value(f_high).shape();
  if (a.size() != 4 || b.size() != 4) throw ShapeError("aam inputs must be (C, D, H, W)");
  for (int i = 1; i < 4; ++i)
    if (a[i] != b[i])
      throw ShapeError("aam spatial mismatch on axis " + std::to_string(i) + ": " + shape_str(a) +
                       " vs " + shape_str(b));
  const Var s = relu(g, add(g, conv3d(g, f_low, w[0], w[1]), conv3d(g, f_high, w[2], w[3])));
  Var theta = conv3d(g, s, w[4], w[5]);
  if (act == AttentionActivation::sigmoid) theta = sigmoid(g, theta);
  return {theta, mul(g, f_low, theta)};
}

template <typename T>
ForwardVars forward(Graph<T>& g, const ModelConfig& c, std::span<const Var> params, Var x) {
  const auto layout = conv_layout(c);
  const Shape& xs = g.value(x).shape();
  if (xs.size() != 4 || xs[0] != 1) throw ShapeError("model input must be (1, D, H, W), got " + shape_str(xs));
  for (int i = 1; i < 4; ++i)
    if (xs[i] % (1 << c.depth) != 0)
      throw ShapeError("input axis " + std::to_string(i) + " of length " + std::to_string(xs[i]) +
                       " is not divisible by 2^" + std::to_string(c.depth));
  ParamCursor cur{params};
  std::size_t li = 0;
  std::vector<Var> skips;
  Var h = x;
  for (int l = 0; l < c.depth; ++l) {
    h = conv_relu(g, h, layout[li++], cur);
    h = conv_relu(g, h, layout[li++], cur);
    skips.push_back(h);
    h = maxpool3d(g, h);
  }
  h = conv_relu(g, h, layout[li++], cur);
  h = conv_relu(g, h, layout[li++], cur);
  ForwardVars out;
  std::vector<std::pair<int, Var>> thetas;
  for (int l = c.depth - 1; l >= 0; --l) {
    const Var up = conv_relu(g, upsample3d(g, h), layout[li++], cur);
    Var low = skips[l];
    if (c.has_aam(l)) {
      std::vector<Var> w;
      for (int j = 0; j < 3; ++j) {
        const auto [kw, kb] = cur.take(layout[li++]);
        w.push_back(kw);
        w.push_back(kb);
      }
      const AamVars a = aam(g, low, up, w, c.attention_activation);
      thetas.emplace_back(l, a.theta_hat);
      low = a.gated;
    }
    const Var parts[2] = {low, up};
    h = concat(g, std::span<const Var>(parts, 2));
    h = conv_relu(g, h, layout[li++], cur);
    h = conv_relu(g, h, layout[li++], cur);
  }
  out.prob = sigmoid(g, conv_layer(g, h, layout[li++], cur));
  if (cur.next != params.size()) throw ShapeError("parameter list is longer than the model layout");
  std::sort(thetas.begin(), thetas.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [l, v] : thetas) {
    out.aam_levels.push_back(l);
    out.theta_hats.push_back(v);
  }
  return out;
}

Volume predict(const ModelParams& p, const Volume& x) {
  Graph<float> g;
  const auto vars = bind_params(g, p, false);
  const ForwardVars f = forward(g, p.config, vars, g.constant(to_tensor<float>(x)));
  Volume out = from_tensor(g.value(f.prob), VolumeKind::probability);
  return out;
}

std::int64_t conv_flops(const ConvSpec& s, std::int64_t edge) {
  const std::int64_t e = edge >> s.level;
  return 2 * std::int64_t{s.k} * s.k * s.k * s.cin * s.cout * e * e * e;
}

std::int64_t count_flops(const ModelConfig& c, std::int64_t edge) {
  validate(c);
  if (edge % (std::int64_t{1} << c.depth) != 0)
    throw ConfigError("edge is not divisible by 2^depth");
  const auto vox = [&](int level) {
    const std::int64_t e = edge >> level;
    return e * e * e;
  };
  std::int64_t n = 0;
  for (const ConvSpec& s : conv_layout(c)) {
    n += conv_flops(s, edge);
    if (s.k > 1) n += std::int64_t{s.cout} * vox(s.level);  // relu
  }
  for (int l = 0; l < c.depth; ++l) {
    n += std::int64_t{c.channels(l)} * vox(l + 1);      // maxpool
    n += std::int64_t{c.channels(l + 1)} * vox(l);      // upsample
    if (c.has_aam(l)) {
      n += 3 * std::int64_t{c.channels(l)} * vox(l);    // add, relu, gating multiply
      if (c.attention_activation == AttentionActivation::sigmoid) n += vox(l);
    }
  }
  n += vox(0);  // output sigmoid
  return n;
}

std::int64_t count_flops(const ModelConfig& c) { return count_flops(c, c.edge); }

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& p) {
  const auto layout = conv_layout(p.config);
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  const auto cfg = config_block(p.config);
  out.insert(out.end(), cfg.begin(), cfg.end());
  put_u32(out, static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& t : p.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) put_f32(out, v);
  }
  return out;
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("bad magic, not an FCK1 checkpoint");
  Reader r(bytes);
  ModelConfig c;
  c.depth = static_cast<int>(r.u32());
  c.base_channels = static_cast<int>(r.u32());
  const std::uint32_t mask = r.u32();
  c.kernel = static_cast<int>(r.u32());
  c.edge = static_cast<int>(r.u32());
  c.sigma = r.f32();
  const std::uint32_t act = r.u32();
  if (act > 1) throw FormatError("unknown attention activation code " + std::to_string(act));
  c.attention_activation = static_cast<AttentionActivation>(act);
  c.aam_levels.clear();
  for (int l = 0; l < 32; ++l)
    if (mask & (1u << l)) c.aam_levels.push_back(l);
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }
  ModelParams p = init_params(c, 0);
  const std::uint32_t n = r.u32();
  if (n != p.tensors.size())
    throw FormatError("checkpoint has " + std::to_string(n) + " tensors, the model needs " +
                      std::to_string(p.tensors.size()));
  for (auto& t : p.tensors) {
    const std::uint32_t rank = r.u32();
    Shape s(rank);
    for (auto& d : s) d = r.u32();
    if (s != t.value.shape())
      throw FormatError("tensor " + t.name + " has shape " + shape_str(s) + ", expected " +
                        shape_str(t.value.shape()));
    r.need(4 * static_cast<std::size_t>(t.value.numel()));
    for (auto& v : t.value.data()) v = r.f32();
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint tensors");
  return p;
}

void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::uint64_t config_hash(const ModelConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : config_block(c)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

#define FAULTSEG_INSTANTIATE_MODEL(T)                                                      \
  template std::vector<Var> bind_params(Graph<T>&, const ModelParams&, bool);              \
  template AamVars aam(Graph<T>&, Var, Var, std::span<const Var>, AttentionActivation);    \
  template ForwardVars forward(Graph<T>&, const ModelConfig&, std::span<const Var>, Var);

FAULTSEG_INSTANTIATE_MODEL(float)
FAULTSEG_INSTANTIATE_MODEL(double)

}  // namespace faultseg
