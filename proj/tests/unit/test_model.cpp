#include <doctest.h>

#include <cmath>
#include <map>

#include "../support/fixtures.hpp"
#include "faultseg/grad_check.hpp"

using namespace faultseg;
using namespace faultseg::testing;

namespace {

Tensor<float> random_tensor(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<float> t(s);
  for (auto& v : t.data()) v = static_cast<float>(scale * normal(rng));
  return t;
}

// Plain U-Net written directly against the primitives, for the AAM-free reduction.
Var plain_unet(Graph<float>& g, const ModelParams& p, Var x) {
  const ModelConfig& c = p.config;
  std::map<std::string, Var> w;
  for (const auto& t : p.tensors) w[t.name] = g.constant(t.value);
  Conv3dOptions same;
  same.padding = {1, 1, 1};
  auto cr = [&](Var h, const std::string& n) { return relu(g, conv3d(g, h, w[n + ".w"], w[n + ".b"], same)); };
  std::vector<Var> skips;
  Var h = x;
  for (int l = 0; l < c.depth; ++l) {
    h = cr(cr(h, "enc" + std::to_string(l) + ".a"), "enc" + std::to_string(l) + ".b");
    skips.push_back(h);
    h = maxpool3d(g, h);
  }
  h = cr(cr(h, "mid.a"), "mid.b");
  for (int l = c.depth - 1; l >= 0; --l) {
    const std::string n = "dec" + std::to_string(l);
    const Var up = cr(upsample3d(g, h), n + ".up");
    const Var parts[2] = {skips[l], up};
    h = cr(cr(concat(g, std::span<const Var>(parts, 2)), n + ".a"), n + ".b");
  }
  return sigmoid(g, conv3d(g, h, w["pred.w"], Var{}));
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(validate(c));
  c.edge = 60;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.aam_levels = {0, 3};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.kernel = 2;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK(parse_attention_activation("linear") == AttentionActivation::linear);
  CHECK_THROWS_AS(parse_attention_activation("tanh"), ConfigError);
}

TEST_CASE("parameter count matches the stored tensors") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig c;
    c.depth = static_cast<int>(uniform_int(rng, 1, 4));
    c.base_channels = static_cast<int>(uniform_int(rng, 1, 12));
    c.edge = 16 << (rng() % 2);
    c.aam_levels.clear();
    for (int l = 0; l < c.depth; ++l)
      if (rng() % 2) c.aam_levels.push_back(l);
    const ModelParams p = init_params(c, trial);
    std::int64_t enumerated = 0;
    for (const auto& t : p.tensors) {
      std::int64_t n = 1;
      for (auto d : t.value.shape()) n *= d;
      enumerated += n;
    }
    CHECK(parameter_count(c) == enumerated);
    CHECK(p.count() == enumerated);
    // closed form: encoder, bottleneck, decoder, attention, prediction
    const int k3 = 27;
    std::int64_t closed = 0;
    int cin = 1;
    for (int l = 0; l <= c.depth; ++l) {
      const std::int64_t cl = c.channels(l);
      closed += cl * cin * k3 + cl + cl * cl * k3 + cl;
      cin = static_cast<int>(cl);
    }
    for (int l = 0; l < c.depth; ++l) {
      const std::int64_t cl = c.channels(l), ch = c.channels(l + 1);
      closed += cl * ch * k3 + cl + cl * 2 * cl * k3 + cl + cl * cl * k3 + cl;
      if (c.has_aam(l)) closed += 2 * (cl * cl + cl) + cl + 1;
    }
    closed += c.channels(0);
    CHECK(parameter_count(c) == closed);
  }
}

TEST_CASE("init") {
  const ModelConfig c;
  const ModelParams a = init_params(c, 5), b = init_params(c, 5);
  CHECK(a == b);
  CHECK_FALSE(a == init_params(c, 6));
  for (const auto& t : a.tensors) {
    if (t.name.ends_with(".b")) {
      for (float v : t.value.data()) REQUIRE(v == 0.0f);
    }
  }
  const Tensor<float>& w = a.at("mid.b.w");
  double ss = 0.0, sum = 0.0;
  for (float v : w.data()) {
    sum += v;
    ss += double(v) * v;
  }
  const double n = double(w.numel());
  const double stddev = std::sqrt(ss / n - (sum / n) * (sum / n));
  const double expected = std::sqrt(2.0 / (128.0 * 27.0));
  CHECK(std::abs(stddev / expected - 1.0) < 0.1);
}

TEST_CASE("aam") {
  Graph<float> g;
  const Shape fs{3, 4, 4, 4};
  const Var fl = g.constant(random_tensor(fs, 1));
  const Var fh = g.constant(random_tensor(fs, 2));
  SUBCASE("zero projection gives one half") {
    std::vector<Var> w = {g.constant(random_tensor({3, 3, 1, 1, 1}, 3)), g.constant(Tensor<float>({3})),
                          g.constant(random_tensor({3, 3, 1, 1, 1}, 4)), g.constant(Tensor<float>({3})),
                          g.constant(Tensor<float>({1, 3, 1, 1, 1})), g.constant(Tensor<float>({1}))};
    const AamVars a = aam(g, fl, fh, w, AttentionActivation::sigmoid);
    for (float v : g.value(a.theta_hat).data()) CHECK(v == 0.5f);
    const auto& flv = g.value(fl);
    const auto& gv = g.value(a.gated);
    for (std::int64_t i = 0; i < flv.numel(); ++i) CHECK(gv[i] == 0.5f * flv[i]);
  }
  SUBCASE("bounds and attenuation over random parameters") {
    for (int trial = 0; trial < 30; ++trial) {
      const double s = 0.2 + trial;
      std::vector<Var> w = {g.constant(random_tensor({3, 3, 1, 1, 1}, 10 + trial, s)),
                            g.constant(random_tensor({3}, 40 + trial, s)),
                            g.constant(random_tensor({3, 3, 1, 1, 1}, 70 + trial, s)),
                            g.constant(random_tensor({3}, 100 + trial, s)),
                            g.constant(random_tensor({1, 3, 1, 1, 1}, 130 + trial, s)),
                            g.constant(random_tensor({1}, 160 + trial, s))};
      const AamVars a = aam(g, fl, fh, w, AttentionActivation::sigmoid);
      const auto& th = g.value(a.theta_hat);
      CHECK(th.shape() == Shape{1, 4, 4, 4});
      const auto& flv = g.value(fl);
      const auto& gv = g.value(a.gated);
      float max_l = 0, max_g = 0;
      for (std::int64_t i = 0; i < flv.numel(); ++i) {
        REQUIRE(std::abs(gv[i]) <= std::abs(flv[i]));
        max_l = std::max(max_l, std::abs(flv[i]));
        max_g = std::max(max_g, std::abs(gv[i]));
      }
      CHECK(max_g <= max_l);
      for (float v : th.data()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    }
  }
  SUBCASE("spatial mismatch") {
    const Var bad = g.constant(random_tensor({3, 2, 4, 4}, 9));
    std::vector<Var> w(6, fl);
    CHECK_THROWS_AS(aam(g, fl, bad, w, AttentionActivation::sigmoid), ShapeError);
  }
}

TEST_CASE("theta_hat stays strictly inside (0, 1) for moderate logits") {
  Graph<double> g;
  const Var fl = g.constant(random_tensor({2, 2, 2, 2}, 1).cast<double>());
  std::vector<Var> w;
  for (int i = 0; i < 6; ++i) {
    const Shape s = i == 4 ? Shape{1, 2, 1, 1, 1} : i == 5 ? Shape{1} : i % 2 ? Shape{2} : Shape{2, 2, 1, 1, 1};
    w.push_back(g.constant(random_tensor(s, 20 + i).cast<double>()));
  }
  const AamVars a = aam(g, fl, fl, w, AttentionActivation::sigmoid);
  for (double v : g.value(a.theta_hat).data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("forward shapes, range and purity") {
  for (int edge : {32, 64}) {
    ModelConfig c;
    c.edge = edge;
    c.base_channels = edge == 64 ? 16 : 8;
    const ModelParams p = init_params(c, 1);
    Rng rng(edge);
    Volume x({edge, edge, edge}, VolumeKind::amplitude);
    for (auto& v : x.voxels) v = static_cast<float>(normal(rng));
    Graph<float> g;
    const auto vars = bind_params(g, p, false);
    const ForwardVars f = forward(g, c, vars, g.constant(to_tensor<float>(x)));
    CHECK(g.value(f.prob).shape() == Shape{1, edge, edge, edge});
    REQUIRE(f.theta_hats.size() == 2);
    CHECK(f.aam_levels == std::vector<int>{0, 1});
    CHECK(g.value(f.theta_hats[0]).shape() == Shape{1, edge, edge, edge});
    CHECK(g.value(f.theta_hats[1]).shape() == Shape{1, edge / 2, edge / 2, edge / 2});
    for (float v : g.value(f.prob).data()) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
    }
    if (edge == 32) {
      CHECK(predict(p, x) == predict(p, x));
      CHECK(predict(p, x).voxels == std::vector<float>(g.value(f.prob).data().begin(), g.value(f.prob).data().end()));
    }
  }
}

TEST_CASE("without attention the network is the plain U-Net") {
  ModelConfig c;
  c.edge = 16;
  c.depth = 2;
  c.base_channels = 4;
  c.aam_levels = {};
  const ModelParams p = init_params(c, 8);
  std::vector<std::string> names;
  for (const auto& t : p.tensors) names.push_back(t.name);
  const std::vector<std::string> expected = {
      "enc0.a.w", "enc0.a.b", "enc0.b.w", "enc0.b.b", "enc1.a.w", "enc1.a.b", "enc1.b.w", "enc1.b.b",
      "mid.a.w",  "mid.a.b",  "mid.b.w",  "mid.b.b",  "dec1.up.w", "dec1.up.b", "dec1.a.w", "dec1.a.b",
      "dec1.b.w", "dec1.b.b", "dec0.up.w", "dec0.up.b", "dec0.a.w", "dec0.a.b", "dec0.b.w", "dec0.b.b",
      "pred.w"};
  CHECK(names == expected);
  Rng rng(4);
  Volume x({16, 16, 16}, VolumeKind::amplitude);
  for (auto& v : x.voxels) v = static_cast<float>(normal(rng));
  Graph<float> g;
  const Var ref = plain_unet(g, p, g.constant(to_tensor<float>(x)));
  CHECK(predict(p, x).voxels == std::vector<float>(g.value(ref).data().begin(), g.value(ref).data().end()));
}

TEST_CASE("tiny network full-loss gradient check") {
  double worst_component = 0.0, worst_direction = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const NetGradTrial t = make_net_grad_trial(trial);
    const MultiFunction loss = t.loss();
    worst_component =
        std::max(worst_component, grad_check_report(loss, t.params, kNetGradStep, kNetGradFloor).max_rel_error);
    Rng rng(900 + trial);
    std::vector<Tensor<double>> dir;
    for (const auto& q : t.params) {
      Tensor<double> d(q.shape());
      for (auto& v : d.data()) v = normal(rng);
      dir.push_back(d);
    }
    worst_direction = std::max(worst_direction, directional_grad_check(loss, t.params, dir, 1e-6).max_rel_error);
  }
  MESSAGE("tiny net: componentwise " << worst_component << ", directional " << worst_direction);
  CHECK(worst_component < 1e-4);
  CHECK(worst_direction < 1e-4);
}

TEST_CASE("flops") {
  ConvSpec one{"x", 1, 1, 1, true, 0};
  CHECK(conv_flops(one, 64) == 524288);
  ConvSpec a{"a", 8, 16, 3, true, 1}, b{"b", 16, 32, 3, true, 1};
  CHECK(conv_flops(b, 64) == 4 * conv_flops(a, 64));

  // independent layer-by-layer enumeration of the default network on 64^3
  const ModelConfig c;
  std::int64_t n = 0;
  const auto conv = [&](std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t e) {
    n += 2 * k * k * k * cin * cout * e * e * e;
  };
  const auto elem = [&](std::int64_t ch, std::int64_t e) { n += ch * e * e * e; };
  // encoder
  conv(1, 16, 3, 64), elem(16, 64), conv(16, 16, 3, 64), elem(16, 64), elem(16, 32);
  conv(16, 32, 3, 32), elem(32, 32), conv(32, 32, 3, 32), elem(32, 32), elem(32, 16);
  conv(32, 64, 3, 16), elem(64, 16), conv(64, 64, 3, 16), elem(64, 16), elem(64, 8);
  // bottleneck
  conv(64, 128, 3, 8), elem(128, 8), conv(128, 128, 3, 8), elem(128, 8);
  // level 2 decoder, no attention
  elem(128, 16), conv(128, 64, 3, 16), elem(64, 16);
  conv(128, 64, 3, 16), elem(64, 16), conv(64, 64, 3, 16), elem(64, 16);
  // level 1 decoder with attention
  elem(64, 32), conv(64, 32, 3, 32), elem(32, 32);
  conv(32, 32, 1, 32), conv(32, 32, 1, 32), elem(32, 32), elem(32, 32), conv(32, 1, 1, 32), elem(1, 32),
      elem(32, 32);
  conv(64, 32, 3, 32), elem(32, 32), conv(32, 32, 3, 32), elem(32, 32);
  // level 0 decoder with attention
  elem(32, 64), conv(32, 16, 3, 64), elem(16, 64);
  conv(16, 16, 1, 64), conv(16, 16, 1, 64), elem(16, 64), elem(16, 64), conv(16, 1, 1, 64), elem(1, 64),
      elem(16, 64);
  conv(32, 16, 3, 64), elem(16, 64), conv(16, 16, 3, 64), elem(16, 64);
  // prediction
  conv(16, 1, 1, 64), elem(1, 64);
  CHECK(count_flops(c) == n);
  MESSAGE("default model on 64^3: " << n << " ops");
}

TEST_CASE("checkpoint round trip and errors") {
  ModelConfig c;
  c.depth = 2;
  c.base_channels = 3;
  c.edge = 16;
  c.aam_levels = {1};
  c.attention_activation = AttentionActivation::linear;
  const ModelParams p = init_params(c, 12);
  const auto bytes = encode_checkpoint(p);
  CHECK(decode_checkpoint(bytes) == p);
  CHECK(bytes[0] == 'F');
  CHECK(bytes[3] == '1');
  const auto path = std::filesystem::temp_directory_path() / "faultseg_model_ckpt.fck";
  save_checkpoint(p, path);
  CHECK(load_checkpoint(path) == p);

  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_WITH_AS(decode_checkpoint(cut), doctest::Contains("truncated"), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(extra), FormatError);

  ModelConfig other = c;
  other.base_channels = 4;
  CHECK(config_hash(other) != config_hash(c));
  CHECK(config_hash(c) == config_hash(decode_checkpoint(bytes).config));
}
