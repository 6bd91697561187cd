#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "faultseg/autodiff.hpp"
#include "faultseg/volume.hpp"

namespace faultseg {

enum class AttentionActivation : std::uint32_t { sigmoid = 0, linear = 1 };

std::string to_string(AttentionActivation a);
AttentionActivation parse_attention_activation(const std::string& s);

struct ModelConfig {
  int depth = 3;           ///< number of 2x poolings
  int base_channels = 16;  ///< channels at level 0, doubling per level
  std::vector<int> aam_levels{0, 1};
  int kernel = 3;
  int edge = 64;
  double sigma = 2.0;  ///< attention label spread, forwarded to the labels
  AttentionActivation attention_activation = AttentionActivation::sigmoid;

  int channels(int level) const { return base_channels << level; }
  bool has_aam(int level) const;
  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError on an invalid configuration.
void validate(const ModelConfig& c);

/// One learnable convolution of the network, in canonical order.
struct ConvSpec {
  std::string name;
  int cin = 0, cout = 0, k = 1;
  bool bias = true;
  int level = 0;  ///< spatial scale: edge / 2^level
};

/// Every convolution in forward order. The tensor layout of a model is
/// [kernel, bias?] per spec in this order.
std::vector<ConvSpec> conv_layout(const ModelConfig& c);

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct ModelParams {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  std::int64_t count() const;
  const Tensor<float>& at(const std::string& name) const;
  bool operator==(const ModelParams& o) const;
};

std::int64_t parameter_count(const ModelConfig& c);

/// He-normal kernels (std sqrt(2 / fan_in)), zero biases.
ModelParams init_params(const ModelConfig& c, std::uint64_t seed);

template <typename T>
std::vector<Var> bind_params(Graph<T>& g, const ModelParams& p, bool requires_grad);

struct AamVars {
  Var theta_hat;  ///< one channel
  Var gated;
};

/// s = relu(w_l * F_l + w_h * F_h); theta_hat = act(w_s * s); gated = F_l . theta_hat.
/// w holds (w_l, b_l, w_h, b_h, w_s, b_s).
template <typename T>
AamVars aam(Graph<T>& g, Var f_low, Var f_high, std::span<const Var> w, AttentionActivation act);

struct ForwardVars {
  Var prob;                     ///< (1, D, H, W)
  std::vector<Var> theta_hats;  ///< one per AAM level, ascending level order
  std::vector<int> aam_levels;
};

/// x is (1, D, H, W) with spatial dims divisible by 2^depth.
template <typename T>
ForwardVars forward(Graph<T>& g, const ModelConfig& c, std::span<const Var> params, Var x);

/// Inference convenience: probability volume for one cuboid.
Volume predict(const ModelParams& p, const Volume& x);

/// Analytic operation count: 2 K^3 C_in C_out V per convolution plus one op
/// per output element for relu, sigmoid, pooling, upsampling, add and multiply.
std::int64_t count_flops(const ModelConfig& c);

/// The same count for an arbitrary cubic input edge.
std::int64_t count_flops(const ModelConfig& c, std::int64_t edge);

/// 2 K^3 C_in C_out V for one convolution at spatial edge `edge / 2^level`.
std::int64_t conv_flops(const ConvSpec& s, std::int64_t edge);

// FCK1 checkpoint: magic, config block (depth, base, aam level mask, kernel,
// edge as u32; sigma as f32; activation as u32), tensor count u32, then per
// tensor rank u32, dims u32 each, values f32, all little-endian.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& p);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelParams& p, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// FNV-1a hash of the serialized config block.
std::uint64_t config_hash(const ModelConfig& c);

}  // namespace faultseg
