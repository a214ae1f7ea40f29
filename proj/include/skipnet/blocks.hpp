#pragma once

// Building blocks of the convolutional backbone and the four skip-connection
// semantics (plain, residual, highway, dense) over [channels, time] maps.

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skipnet/tensor.hpp"

namespace skipnet {

enum class ConnectivityKind { Plain, Residual, Highway, Dense };

inline constexpr std::array<ConnectivityKind, 4> kAllConnectivityKinds = {
    ConnectivityKind::Plain, ConnectivityKind::Residual, ConnectivityKind::Highway,
    ConnectivityKind::Dense};

ConnectivityKind parse_connectivity(const std::string& name);
std::string to_string(ConnectivityKind kind);

using Mode = BatchNormMode;

struct BlockConfig {
  std::size_t channels = 32;
  std::size_t kernel_size = 5;  // odd, "same" padding
  std::size_t growth_rate = 8;  // dense only
  std::size_t dense_block_depth = 7;  // dense only
  double gate_bias_init = -3.0;  // highway only, must be negative
  bool per_channel_gate = false;  // highway: one gate per channel instead of per frame
  Nonlinearity nonlinearity = Nonlinearity::Hardtanh;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Trainable parameters and non-trainable buffers (batch-norm running
// statistics), both addressed by unique dotted names.
class ParameterRegistry {
 public:
  void add_parameter(const std::string& name, const Tensor& tensor);
  void add_buffer(const std::string& name, const Tensor& tensor);

  const std::vector<NamedTensor>& parameters() const { return parameters_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }

 private:
  void check_unique(const std::string& name) const;

  std::vector<NamedTensor> parameters_;
  std::vector<NamedTensor> buffers_;
};

// Convolution with "same" padding for odd kernels unless padding is given.
struct Conv {
  Conv() = default;
  Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
       std::mt19937_64& rng, std::size_t stride = 1);

  Tensor forward(const Tensor& x) const;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const;

  Tensor weight;  // [C_out, C_in, K]
  Tensor bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct BatchNorm {
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode) const;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const;

  Tensor gamma, beta;
  Tensor running_mean, running_var;
};

// conv -> batch norm [-> nonlinearity]
struct ConvBn {
  ConvBn() = default;
  ConvBn(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         Nonlinearity nonlinearity, bool activate, std::mt19937_64& rng,
         std::size_t stride = 1);

  Tensor forward(const Tensor& x, Mode mode) const;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const;

  Conv conv;
  BatchNorm bn;
  Nonlinearity nonlinearity = Nonlinearity::Hardtanh;
  bool activate = true;
};

class Block {
 public:
  virtual ~Block() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) const = 0;
  virtual void register_into(const std::string& prefix, ParameterRegistry& registry) const = 0;
  virtual std::size_t out_channels() const = 0;
};

class PlainLayer : public Block {
 public:
  PlainLayer(std::size_t in_channels, const BlockConfig& config, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) const override;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const override;
  std::size_t out_channels() const override { return layer.conv.weight.dim(0); }

  ConvBn layer;
};

// Two-layer residual function F = conv -> BN -> nonlin -> conv -> BN, with
// output nonlin(F(x) + x).
class ResidualBlock : public Block {
 public:
  ResidualBlock(const BlockConfig& config, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) const override;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const override;
  std::size_t out_channels() const override { return channels_; }

  Tensor residual(const Tensor& x, Mode mode) const;

  ConvBn first;
  ConvBn second;
  Nonlinearity nonlinearity;

 private:
  std::size_t channels_;
};

// y = H(x) * T(x) + x * (1 - T(x)), T(x) = sigmoid(w_T . x[:, t] + b_T).
// H is the same two-layer stack as the residual function. By default the
// gate is one scalar per frame; per_channel_gate gives one per channel.
class HighwayBlock : public Block {
 public:
  HighwayBlock(const BlockConfig& config, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) const override;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const override;
  std::size_t out_channels() const override { return channels_; }

  Tensor transform(const Tensor& x, Mode mode) const;
  Tensor gate(const Tensor& x) const;

  ConvBn first;
  ConvBn second;
  Tensor gate_weight;  // [1, C] or [C, C]
  Tensor gate_bias;    // [1] or [C]

 private:
  std::size_t channels_;
};

// BN -> nonlin -> conv over the concatenation of all previous feature maps,
// emitting growth_rate channels.
class DenseLayer {
 public:
  DenseLayer(std::size_t in_channels, const BlockConfig& config, std::mt19937_64& rng);

  Tensor forward(std::span<const Tensor> features, Mode mode) const;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const;

  BatchNorm bn;
  Conv conv;
  Nonlinearity nonlinearity;
  std::size_t in_channels;
};

// Kernel-size-1 convolution reducing the channel count.
class Transition {
 public:
  Transition(std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const;

  Conv conv;
};

// A densely connected block of `dense_block_depth` layers on `channels`
// inputs followed by a transition back to `out_channels`.
class DenseBlock : public Block {
 public:
  DenseBlock(const BlockConfig& config, std::size_t out_channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) const override;
  void register_into(const std::string& prefix, ParameterRegistry& registry) const override;
  std::size_t out_channels() const override;

  // Width of the running concatenation after the last dense layer.
  std::size_t concatenated_width() const;
  Tensor concatenated(const Tensor& x, Mode mode) const;

  std::vector<DenseLayer> layers;
  Transition transition;
};

}  // namespace skipnet
