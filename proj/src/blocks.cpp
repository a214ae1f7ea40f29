#include "skipnet/blocks.hpp"

#include <cmath>

namespace skipnet {

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace

ConnectivityKind parse_connectivity(const std::string& name) {
  if (name == "plain") return ConnectivityKind::Plain;
  if (name == "residual") return ConnectivityKind::Residual;
  if (name == "highway") return ConnectivityKind::Highway;
  if (name == "dense") return ConnectivityKind::Dense;
  throw ConfigError("unknown connectivity '" + name +
                    "' (expected plain, residual, highway or dense)");
}

std::string to_string(ConnectivityKind kind) {
  switch (kind) {
    case ConnectivityKind::Plain: return "plain";
    case ConnectivityKind::Residual: return "residual";
    case ConnectivityKind::Highway: return "highway";
    case ConnectivityKind::Dense: return "dense";
  }
  return "?";
}

void BlockConfig::validate() const {
  if (channels < 1) throw ConfigError("block.channels must be >= 1");
  if (kernel_size % 2 == 0) throw ConfigError("block.kernel_size must be odd");
  if (growth_rate < 1) throw ConfigError("block.growth_rate must be >= 1");
  if (dense_block_depth < 1) throw ConfigError("block.dense_block_depth must be >= 1");
  if (!(gate_bias_init < 0.0)) throw ConfigError("block.gate_bias_init must be negative");
}

void ParameterRegistry::check_unique(const std::string& name) const {
  for (const auto* list : {&parameters_, &buffers_})
    for (const auto& entry : *list)
      if (entry.name == name) throw ContractError("duplicate parameter name '" + name + "'");
}

void ParameterRegistry::add_parameter(const std::string& name, const Tensor& tensor) {
  check_unique(name);
  parameters_.push_back({name, tensor});
}

void ParameterRegistry::add_buffer(const std::string& name, const Tensor& tensor) {
  check_unique(name);
  buffers_.push_back({name, tensor});
}

// ---------------------------------------------------------------------------

Conv::Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::mt19937_64& rng, std::size_t stride_)
    : weight(normal_tensor({out_channels, in_channels, kernel},
                           std::sqrt(1.0 / static_cast<double>(in_channels * kernel)), rng)),
      bias(Tensor({out_channels}, 0.0, true)),
      stride(stride_),
      padding((kernel - 1) / 2) {}

Tensor Conv::forward(const Tensor& x) const { return conv1d(x, weight, bias, stride, padding); }

void Conv::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  registry.add_parameter(prefix + ".weight", weight);
  registry.add_parameter(prefix + ".bias", bias);
}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma({channels}, 1.0, true),
      beta({channels}, 0.0, true),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) const {
  return batchnorm1d(x, gamma, beta, mode, running_mean, running_var);
}

void BatchNorm::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  registry.add_parameter(prefix + ".gamma", gamma);
  registry.add_parameter(prefix + ".beta", beta);
  registry.add_buffer(prefix + ".running_mean", running_mean);
  registry.add_buffer(prefix + ".running_var", running_var);
}

ConvBn::ConvBn(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               Nonlinearity nonlinearity_, bool activate_, std::mt19937_64& rng,
               std::size_t stride)
    : conv(in_channels, out_channels, kernel, rng, stride),
      bn(out_channels),
      nonlinearity(nonlinearity_),
      activate(activate_) {}

Tensor ConvBn::forward(const Tensor& x, Mode mode) const {
  Tensor y = bn.forward(conv.forward(x), mode);
  return activate ? pointwise(nonlinearity, y) : y;
}

void ConvBn::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  conv.register_into(prefix + ".conv", registry);
  bn.register_into(prefix + ".bn", registry);
}

// ---------------------------------------------------------------------------

PlainLayer::PlainLayer(std::size_t in_channels, const BlockConfig& config, std::mt19937_64& rng)
    : layer(in_channels, config.channels, config.kernel_size, config.nonlinearity, true, rng) {}

Tensor PlainLayer::forward(const Tensor& x, Mode mode) const { return layer.forward(x, mode); }

void PlainLayer::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  layer.register_into(prefix, registry);
}

ResidualBlock::ResidualBlock(const BlockConfig& config, std::mt19937_64& rng)
    : first(config.channels, config.channels, config.kernel_size, config.nonlinearity, true, rng),
      second(config.channels, config.channels, config.kernel_size, config.nonlinearity, false, rng),
      nonlinearity(config.nonlinearity),
      channels_(config.channels) {}

Tensor ResidualBlock::residual(const Tensor& x, Mode mode) const {
  return second.forward(first.forward(x, mode), mode);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) const {
  Tensor f = residual(x, mode);
  if (f.shape() != x.shape())
    throw DimensionError("residual block: F(x) " + shape_string(f.shape()) +
                         " does not match x " + shape_string(x.shape()));
  return pointwise(nonlinearity, add(f, x));
}

void ResidualBlock::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  first.register_into(prefix + ".f1", registry);
  second.register_into(prefix + ".f2", registry);
}

HighwayBlock::HighwayBlock(const BlockConfig& config, std::mt19937_64& rng)
    : first(config.channels, config.channels, config.kernel_size, config.nonlinearity, true, rng),
      second(config.channels, config.channels, config.kernel_size, config.nonlinearity, false, rng),
      channels_(config.channels) {
  const std::size_t gates = config.per_channel_gate ? config.channels : 1;
  gate_weight = normal_tensor({gates, config.channels},
                              std::sqrt(1.0 / static_cast<double>(config.channels)), rng);
  gate_bias = Tensor({gates}, config.gate_bias_init, true);
}

Tensor HighwayBlock::transform(const Tensor& x, Mode mode) const {
  return second.forward(first.forward(x, mode), mode);
}

Tensor HighwayBlock::gate(const Tensor& x) const {
  return sigmoid(affine(x, gate_weight, gate_bias));
}

Tensor HighwayBlock::forward(const Tensor& x, Mode mode) const {
  Tensor h = transform(x, mode);
  if (h.shape() != x.shape())
    throw DimensionError("highway block: H(x) " + shape_string(h.shape()) +
                         " does not match x " + shape_string(x.shape()));
  // x + T * (H - x) == H * T + x * (1 - T)
  return add(x, mul(sub(h, x), gate(x)));
}

void HighwayBlock::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  first.register_into(prefix + ".h1", registry);
  second.register_into(prefix + ".h2", registry);
  registry.add_parameter(prefix + ".gate.weight", gate_weight);
  registry.add_parameter(prefix + ".gate.bias", gate_bias);
}

// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_channels_, const BlockConfig& config, std::mt19937_64& rng)
    : bn(in_channels_),
      conv(in_channels_, config.growth_rate, config.kernel_size, rng),
      nonlinearity(config.nonlinearity),
      in_channels(in_channels_) {}

Tensor DenseLayer::forward(std::span<const Tensor> features, Mode mode) const {
  Tensor joined = features.size() == 1 ? features.front() : concat_channels(features);
  if (joined.dim(0) != in_channels)
    throw DimensionError("dense layer expects " + std::to_string(in_channels) +
                         " input channels, got " + std::to_string(joined.dim(0)));
  return conv.forward(pointwise(nonlinearity, bn.forward(joined, mode)));
}

void DenseLayer::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  bn.register_into(prefix + ".bn", registry);
  conv.register_into(prefix + ".conv", registry);
}

Transition::Transition(std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng)
    : conv(in_channels, out_channels, 1, rng) {
  if (out_channels > in_channels)
    throw ConfigError("transition: output channels " + std::to_string(out_channels) +
                      " exceed input channels " + std::to_string(in_channels));
}

Tensor Transition::forward(const Tensor& x) const { return conv.forward(x); }

void Transition::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  conv.register_into(prefix + ".conv", registry);
}

namespace {

std::vector<DenseLayer> make_dense_layers(const BlockConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < config.dense_block_depth; ++l)
    layers.emplace_back(config.channels + l * config.growth_rate, config, rng);
  return layers;
}

}  // namespace

DenseBlock::DenseBlock(const BlockConfig& config, std::size_t out_channels_, std::mt19937_64& rng)
    : layers(make_dense_layers(config, rng)),
      transition(config.channels + config.dense_block_depth * config.growth_rate, out_channels_,
                 rng) {}

std::size_t DenseBlock::concatenated_width() const {
  return layers.front().in_channels + layers.size() * layers.front().conv.weight.dim(0);
}

std::size_t DenseBlock::out_channels() const { return transition.conv.weight.dim(0); }

Tensor DenseBlock::concatenated(const Tensor& x, Mode mode) const {
  std::vector<Tensor> features{x};
  for (const auto& layer : layers) features.push_back(layer.forward(features, mode));
  return concat_channels(features);
}

Tensor DenseBlock::forward(const Tensor& x, Mode mode) const {
  return transition.forward(concatenated(x, mode));
}

void DenseBlock::register_into(const std::string& prefix, ParameterRegistry& registry) const {
  for (std::size_t l = 0; l < layers.size(); ++l)
    layers[l].register_into(prefix + ".layer" + std::to_string(l), registry);
  transition.register_into(prefix + ".transition", registry);
}

}  // namespace skipnet
