#pragma once

// Fully convolutional acoustic model: a strided front layer, a body of
// `body_layers` small-kernel layers whose connectivity is selected by
// ConnectivityKind, then a large-kernel layer and a kernel-size-1 output
// layer followed by log-softmax over |alphabet| + 1 (blank) channels.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipnet/blocks.hpp"

namespace skipnet {

struct ModelConfig {
  ConnectivityKind connectivity = ConnectivityKind::Plain;
  std::size_t input_features = 257;
  std::size_t width = 32;
  std::size_t body_layers = 7;
  std::size_t body_kernel = 5;
  std::size_t stride_kernel = 5;
  std::size_t stride = 2;
  std::size_t head_kernel = 15;
  std::size_t alphabet_size = 5;
  Nonlinearity nonlinearity = Nonlinearity::Hardtanh;
  std::size_t growth_rate = 0;  // 0 selects width / 4
  std::size_t dense_depth = 0;  // 0 selects body_layers
  double gate_bias_init = -3.0;
  bool per_channel_gate = false;
  std::uint64_t init_seed = 1;

  void validate() const;
  BlockConfig block_config() const;
  std::size_t output_channels() const { return alphabet_size + 1; }

  nlohmann::json to_json() const;
  // Unknown keys and malformed values raise ConfigError.
  static ModelConfig from_json(const nlohmann::json& j);
};

class AcousticModel {
 public:
  explicit AcousticModel(const ModelConfig& config);

  AcousticModel(const AcousticModel&) = delete;
  AcousticModel& operator=(const AcousticModel&) = delete;
  AcousticModel(AcousticModel&&) = default;
  AcousticModel& operator=(AcousticModel&&) = default;

  // features [F, T] -> per-frame log-probabilities [|A| + 1, output_length(T)].
  Tensor forward(const Tensor& features, Mode mode = Mode::Eval) const;
  std::size_t output_length(std::size_t frames) const;
  // The input of every body block, then the body output.
  std::vector<Tensor> body_activations(const Tensor& features, Mode mode = Mode::Eval) const;
  std::size_t min_input_length() const { return 1; }

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return registry_.parameters(); }
  const std::vector<NamedTensor>& buffers() const { return registry_.buffers(); }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;
  void zero_grad() const;

  // Copy of every parameter and buffer value, in registry order.
  using State = std::vector<std::vector<double>>;
  State snapshot() const;
  void restore(const State& state) const;

  void save(const std::filesystem::path& path) const;
  static AcousticModel load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  ConvBn front_;
  std::vector<std::unique_ptr<Block>> body_;
  ConvBn head_;
  Conv output_;
  ParameterRegistry registry_;
};

inline AcousticModel build_model(const ModelConfig& config) { return AcousticModel(config); }

}  // namespace skipnet
