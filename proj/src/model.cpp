#include "skipnet/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json_util.hpp"

namespace skipnet {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + " " + why);
  };
  if (input_features < 1) fail("input_features", "must be >= 1");
  if (width < 1) fail("width", "must be >= 1");
  if (body_layers < 1) fail("body_layers", "must be >= 1");
  if (body_kernel % 2 == 0) fail("body_kernel", "must be odd");
  if (stride_kernel % 2 == 0) fail("stride_kernel", "must be odd");
  if (head_kernel % 2 == 0) fail("head_kernel", "must be odd");
  if (stride < 1) fail("stride", "must be >= 1");
  if (alphabet_size < 1) fail("alphabet_size", "must be >= 1");
  if (connectivity == ConnectivityKind::Highway && !(gate_bias_init < 0.0))
    fail("gate_bias_init", "must be negative");
  if (connectivity == ConnectivityKind::Dense) block_config().validate();
}

BlockConfig ModelConfig::block_config() const {
  BlockConfig block;
  block.channels = width;
  block.kernel_size = body_kernel;
  block.growth_rate = growth_rate ? growth_rate : std::max<std::size_t>(1, width / 4);
  block.dense_block_depth = dense_depth ? dense_depth : body_layers;
  block.gate_bias_init = gate_bias_init;
  block.per_channel_gate = per_channel_gate;
  block.nonlinearity = nonlinearity;
  return block;
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"connectivity", to_string(connectivity)},
      {"input_features", input_features},
      {"width", width},
      {"body_layers", body_layers},
      {"body_kernel", body_kernel},
      {"stride_kernel", stride_kernel},
      {"stride", stride},
      {"head_kernel", head_kernel},
      {"alphabet_size", alphabet_size},
      {"nonlinearity", to_string(nonlinearity)},
      {"growth_rate", growth_rate},
      {"dense_depth", dense_depth},
      {"gate_bias_init", gate_bias_init},
      {"per_channel_gate", per_channel_gate},
      {"init_seed", init_seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  const std::string section = "model";
  detail::reject_unknown_keys(
      j,
      {"connectivity", "input_features", "width", "body_layers", "body_kernel", "stride_kernel",
       "stride", "head_kernel", "alphabet_size", "nonlinearity", "growth_rate", "dense_depth",
       "gate_bias_init", "per_channel_gate", "init_seed"},
      section);
  ModelConfig c;
  std::string connectivity = to_string(c.connectivity);
  std::string nonlinearity = to_string(c.nonlinearity);
  detail::read_key(j, "connectivity", connectivity, section);
  detail::read_key(j, "nonlinearity", nonlinearity, section);
  c.connectivity = parse_connectivity(connectivity);
  c.nonlinearity = parse_nonlinearity(nonlinearity);
  detail::read_key(j, "input_features", c.input_features, section);
  detail::read_key(j, "width", c.width, section);
  detail::read_key(j, "body_layers", c.body_layers, section);
  detail::read_key(j, "body_kernel", c.body_kernel, section);
  detail::read_key(j, "stride_kernel", c.stride_kernel, section);
  detail::read_key(j, "stride", c.stride, section);
  detail::read_key(j, "head_kernel", c.head_kernel, section);
  detail::read_key(j, "alphabet_size", c.alphabet_size, section);
  detail::read_key(j, "growth_rate", c.growth_rate, section);
  detail::read_key(j, "dense_depth", c.dense_depth, section);
  detail::read_key(j, "gate_bias_init", c.gate_bias_init, section);
  detail::read_key(j, "per_channel_gate", c.per_channel_gate, section);
  detail::read_key(j, "init_seed", c.init_seed, section);
  return c;
}

// ---------------------------------------------------------------------------
// AcousticModel

namespace {

ModelConfig validated(const ModelConfig& config) {
  config.validate();
  return config;
}

}  // namespace

AcousticModel::AcousticModel(const ModelConfig& config) : config_(validated(config)) {
  std::mt19937_64 rng(config_.init_seed);
  const BlockConfig block = config_.block_config();
  const std::size_t width = config_.width;

  front_ = ConvBn(config_.input_features, width, config_.stride_kernel, config_.nonlinearity,
                  true, rng, config_.stride);

  switch (config_.connectivity) {
    case ConnectivityKind::Plain:
      for (std::size_t l = 0; l < config_.body_layers; ++l)
        body_.push_back(std::make_unique<PlainLayer>(width, block, rng));
      break;
    case ConnectivityKind::Residual:
    case ConnectivityKind::Highway: {
      // An odd layer count leaves the first body layer outside the pairing.
      const std::size_t leading = config_.body_layers % 2;
      for (std::size_t l = 0; l < leading; ++l)
        body_.push_back(std::make_unique<PlainLayer>(width, block, rng));
      for (std::size_t b = 0; b < config_.body_layers / 2; ++b) {
        if (config_.connectivity == ConnectivityKind::Residual)
          body_.push_back(std::make_unique<ResidualBlock>(block, rng));
        else
          body_.push_back(std::make_unique<HighwayBlock>(block, rng));
      }
      break;
    }
    case ConnectivityKind::Dense:
      body_.push_back(std::make_unique<DenseBlock>(block, width, rng));
      break;
  }

  head_ = ConvBn(width, width, config_.head_kernel, config_.nonlinearity, true, rng);
  output_ = Conv(width, config_.output_channels(), 1, rng);

  front_.register_into("front", registry_);
  for (std::size_t b = 0; b < body_.size(); ++b)
    body_[b]->register_into("body" + std::to_string(b), registry_);
  head_.register_into("head", registry_);
  output_.register_into("output", registry_);
}

std::size_t AcousticModel::output_length(std::size_t frames) const {
  const std::size_t pad = (config_.stride_kernel - 1) / 2;
  // Remaining layers use odd kernels with "same" padding.
  return (frames + 2 * pad - config_.stride_kernel) / config_.stride + 1;
}

namespace {

void check_input(const Tensor& features, const ModelConfig& config, std::size_t min_frames) {
  if (!features.defined() || features.rank() != 2)
    throw DimensionError("model input must be [features, frames]");
  if (features.dim(0) != config.input_features)
    throw DimensionError("model expects " + std::to_string(config.input_features) +
                         " input features, got " + std::to_string(features.dim(0)));
  if (features.dim(1) < min_frames)
    throw ContractError("utterance too short: " + std::to_string(features.dim(1)) + " frames");
}

}  // namespace

Tensor AcousticModel::forward(const Tensor& features, Mode mode) const {
  check_input(features, config_, min_input_length());
  Tensor x = front_.forward(features, mode);
  for (const auto& block : body_) x = block->forward(x, mode);
  x = head_.forward(x, mode);
  return log_softmax(output_.forward(x));
}

std::vector<Tensor> AcousticModel::body_activations(const Tensor& features, Mode mode) const {
  check_input(features, config_, min_input_length());
  std::vector<Tensor> out{front_.forward(features, mode)};
  for (const auto& block : body_) out.push_back(block->forward(out.back(), mode));
  return out;
}

std::vector<Tensor> AcousticModel::parameter_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : registry_.parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t AcousticModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : registry_.parameters()) n += p.tensor.numel();
  return n;
}

void AcousticModel::zero_grad() const {
  for (const auto& p : registry_.parameters()) p.tensor.zero_grad();
}

AcousticModel::State AcousticModel::snapshot() const {
  State state;
  for (const auto* list : {&registry_.parameters(), &registry_.buffers()})
    for (const auto& entry : *list)
      state.emplace_back(entry.tensor.data().begin(), entry.tensor.data().end());
  return state;
}

void AcousticModel::restore(const State& state) const {
  std::size_t k = 0;
  for (const auto* list : {&registry_.parameters(), &registry_.buffers()})
    for (const auto& entry : *list) {
      if (k >= state.size() || state[k].size() != entry.tensor.numel())
        throw ContractError("model state does not match '" + entry.name + "'");
      std::copy(state[k].begin(), state[k].end(), entry.tensor.data().begin());
      ++k;
    }
  if (k != state.size()) throw ContractError("model state has extra entries");
}

// ---------------------------------------------------------------------------
// Checkpoint: text header with the config, then (name, shape, f64 LE) records.

namespace {

constexpr const char* kCheckpointMagic = "SKIPNET-CHECKPOINT 1";

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& is, const std::string& what) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8))
    throw FormatError("checkpoint truncated while reading " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void AcousticModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  const std::string header = config_.to_json().dump();
  os << kCheckpointMagic << '\n' << "config " << header.size() << '\n' << header << '\n';
  const std::size_t records = registry_.parameters().size() + registry_.buffers().size();
  os << "records " << records << '\n';
  for (const auto* list : {&registry_.parameters(), &registry_.buffers()})
    for (const auto& entry : *list) {
      put_u64(os, entry.name.size());
      os.write(entry.name.data(), static_cast<std::streamsize>(entry.name.size()));
      put_u64(os, entry.tensor.rank());
      for (std::size_t d : entry.tensor.shape()) put_u64(os, d);
      for (double v : entry.tensor.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
  if (!os) throw Error("failed writing checkpoint: " + path.string());
}

AcousticModel AcousticModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != kCheckpointMagic) throw FormatError(path.string() + ": not a skipnet checkpoint", 1);
  std::string keyword;
  std::size_t header_size = 0;
  if (!(is >> keyword >> header_size) || keyword != "config")
    throw FormatError(path.string() + ": missing config header", 2);
  is.get();
  std::string header(header_size, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_size)))
    throw FormatError(path.string() + ": truncated config header", 3);
  ModelConfig config;
  try {
    config = ModelConfig::from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": config header is not valid JSON: " + e.what(), 3);
  }
  std::size_t records = 0;
  if (!(is >> keyword >> records) || keyword != "records")
    throw FormatError(path.string() + ": missing record count");
  is.get();

  AcousticModel model(config);
  std::vector<const NamedTensor*> expected;
  for (const auto* list : {&model.registry_.parameters(), &model.registry_.buffers()})
    for (const auto& entry : *list) expected.push_back(&entry);
  if (records != expected.size())
    throw FormatError(path.string() + ": " + std::to_string(records) + " records, model has " +
                      std::to_string(expected.size()));

  for (const NamedTensor* entry : expected) {
    const std::uint64_t name_len = get_u64(is, "record name");
    if (name_len > 4096) throw FormatError(path.string() + ": corrupt record name length");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != entry->name)
      throw FormatError(path.string() + ": expected record '" + entry->name + "', found '" +
                        name + "'");
    const std::uint64_t rank = get_u64(is, name + " rank");
    Shape shape;
    for (std::uint64_t d = 0; d < rank && d < 8; ++d) shape.push_back(get_u64(is, name + " shape"));
    if (shape != entry->tensor.shape())
      throw FormatError(path.string() + ": record '" + name + "' has shape " + shape_string(shape) +
                        ", model expects " + shape_string(entry->tensor.shape()));
    for (double& v : entry->tensor.data()) v = std::bit_cast<double>(get_u64(is, name + " data"));
  }
  return model;
}

}  // namespace skipnet
