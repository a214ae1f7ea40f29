#pragma once

// Run configuration and the pipeline stages behind the command-line tool.
// Each stage writes its outputs plus the resolved config.json into an output
// directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipnet/decoder.hpp"
#include "skipnet/features.hpp"
#include "skipnet/model.hpp"
#include "skipnet/ngram.hpp"
#include "skipnet/synth.hpp"
#include "skipnet/train.hpp"

namespace skipnet {

struct LmSettings {
  std::size_t order = 4;
  TokenMode mode = TokenMode::Char;

  nlohmann::json to_json() const;
  static LmSettings from_json(const nlohmann::json& j);
};

// Empty paths are unset. Relative paths in a config file are relative to
// that file.
struct PathSettings {
  std::filesystem::path train;   // manifest
  std::filesystem::path valid;   // manifest
  std::filesystem::path test;    // manifest
  std::filesystem::path corpus;  // LM training text
  std::filesystem::path lm;      // ARPA file
  std::filesystem::path checkpoint;

  nlohmann::json to_json() const;
  static PathSettings from_json(const nlohmann::json& j, const std::filesystem::path& base);
};

struct RunConfig {
  std::string alphabet = "abcd ";
  FeatureParams features;
  ModelConfig model;
  TrainConfig train;
  DecoderConfig decoder;
  LmSettings lm;
  SynthConfig synth;
  PathSettings paths;

  // Checks cross-section consistency: model.input_features against the
  // features, model.alphabet_size and synth.alphabet against the alphabet.
  void resolve();
  nlohmann::json to_json() const;
  // Absent derived fields (model.input_features, model.alphabet_size,
  // synth.alphabet, synth.sample_rate) are filled in before resolve().
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
  // Sets model.init_seed, train.seed and synth.seed.
  void set_seed(std::uint64_t seed);
  void write(const std::filesystem::path& out_dir) const;
};

// Applies "dotted.key=value" to a JSON object. The value is parsed as JSON
// when possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Tab-separated transcript file: "id<TAB>text", or a manifest
// "id<TAB>path<TAB>text".
struct Transcript {
  std::string id;
  std::string text;
};
std::vector<Transcript> read_transcripts(const std::filesystem::path& path);
void write_transcripts(const std::filesystem::path& path, const std::vector<Transcript>& rows);

// Throws ConfigError naming `what` when the path is empty or missing.
const std::filesystem::path& require_path(const std::filesystem::path& path, const std::string& what);

void run_synth(const RunConfig& config, const std::filesystem::path& out_dir);

// Computes features for each manifest entry into out_dir/features and
// writes out_dir/<manifest name> pointing at the caches.
std::filesystem::path run_featurize(const RunConfig& config, const std::filesystem::path& manifest,
                                    const std::filesystem::path& out_dir);

// Trains on config.lm, writes out_dir/lm.arpa and returns the model.
ArpaModel run_lm_train(const RunConfig& config, const std::filesystem::path& corpus,
                       const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Throws ConfigError when the LM vocabulary and the alphabet disagree for
// the configured fusion unit.
void check_lm_alphabet(const ArpaModel& lm, const Alphabet& alphabet, FusionUnit fusion);

// Writes out_dir/best.ckpt, out_dir/final.ckpt and out_dir/metrics.csv.
TrainResult run_train(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

struct DecodeOptions {
  bool greedy = false;
};

std::vector<Transcript> decode_dataset(const AcousticModel& model, const Dataset& data, const Alphabet& alphabet,
                                       const DecoderConfig& decoder, bool greedy);

// Decodes `manifest` with the checkpoint; writes out_dir/hypotheses.tsv.
std::vector<Transcript> run_decode(const RunConfig& config, const std::filesystem::path& manifest,
                                   const std::filesystem::path& out_dir, const DecodeOptions& options);

struct Summary {
  std::size_t utterances = 0;
  double cer = 0.0;
  double wer = 0.0;
};

// Hypotheses are matched to references by id; a missing id is an error.
Summary score_transcripts(const std::vector<Transcript>& refs, const std::vector<Transcript>& hyps);

struct VariantRow {
  ConnectivityKind kind = ConnectivityKind::Plain;
  std::size_t parameters = 0;
  std::size_t epochs = 0;
  double train_cer = 1.0;
  std::string eval_split;
  Summary greedy;
  Summary beam;
  double wall_s = 0.0;
  bool diverged = false;
};

inline constexpr const char* kVariantsHeader =
    "architecture,wer,cer,greedy_wer,greedy_cer,train_cer,epochs,parameters,eval_split";
std::string format_variant_row(const VariantRow& row);

// Trains each connectivity kind from one config (out_dir/<kind>/), decodes
// the validation split (training split when none) greedily and with the
// beam decoder plus the configured LM, and writes out_dir/table2.csv.
std::vector<VariantRow> run_all_variants(const RunConfig& config, const std::filesystem::path& out_dir,
                                         std::ostream* log = nullptr);

}  // namespace skipnet
