#pragma once

// Synthetic speech-like corpus: each character of a transcript becomes one
// fixed-length segment holding a character-specific tone followed by a
// short gap, plus Gaussian noise over the whole utterance.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipnet/features.hpp"

namespace skipnet {

struct SynthConfig {
  std::string alphabet = "abcd ";
  std::size_t utterances = 20;        // training split
  std::size_t valid_utterances = 5;
  std::uint64_t seed = 7;
  std::uint32_t sample_rate = 16000;
  double segment_ms = 100.0;
  double tone_fraction = 0.7;         // rest of each segment is the gap
  double base_hz = 500.0;
  double step_hz = 450.0;             // symbol i sounds at base + i * step
  double amplitude = 0.5;
  double noise = 0.02;                // noise standard deviation
  std::size_t max_words = 3;
  std::size_t max_word_length = 3;

  void validate() const;
  std::size_t segment_samples() const;
  double tone_hz(char symbol) const;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthUtterance {
  std::string id;
  std::string transcript;
  Waveform wave;
};

struct SynthCorpus {
  std::vector<SynthUtterance> train;
  std::vector<SynthUtterance> valid;
};

// Deterministic for a given config.
SynthCorpus synthesize(const SynthConfig& config);

// Writes wav/<id>.wav, train.tsv, valid.tsv and corpus.txt (training
// transcripts, one per line) under `dir`.
void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace skipnet
