#include "skipnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "json_util.hpp"

namespace skipnet {

void SynthConfig::validate() const {
  if (alphabet.empty()) throw ConfigError("synth.alphabet must not be empty");
  if (alphabet.find_first_not_of(' ') == std::string::npos) throw ConfigError("synth.alphabet needs a non-space symbol");
  if (utterances < 1) throw ConfigError("synth.utterances must be at least 1");
  if (sample_rate == 0) throw ConfigError("synth.sample_rate must be positive");
  if (!(segment_ms > 0.0)) throw ConfigError("synth.segment_ms must be positive");
  const double n = static_cast<double>(sample_rate) * segment_ms / 1000.0;
  if (std::abs(n - std::round(n)) > 1e-9) throw ConfigError("synth.segment_ms must span a whole number of samples");
  if (!(tone_fraction > 0.0 && tone_fraction <= 1.0)) throw ConfigError("synth.tone_fraction must lie in (0, 1]");
  if (!(amplitude > 0.0 && amplitude + 4.0 * noise <= 1.0)) throw ConfigError("synth.amplitude must leave headroom");
  if (noise < 0.0) throw ConfigError("synth.noise must be non-negative");
  if (max_words < 1 || max_word_length < 1) throw ConfigError("synth.max_words and synth.max_word_length must be >= 1");
  const double top = base_hz + step_hz * static_cast<double>(alphabet.size() - 1);
  if (!(base_hz > 0.0) || !(step_hz > 0.0) || top >= sample_rate / 2.0)
    throw ConfigError("synth tone frequencies must be positive and below the Nyquist rate");
}

std::size_t SynthConfig::segment_samples() const {
  return static_cast<std::size_t>(std::round(static_cast<double>(sample_rate) * segment_ms / 1000.0));
}

double SynthConfig::tone_hz(char symbol) const {
  const auto pos = alphabet.find(symbol);
  if (pos == std::string::npos) throw ContractError(std::string("symbol '") + symbol + "' is not in the alphabet");
  return base_hz + step_hz * static_cast<double>(pos);
}

nlohmann::json SynthConfig::to_json() const {
  return {{"alphabet", alphabet},       {"utterances", utterances}, {"valid_utterances", valid_utterances},
          {"seed", seed},               {"sample_rate", sample_rate}, {"segment_ms", segment_ms},
          {"tone_fraction", tone_fraction}, {"base_hz", base_hz},  {"step_hz", step_hz},
          {"amplitude", amplitude},     {"noise", noise},           {"max_words", max_words},
          {"max_word_length", max_word_length}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"alphabet", "utterances", "valid_utterances", "seed", "sample_rate", "segment_ms",
                               "tone_fraction", "base_hz", "step_hz", "amplitude", "noise", "max_words",
                               "max_word_length"},
                              "synth");
  SynthConfig c;
  detail::read_key(j, "alphabet", c.alphabet, "synth");
  detail::read_key(j, "utterances", c.utterances, "synth");
  detail::read_key(j, "valid_utterances", c.valid_utterances, "synth");
  detail::read_key(j, "seed", c.seed, "synth");
  detail::read_key(j, "sample_rate", c.sample_rate, "synth");
  detail::read_key(j, "segment_ms", c.segment_ms, "synth");
  detail::read_key(j, "tone_fraction", c.tone_fraction, "synth");
  detail::read_key(j, "base_hz", c.base_hz, "synth");
  detail::read_key(j, "step_hz", c.step_hz, "synth");
  detail::read_key(j, "amplitude", c.amplitude, "synth");
  detail::read_key(j, "noise", c.noise, "synth");
  detail::read_key(j, "max_words", c.max_words, "synth");
  detail::read_key(j, "max_word_length", c.max_word_length, "synth");
  c.validate();
  return c;
}

namespace {

std::string random_transcript(const SynthConfig& c, std::mt19937_64& rng) {
  std::string letters;
  for (char ch : c.alphabet)
    if (ch != ' ') letters += ch;
  const bool spaced = c.alphabet.find(' ') != std::string::npos;
  std::uniform_int_distribution<std::size_t> words(1, c.max_words), length(1, c.max_word_length),
      pick(0, letters.size() - 1);
  std::string out;
  for (std::size_t w = words(rng); w > 0; --w) {
    if (!out.empty() && spaced) out += ' ';
    for (std::size_t k = length(rng); k > 0; --k) out += letters[pick(rng)];
  }
  return out;
}

SynthUtterance render(const SynthConfig& c, const std::string& id, const std::string& text, std::mt19937_64& rng) {
  const std::size_t seg = c.segment_samples();
  const auto tone = static_cast<std::size_t>(std::round(c.tone_fraction * static_cast<double>(seg)));
  std::normal_distribution<double> noise(0.0, c.noise);
  SynthUtterance u{id, text, Waveform{c.sample_rate, std::vector<double>(seg * text.size(), 0.0)}};
  for (std::size_t i = 0; i < text.size(); ++i) {
    const double hz = c.tone_hz(text[i]);
    for (std::size_t n = 0; n < tone; ++n) {
      // Short linear ramps keep segment edges from splattering.
      const double ramp = std::min({1.0, static_cast<double>(n) / 40.0, static_cast<double>(tone - n) / 40.0});
      u.wave.samples[i * seg + n] =
          c.amplitude * ramp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(n) / c.sample_rate);
    }
  }
  for (double& s : u.wave.samples) s = std::clamp(s + noise(rng), -1.0, 1.0);
  return u;
}

}  // namespace

SynthCorpus synthesize(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  SynthCorpus corpus;
  char id[32];
  for (std::size_t i = 0; i < config.utterances + config.valid_utterances; ++i) {
    const bool train = i < config.utterances;
    std::snprintf(id, sizeof id, "%s%03zu", train ? "train" : "valid", train ? i : i - config.utterances);
    const std::string text = random_transcript(config, rng);
    (train ? corpus.train : corpus.valid).push_back(render(config, id, text, rng));
  }
  return corpus;
}

void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir / "wav");
  auto write_split = [&](const std::vector<SynthUtterance>& split, const char* name) {
    std::vector<ManifestEntry> entries;
    for (const auto& u : split) {
      const std::filesystem::path rel = std::filesystem::path("wav") / (u.id + ".wav");
      write_wav(dir / rel, u.wave);
      entries.push_back({u.id, rel, u.transcript});
    }
    write_manifest(dir / name, entries);
  };
  write_split(corpus.train, "train.tsv");
  write_split(corpus.valid, "valid.tsv");
  std::ofstream os(dir / "corpus.txt");
  if (!os) throw ConfigError("cannot write '" + (dir / "corpus.txt").string() + "'");
  for (const auto& u : corpus.train) os << u.transcript << '\n';
}

}  // namespace skipnet
