#pragma once

// CTC prefix beam search with shallow n-gram fusion, plus an exhaustive
// decoder used as its oracle on tiny instances.
//
// Fused score of a prefix y:
//   log P_ctc(y) + lm_weight * ln P_lm(y) + insertion_bonus * |y|
// where P_lm includes </s> only when hypotheses are ranked after the last
// frame. Scores within kScoreTieTolerance are ties, broken by the
// lexicographically smaller label sequence (so a proper prefix wins).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipnet/ctc.hpp"
#include "skipnet/ngram.hpp"

namespace skipnet {

inline constexpr double kScoreTieTolerance = 1e-12;

enum class FusionUnit { Char, Word };

struct DecoderConfig {
  std::size_t beam_width = 32;
  double lm_weight = 1.0;
  double insertion_bonus = 1.5;
  FusionUnit fusion = FusionUnit::Char;
  std::shared_ptr<const ArpaModel> lm;  // optional

  void validate() const;
  // Serializable fields only; the LM is attached separately.
  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
};

// Language-model context carried by a hypothesis.
struct LmState {
  std::vector<std::string> context{kSentenceStart};
  std::string partial_word;  // word fusion: characters since the last space
  double log_prob = 0.0;     // natural log
};

struct BeamHypothesis {
  std::vector<std::size_t> prefix;
  double log_p_blank = 0.0;
  double log_p_nonblank = 0.0;
  LmState lm;
  double score = 0.0;

  double log_p_total() const;
};

struct DecodeResult {
  std::vector<std::size_t> labels;
  std::string text;
  double score = 0.0;
  // Final beam, best first, scored with end-of-sentence fusion.
  std::vector<BeamHypothesis> beam;
};

// `logprobs` is [|A| + 1, T] with the blank at row 0.
DecodeResult prefix_beam_search(const Tensor& logprobs, const Alphabet& alphabet, const DecoderConfig& config);
// Row-major [classes, frames] values; frames may be 0.
DecodeResult prefix_beam_search(std::span<const double> logprobs, std::size_t classes, std::size_t frames,
                                const Alphabet& alphabet, const DecoderConfig& config);

// Scores every label sequence of length <= T by its exact CTC probability,
// fused identically. Throws ContractError when (|A| + 1)^T > 1e6.
DecodeResult exhaustive_decode(const Tensor& logprobs, const Alphabet& alphabet, const DecoderConfig& config);

// Fused LM log-probability (natural log, unweighted) of a complete label
// sequence, including end of sentence.
double lm_log_prob(const ArpaModel& lm, const Alphabet& alphabet, std::span<const std::size_t> labels,
                   FusionUnit fusion);

}  // namespace skipnet
