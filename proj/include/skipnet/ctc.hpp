#pragma once

// Connectionist temporal classification: loss and exact gradient by the
// log-space forward-backward recursions, greedy decoding, and a brute-force
// path-enumeration oracle.
//
// Log-probability matrices are [|A| + 1, T] with the blank at row 0.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skipnet/tensor.hpp"

namespace skipnet {

inline constexpr std::size_t kBlank = 0;

struct LabelSequence {
  std::vector<std::size_t> labels;  // 1-based symbol indices, never blank
  std::string text;
};

// Ordered single-character symbols; label i (1-based) is symbols()[i - 1].
class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(std::string symbols);

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbols() const { return symbols_; }
  char symbol(std::size_t label) const;
  std::size_t label(char symbol) const;

  // Throws ContractError on characters outside the alphabet.
  LabelSequence encode(std::string_view text) const;
  std::string decode(std::span<const std::size_t> labels) const;

  bool operator==(const Alphabet&) const = default;

 private:
  std::string symbols_;
};

// Frames needed to emit `labels`: one per label plus a separating blank
// between each pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const std::size_t> labels);

struct CtcResult {
  double loss = 0.0;          // -log P(target | logprobs)
  std::vector<double> grad;   // d loss / d logprobs, same layout as the input
};

// Throws InfeasibleError when the target cannot be emitted in T frames.
CtcResult ctc_loss(const Tensor& logprobs, std::span<const std::size_t> target);

// Scalar tensor recording the CTC loss on the tape.
Tensor ctc_loss_tensor(const Tensor& logprobs, std::span<const std::size_t> target);

// -log of the total probability of every length-T path whose collapse equals
// the target. Refuses (ContractError) when (|A| + 1)^T > 1e7; throws
// InfeasibleError when no path collapses to the target.
double ctc_brute_force(const Tensor& logprobs, std::span<const std::size_t> target);

// Merge repeats, then drop blanks.
std::vector<std::size_t> ctc_collapse(std::span<const std::size_t> path);

// Per-frame argmax (lowest index on ties), collapsed.
std::vector<std::size_t> greedy_decode(const Tensor& logprobs);

double log_add(double a, double b);

}  // namespace skipnet
