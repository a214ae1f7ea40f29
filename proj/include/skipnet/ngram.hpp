#pragma once

// Interpolated modified Kneser-Ney n-gram language model with ARPA text I/O.
//
// Sentences are padded with a single <s> and </s>. The highest order is
// estimated from raw counts; lower orders from continuation counts (the
// number of distinct left extensions), except n-grams starting with <s>,
// which keep raw counts. Each order has three discounts D1, D2, D3+ derived
// from its counts-of-counts; the unigram level interpolates with a uniform
// distribution over the predictable vocabulary (every seen token except <s>,
// plus </s> and <unk>).

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "skipnet/error.hpp"

namespace skipnet {

inline constexpr const char* kSentenceStart = "<s>";
inline constexpr const char* kSentenceEnd = "</s>";
inline constexpr const char* kUnknown = "<unk>";
// Character-mode stand-in for a space, which cannot appear in an ARPA token.
inline constexpr const char* kWordBoundary = "|";

using Ngram = std::vector<std::string>;
using Sentence = std::vector<std::string>;

enum class TokenMode { Word, Char };

std::string char_token(char c);
Sentence tokenize(const std::string& line, TokenMode mode);
// One sentence per non-empty line.
std::vector<Sentence> read_corpus(const std::filesystem::path& path, TokenMode mode);

// Space-joined key for an n-gram.
std::string ngram_key(std::span<const std::string> tokens);

struct CountTable {
  std::size_t order = 0;
  // Indexed by n - 1; keys are space-joined n-grams.
  std::vector<std::map<std::string, std::size_t>> raw;
  // Counts used for estimation: raw at the highest order and for n-grams
  // starting with <s>, continuation counts elsewhere.
  std::vector<std::map<std::string, std::size_t>> adjusted;
  // continuation[n - 1][g] = number of distinct tokens v with raw(v g) > 0;
  // empty at the highest order.
  std::vector<std::map<std::string, std::size_t>> continuation;
  // counts_of_counts[n - 1][k] = number of order-n n-grams with adjusted
  // count k, for k = 1..4 (index 0 unused). <s> is excluded at order 1.
  std::vector<std::array<std::size_t, 5>> counts_of_counts;

  // Number of distinct tokens v with count(v + ngram) > 0.
  std::size_t continuation_count(const std::string& key) const;
};

// Throws ContractError when the corpus is empty or order < 1.
CountTable count_ngrams(const std::vector<Sentence>& corpus, std::size_t order);

struct ArpaEntry {
  double log10_prob = 0.0;
  double log10_backoff = 0.0;
};

struct Discounts {
  std::array<double, 3> d{0.75, 0.75, 0.75};  // D1, D2, D3+
  // Counts-of-counts were degenerate and the fixed 0.75 was used; callers
  // surface this as a warning.
  bool fallback = false;
};

class ArpaModel {
 public:
  ArpaModel() = default;
  explicit ArpaModel(std::size_t order);

  std::size_t order() const { return tables_.size(); }
  const std::unordered_map<std::string, ArpaEntry>& table(std::size_t n) const;
  void set(std::size_t n, const std::string& key, ArpaEntry entry);
  const ArpaEntry* find(std::span<const std::string> ngram) const;

  // log10 p(token | context) by standard backoff over the last order - 1
  // context tokens; tokens missing from the vocabulary map to <unk>.
  double score(std::span<const std::string> context, const std::string& token) const;

  // Unigram tokens that can be predicted (everything except <s>).
  std::vector<std::string> vocabulary() const;
  bool in_vocabulary(const std::string& token) const;

  // Training-time discounts per order (empty for models read from disk).
  std::vector<Discounts> discounts;

 private:
  std::vector<std::unordered_map<std::string, ArpaEntry>> tables_;
};

ArpaModel train_kn(const CountTable& counts);

// Sum of log10 p over every token and </s> of each sentence, and the
// corresponding perplexity 10^(-sum / predicted tokens).
struct PerplexityResult {
  double log10_prob = 0.0;
  std::size_t tokens = 0;
  double perplexity = 0.0;
};
PerplexityResult perplexity(const ArpaModel& model, const std::vector<Sentence>& corpus);

void arpa_write(const ArpaModel& model, std::ostream& os);
void arpa_write(const ArpaModel& model, const std::filesystem::path& path);
// Throws FormatError carrying the offending line number.
ArpaModel arpa_read(std::istream& is);
ArpaModel arpa_read(const std::filesystem::path& path);

}  // namespace skipnet
