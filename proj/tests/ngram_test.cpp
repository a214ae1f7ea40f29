#include "skipnet/ngram.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace skipnet {
namespace {

std::vector<Sentence> words(std::initializer_list<const char*> lines) {
  std::vector<Sentence> out;
  for (const char* l : lines) out.push_back(tokenize(l, TokenMode::Word));
  return out;
}

// 50 sentences over a 6-word vocabulary with some repeated structure.
std::vector<Sentence> toy_corpus(std::uint64_t seed = 3) {
  const std::vector<std::string> vocab{"the", "cat", "dog", "sat", "ran", "fast"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(1, 7), pick(0, vocab.size() - 1);
  std::vector<Sentence> corpus;
  for (int i = 0; i < 50; ++i) {
    Sentence s;
    if (i % 3 == 0) {
      s = {"the", "cat", "sat"};
    } else {
      for (std::size_t k = len(rng); k > 0; --k) s.push_back(vocab[pick(rng)]);
    }
    corpus.push_back(s);
  }
  return corpus;
}

TEST(Tokenize, CharModeMapsSpaces) {
  EXPECT_EQ(tokenize(" ab  c ", TokenMode::Char), (Sentence{"a", "b", "|", "c"}));
  EXPECT_EQ(tokenize(" ab  c ", TokenMode::Word), (Sentence{"ab", "c"}));
}

TEST(Count, PaddedBigrams) {
  CountTable t = count_ngrams(words({"a b"}), 2);
  EXPECT_EQ(t.raw[1].size(), 3u);
  EXPECT_EQ(t.raw[1].at("<s> a"), 1u);
  EXPECT_EQ(t.raw[1].at("a b"), 1u);
  EXPECT_EQ(t.raw[1].at("b </s>"), 1u);
}

TEST(Count, UnigramRepeats) {
  CountTable t = count_ngrams(words({"a a a"}), 1);
  EXPECT_EQ(t.raw[0].at("a"), 3u);
  EXPECT_EQ(t.adjusted[0].at("a"), 3u);
}

TEST(Count, ContinuationCountsMatchRecount) {
  const auto corpus = toy_corpus();
  CountTable t = count_ngrams(corpus, 3);
  // Distinct left neighbours by direct scan of every padded sentence.
  std::map<std::string, std::set<std::string>> left;
  for (const Sentence& s : corpus) {
    Sentence p{"<s>"};
    p.insert(p.end(), s.begin(), s.end());
    p.push_back("</s>");
    for (std::size_t i = 1; i < p.size(); ++i) {
      left[p[i]].insert(p[i - 1]);
      if (i + 1 < p.size()) left[p[i] + " " + p[i + 1]].insert(p[i - 1]);
    }
  }
  for (const auto& [key, set] : left) EXPECT_EQ(t.continuation_count(key), set.size()) << key;
  EXPECT_EQ(t.adjusted[0].at("cat"), left["cat"].size());
  EXPECT_EQ(t.adjusted[1].at("<s> the"), t.raw[1].at("<s> the"));
}

TEST(Count, EmptyCorpusRejected) {
  EXPECT_THROW(count_ngrams({}, 2), ContractError);
  EXPECT_THROW(count_ngrams(words({"a"}), 0), ContractError);
}

TEST(TrainKn, SingleSentenceBigramByHand) {
  ArpaModel m = train_kn(count_ngrams(words({"a b"}), 2));
  ASSERT_TRUE(m.discounts[0].fallback);
  ASSERT_TRUE(m.discounts[1].fallback);
  // Unigram level: continuation counts a=b=</s>=1, total 3, discount 0.75,
  // leftover 0.75 spread over {a, b, </s>, <unk>}.
  const double p_b = 0.25 / 3.0 + 0.75 / 4.0;
  EXPECT_NEAR(p_b, 13.0 / 48.0, 1e-15);
  // Bigram context "a": one continuation, count 1.
  const double p_b_given_a = 0.25 + 0.75 * p_b;
  EXPECT_NEAR(p_b_given_a, 0.453125, 1e-15);
  const Sentence ctx{"a"};
  EXPECT_NEAR(m.score(ctx, "b"), std::log10(p_b_given_a), 1e-12);
  EXPECT_NEAR(m.score({}, "b"), std::log10(p_b), 1e-12);
  // Unseen continuation of "a" goes through the backoff weight 0.75.
  EXPECT_NEAR(m.score(ctx, "a"), std::log10(0.75 * p_b), 1e-12);
}

TEST(TrainKn, UnigramModelByHand) {
  ArpaModel m = train_kn(count_ngrams(words({"a a a"}), 1));
  // Raw counts a=3, </s>=1; discounts 0.75; leftover 1.5/4 over 3 tokens.
  EXPECT_NEAR(m.score({}, "a"), std::log10(2.25 / 4 + 0.125), 1e-12);
  EXPECT_NEAR(m.score({}, "</s>"), std::log10(0.25 / 4 + 0.125), 1e-12);
  EXPECT_NEAR(m.score({}, "zzz"), std::log10(0.125), 1e-12);
}

TEST(TrainKn, DiscountsFromCountsOfCounts) {
  const auto corpus = toy_corpus(11);
  CountTable t = count_ngrams(corpus, 2);
  ArpaModel m = train_kn(t);
  // Highest order uses raw bigram counts; recount them independently.
  std::map<std::string, std::size_t> bigrams;
  for (const Sentence& s : corpus) {
    Sentence p{"<s>"};
    p.insert(p.end(), s.begin(), s.end());
    p.push_back("</s>");
    for (std::size_t i = 0; i + 1 < p.size(); ++i) ++bigrams[p[i] + " " + p[i + 1]];
  }
  double n[5] = {0, 0, 0, 0, 0};
  for (const auto& [k, c] : bigrams)
    if (c <= 4) n[c] += 1;
  ASSERT_GT(n[1] * n[2] * n[3] * n[4], 0.0);
  const double y = n[1] / (n[1] + 2 * n[2]);
  EXPECT_FALSE(m.discounts[1].fallback);
  EXPECT_NEAR(m.discounts[1].d[0], 1 - 2 * y * n[2] / n[1], 1e-14);
  EXPECT_NEAR(m.discounts[1].d[1], 2 - 3 * y * n[3] / n[2], 1e-14);
  EXPECT_NEAR(m.discounts[1].d[2], 3 - 4 * y * n[4] / n[3], 1e-14);
}

void expect_normalized(const ArpaModel& m, const std::vector<Sentence>& corpus) {
  const auto vocab = m.vocabulary();
  std::set<Sentence> contexts{{}};
  for (const Sentence& s : corpus) {
    Sentence p{"<s>"};
    p.insert(p.end(), s.begin(), s.end());
    for (std::size_t end = 1; end <= p.size(); ++end)
      for (std::size_t len = 1; len < m.order() && len <= end; ++len)
        contexts.insert(Sentence(p.begin() + static_cast<long>(end - len), p.begin() + static_cast<long>(end)));
  }
  for (const Sentence& ctx : contexts) {
    double total = 0.0;
    for (const auto& w : vocab) total += std::pow(10.0, m.score(ctx, w));
    EXPECT_NEAR(total, 1.0, 1e-8) << ngram_key(ctx);
  }
}

TEST(TrainKn, EveryContextNormalizes) {
  const auto corpus = toy_corpus();
  for (std::size_t order = 1; order <= 4; ++order) expect_normalized(train_kn(count_ngrams(corpus, order)), corpus);
  expect_normalized(train_kn(count_ngrams(words({"a b"}), 3)), words({"a b"}));
}

TEST(TrainKn, UnseenWordScoresFinitely) {
  ArpaModel m = train_kn(count_ngrams(toy_corpus(), 4));
  const Sentence ctx{"the", "cat"};
  const double s = m.score(ctx, "zebra");
  EXPECT_TRUE(std::isfinite(s));
  EXPECT_DOUBLE_EQ(s, m.score(ctx, "<unk>"));
}

TEST(Perplexity, DecreasesWithOrderOnRepetitiveCorpus) {
  std::vector<Sentence> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(tokenize("abcab dcab abcd", TokenMode::Char));
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t order = 1; order <= 4; ++order) {
    const double ppl = perplexity(train_kn(count_ngrams(corpus, order)), corpus).perplexity;
    EXPECT_TRUE(std::isfinite(ppl));
    EXPECT_LE(ppl, previous + 1e-12) << order;
    previous = ppl;
  }
}

TEST(Arpa, RoundTripPreservesScores) {
  const auto corpus = toy_corpus();
  ArpaModel m = train_kn(count_ngrams(corpus, 4));
  std::stringstream ss;
  arpa_write(m, ss);
  ArpaModel r = arpa_read(ss);
  const auto vocab = m.vocabulary();
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1), len(0, 4);
  for (int q = 0; q < 1000; ++q) {
    Sentence ctx;
    if (q % 2 == 0) ctx.push_back("<s>");
    for (std::size_t k = len(rng); k > 0; --k) ctx.push_back(vocab[pick(rng)]);
    const std::string w = vocab[pick(rng)];
    EXPECT_NEAR(m.score(ctx, w), r.score(ctx, w), 1e-10);
  }
}

TEST(Arpa, HeaderCountsMatchSections) {
  ArpaModel m = train_kn(count_ngrams(toy_corpus(), 3));
  std::stringstream ss;
  arpa_write(m, ss);
  std::map<int, std::size_t> declared, listed;
  std::string line;
  int section = 0;
  while (std::getline(ss, line)) {
    if (line.starts_with("ngram ")) declared[std::stoi(line.substr(6))] = std::stoul(line.substr(line.find('=') + 1));
    else if (line.size() > 1 && line[0] == '\\' && std::isdigit(static_cast<unsigned char>(line[1])))
      section = std::stoi(line.substr(1));
    else if (line == "\\end\\") section = 0;
    else if (section > 0 && !line.empty()) ++listed[section];
  }
  EXPECT_EQ(declared.size(), 3u);
  EXPECT_EQ(declared, listed);
}

std::size_t error_line(const std::string& text) {
  std::istringstream is(text);
  try {
    arpa_read(is);
  } catch (const FormatError& e) {
    return e.line();
  }
  return 0;
}

TEST(Arpa, MalformedInputReportsLine) {
  const std::string good = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3\ta\n-0.3\t</s>\n\n\\end\\\n";
  std::istringstream is(good);
  EXPECT_NO_THROW(arpa_read(is));
  EXPECT_EQ(error_line("\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\ta\n-0.3\t</s>\n\n\\end\\\n"), 8u);
  EXPECT_EQ(error_line("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3x\ta\n-0.3\t</s>\n\n\\end\\\n"), 5u);
  EXPECT_EQ(error_line("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3\ta b\n-0.3\t</s>\n\n\\end\\\n"), 5u);
  EXPECT_EQ(error_line("\\data\\\nngram 1=2\n\n\\2-grams:\n"), 4u);
  EXPECT_EQ(error_line("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3\ta\n-0.3\t</s>\n"), 7u);
  EXPECT_EQ(error_line("nothing here\n"), 2u);
}

TEST(Arpa, ExternalToolkitLayoutParses) {
  ArpaModel m = arpa_read(std::filesystem::path(SKIPNET_TEST_DATA) / "external_toy.arpa");
  EXPECT_EQ(m.order(), 3u);
  const Sentence ctx{"<s>", "a"};
  EXPECT_NEAR(m.score(ctx, "b"), -0.1249387, 1e-12);
  // Missing trigram "a b a": backoff(a b) + backoff(b) + p(a).
  const Sentence ab{"a", "b"};
  EXPECT_NEAR(m.score(ab, "a"), -0.0969100 - 0.1760913 - 0.60206, 1e-12);
  for (const auto& w : m.vocabulary()) EXPECT_TRUE(std::isfinite(m.score(ab, w)));
  EXPECT_TRUE(std::isfinite(m.score(ab, "zzz")));
}

}  // namespace
}  // namespace skipnet
