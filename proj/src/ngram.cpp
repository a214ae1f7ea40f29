#include "skipnet/ngram.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace skipnet {

namespace {

constexpr double kLogZero = -99.0;

std::string first_removed(const std::string& key) {
  const auto pos = key.find(' ');
  return pos == std::string::npos ? std::string() : key.substr(pos + 1);
}

std::string last_removed(const std::string& key) {
  const auto pos = key.rfind(' ');
  return pos == std::string::npos ? std::string() : key.substr(0, pos);
}

bool starts_with_bos(const std::string& key) {
  return key == kSentenceStart || key.starts_with(std::string(kSentenceStart) + " ");
}

Discounts estimate_discounts(const std::array<std::size_t, 5>& n) {
  Discounts out;
  if (n[1] == 0 || n[2] == 0 || n[3] == 0 || n[4] == 0) {
    out.fallback = true;
    return out;
  }
  const double y = static_cast<double>(n[1]) / (static_cast<double>(n[1]) + 2.0 * static_cast<double>(n[2]));
  for (std::size_t k = 1; k <= 3; ++k) {
    const double d = static_cast<double>(k) -
                     static_cast<double>(k + 1) * y * static_cast<double>(n[k + 1]) / static_cast<double>(n[k]);
    if (!(d > 0.0 && d <= static_cast<double>(k))) {
      out = Discounts{};
      out.fallback = true;
      return out;
    }
    out.d[k - 1] = d;
  }
  return out;
}

double discount_for(const Discounts& d, std::size_t count) {
  return d.d[std::min<std::size_t>(count, 3) - 1];
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& text, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw FormatError("invalid number '" + text + "'", line);
  return v;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string char_token(char c) { return c == ' ' ? std::string(kWordBoundary) : std::string(1, c); }

Sentence tokenize(const std::string& line, TokenMode mode) {
  if (mode == TokenMode::Word) return split_ws(line);
  Sentence out;
  for (char c : trim(line)) {
    if (c == '\t' || c == '\r' || c == '\n') c = ' ';
    if (c == ' ' && !out.empty() && out.back() == kWordBoundary) continue;
    out.push_back(char_token(c));
  }
  return out;
}

std::vector<Sentence> read_corpus(const std::filesystem::path& path, TokenMode mode) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open corpus '" + path.string() + "'");
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    out.push_back(tokenize(line, mode));
  }
  return out;
}

std::string ngram_key(std::span<const std::string> tokens) {
  std::string key;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) key += ' ';
    key += tokens[i];
  }
  return key;
}

std::size_t CountTable::continuation_count(const std::string& key) const {
  const std::size_t n = static_cast<std::size_t>(std::count(key.begin(), key.end(), ' ')) + 1;
  if (n > continuation.size()) return 0;
  const auto it = continuation[n - 1].find(key);
  return it == continuation[n - 1].end() ? 0 : it->second;
}

CountTable count_ngrams(const std::vector<Sentence>& corpus, std::size_t order) {
  if (order < 1) throw ContractError("n-gram order must be at least 1");
  if (corpus.empty()) throw ContractError("cannot count n-grams of an empty corpus");
  CountTable t;
  t.order = order;
  t.raw.resize(order);
  t.adjusted.resize(order);
  t.continuation.resize(order);
  t.counts_of_counts.assign(order, {});

  for (const Sentence& s : corpus) {
    std::vector<std::string> padded;
    padded.reserve(s.size() + 2);
    padded.emplace_back(kSentenceStart);
    for (const auto& tok : s) {
      if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos)
        throw ContractError("n-gram tokens must be non-empty and contain no whitespace");
      padded.push_back(tok);
    }
    padded.emplace_back(kSentenceEnd);
    for (std::size_t n = 1; n <= order; ++n) {
      for (std::size_t i = 0; i + n <= padded.size(); ++i) {
        // The lone <s> unigram is counted once per sentence like any token.
        ++t.raw[n - 1][ngram_key(std::span(padded).subspan(i, n))];
      }
    }
  }

  for (std::size_t n = 1; n < order; ++n)
    for (const auto& [key, count] : t.raw[n]) ++t.continuation[n - 1][first_removed(key)];

  for (std::size_t n = 1; n <= order; ++n) {
    for (const auto& [key, count] : t.raw[n - 1]) {
      const bool use_raw = n == order || starts_with_bos(key);
      const std::size_t a = use_raw ? count : t.continuation_count(key);
      t.adjusted[n - 1][key] = a;
      if (n == 1 && key == kSentenceStart) continue;
      if (a >= 1 && a <= 4) ++t.counts_of_counts[n - 1][a];
    }
  }
  return t;
}

ArpaModel::ArpaModel(std::size_t order) : tables_(order) {
  if (order < 1) throw ContractError("n-gram order must be at least 1");
}

const std::unordered_map<std::string, ArpaEntry>& ArpaModel::table(std::size_t n) const {
  if (n < 1 || n > tables_.size()) throw ContractError("no table for order " + std::to_string(n));
  return tables_[n - 1];
}

void ArpaModel::set(std::size_t n, const std::string& key, ArpaEntry entry) {
  if (n < 1 || n > tables_.size()) throw ContractError("no table for order " + std::to_string(n));
  tables_[n - 1][key] = entry;
}

const ArpaEntry* ArpaModel::find(std::span<const std::string> ngram) const {
  if (ngram.empty() || ngram.size() > tables_.size()) return nullptr;
  const auto& table = tables_[ngram.size() - 1];
  const auto it = table.find(ngram_key(ngram));
  return it == table.end() ? nullptr : &it->second;
}

bool ArpaModel::in_vocabulary(const std::string& token) const {
  return !tables_.empty() && token != kSentenceStart && tables_[0].contains(token);
}

std::vector<std::string> ArpaModel::vocabulary() const {
  std::vector<std::string> out;
  if (tables_.empty()) return out;
  for (const auto& [key, entry] : tables_[0])
    if (key != kSentenceStart) out.push_back(key);
  std::sort(out.begin(), out.end());
  return out;
}

double ArpaModel::score(std::span<const std::string> context, const std::string& token) const {
  if (tables_.empty()) throw ContractError("score on an empty language model");
  auto map_token = [&](const std::string& t) {
    if (t == kSentenceStart || in_vocabulary(t)) return t;
    return std::string(kUnknown);
  };
  const std::size_t keep = std::min(context.size(), tables_.size() - 1);
  std::vector<std::string> gram;
  gram.reserve(keep + 1);
  for (std::size_t i = context.size() - keep; i < context.size(); ++i) gram.push_back(map_token(context[i]));
  gram.push_back(map_token(token));

  double backoff = 0.0;
  for (std::size_t start = 0; start < gram.size(); ++start) {
    const std::span<const std::string> suffix(gram.data() + start, gram.size() - start);
    if (const ArpaEntry* e = find(suffix)) return backoff + e->log10_prob;
    if (const ArpaEntry* ctx = find(suffix.first(suffix.size() - 1))) backoff += ctx->log10_backoff;
  }
  return backoff + kLogZero;
}

ArpaModel train_kn(const CountTable& counts) {
  const std::size_t order = counts.order;
  if (order < 1 || counts.adjusted.size() != order) throw ContractError("count table is not initialized");
  ArpaModel model(order);
  model.discounts.resize(order);
  for (std::size_t n = 1; n <= order; ++n) model.discounts[n - 1] = estimate_discounts(counts.counts_of_counts[n - 1]);

  // Interpolated probabilities per order, natural scale.
  std::vector<std::map<std::string, double>> prob(order);
  // Interpolation weight of each context (order n context lives in gamma[n - 1]).
  std::vector<std::map<std::string, double>> gamma(order);

  // Unigrams: interpolate with uniform over the predictable vocabulary.
  {
    const Discounts& d = model.discounts[0];
    double total = 0.0, mass = 0.0;
    std::vector<std::pair<std::string, std::size_t>> words;
    for (const auto& [key, a] : counts.adjusted[0]) {
      if (key == kSentenceStart) continue;
      words.emplace_back(key, a);
      total += static_cast<double>(a);
      mass += discount_for(d, a);
    }
    const bool has_unk = counts.adjusted[0].contains(kUnknown);
    const double vocab = static_cast<double>(words.size() + (has_unk ? 0 : 1));
    const double g = mass / total;
    gamma[0][""] = g;
    for (const auto& [w, a] : words)
      prob[0][w] = (static_cast<double>(a) - discount_for(d, a)) / total + g / vocab;
    if (!has_unk) prob[0][kUnknown] = g / vocab;
  }

  for (std::size_t n = 2; n <= order; ++n) {
    const Discounts& d = model.discounts[n - 1];
    struct Stats {
      double total = 0.0, mass = 0.0;
    };
    std::map<std::string, Stats> contexts;
    for (const auto& [key, a] : counts.adjusted[n - 1]) {
      Stats& s = contexts[last_removed(key)];
      s.total += static_cast<double>(a);
      s.mass += discount_for(d, a);
    }
    for (const auto& [ctx, s] : contexts) gamma[n - 1][ctx] = s.mass / s.total;
    for (const auto& [key, a] : counts.adjusted[n - 1]) {
      const std::string ctx = last_removed(key);
      const Stats& s = contexts[ctx];
      const double lower = prob[n - 2].at(first_removed(key));
      prob[n - 1][key] = (static_cast<double>(a) - discount_for(d, a)) / s.total + gamma[n - 1][ctx] * lower;
    }
  }

  for (std::size_t n = 1; n <= order; ++n) {
    for (const auto& [key, p] : prob[n - 1]) {
      ArpaEntry e;
      e.log10_prob = std::log10(p);
      if (n < order) {
        const auto it = gamma[n].find(key);
        e.log10_backoff = it == gamma[n].end() ? 0.0 : std::log10(it->second);
      }
      model.set(n, key, e);
    }
  }
  ArpaEntry bos;
  bos.log10_prob = kLogZero;
  if (order > 1) {
    const auto it = gamma[1].find(kSentenceStart);
    bos.log10_backoff = it == gamma[1].end() ? 0.0 : std::log10(it->second);
  }
  model.set(1, kSentenceStart, bos);
  return model;
}

PerplexityResult perplexity(const ArpaModel& model, const std::vector<Sentence>& corpus) {
  PerplexityResult r;
  for (const Sentence& s : corpus) {
    std::vector<std::string> context{kSentenceStart};
    for (std::size_t i = 0; i <= s.size(); ++i) {
      const std::string& tok = i < s.size() ? s[i] : std::string(kSentenceEnd);
      r.log10_prob += model.score(context, tok);
      ++r.tokens;
      context.push_back(tok);
    }
  }
  r.perplexity = r.tokens == 0 ? 1.0 : std::pow(10.0, -r.log10_prob / static_cast<double>(r.tokens));
  return r;
}

void arpa_write(const ArpaModel& model, std::ostream& os) {
  os << "\\data\\\n";
  for (std::size_t n = 1; n <= model.order(); ++n) os << "ngram " << n << "=" << model.table(n).size() << "\n";
  for (std::size_t n = 1; n <= model.order(); ++n) {
    os << "\n\\" << n << "-grams:\n";
    std::vector<std::string> keys;
    keys.reserve(model.table(n).size());
    for (const auto& [key, entry] : model.table(n)) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    for (const auto& key : keys) {
      const ArpaEntry& e = model.table(n).at(key);
      os << format_double(e.log10_prob) << '\t';
      os << key;
      if (n < model.order()) os << '\t' << format_double(e.log10_backoff);
      os << '\n';
    }
  }
  os << "\n\\end\\\n";
}

void arpa_write(const ArpaModel& model, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write ARPA file '" + path.string() + "'");
  arpa_write(model, os);
  if (!os) throw ConfigError("failed writing ARPA file '" + path.string() + "'");
}

ArpaModel arpa_read(std::istream& is) {
  std::string raw_line;
  std::size_t line_no = 0;
  auto next = [&](std::string& out) {
    if (!std::getline(is, raw_line)) return false;
    ++line_no;
    out = trim(raw_line);
    return true;
  };

  std::string line;
  bool found = false;
  while (next(line)) {
    if (line == "\\data\\") {
      found = true;
      break;
    }
  }
  if (!found) throw FormatError("missing \\data\\ header", line_no + 1);

  std::vector<std::size_t> declared;
  while (next(line)) {
    if (line.empty()) {
      if (declared.empty()) continue;
      break;
    }
    if (!line.starts_with("ngram ")) {
      if (line.starts_with("\\")) break;
      throw FormatError("expected 'ngram N=count', got '" + line + "'", line_no);
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected 'ngram N=count'", line_no);
    std::size_t n = 0, c = 0;
    const std::string ns = trim(line.substr(6, eq - 6)), cs = trim(line.substr(eq + 1));
    if (std::from_chars(ns.data(), ns.data() + ns.size(), n).ptr != ns.data() + ns.size() || ns.empty() ||
        std::from_chars(cs.data(), cs.data() + cs.size(), c).ptr != cs.data() + cs.size() || cs.empty())
      throw FormatError("invalid count line '" + line + "'", line_no);
    if (n != declared.size() + 1) throw FormatError("n-gram orders must be declared in sequence", line_no);
    declared.push_back(c);
  }
  if (declared.empty()) throw FormatError("no n-gram counts declared", line_no);

  ArpaModel model(declared.size());
  std::size_t current = 0, seen = 0;
  auto close_section = [&]() {
    if (current != 0 && seen != declared[current - 1])
      throw FormatError("section \\" + std::to_string(current) + "-grams: has " + std::to_string(seen) +
                            " entries, header declares " + std::to_string(declared[current - 1]),
                        line_no);
  };
  bool ended = false;
  // The loop above stopped on a blank line or a section header; reprocess the latter.
  bool pending = line.starts_with("\\");
  while (pending || next(line)) {
    pending = false;
    if (line.empty()) continue;
    if (line == "\\end\\") {
      close_section();
      ended = true;
      break;
    }
    if (line.starts_with("\\")) {
      close_section();
      const std::string suffix = "-grams:";
      if (!line.ends_with(suffix)) throw FormatError("unexpected section '" + line + "'", line_no);
      const std::string ns = line.substr(1, line.size() - 1 - suffix.size());
      std::size_t n = 0;
      if (ns.empty() || std::from_chars(ns.data(), ns.data() + ns.size(), n).ptr != ns.data() + ns.size())
        throw FormatError("unexpected section '" + line + "'", line_no);
      if (n != current + 1 || n > declared.size())
        throw FormatError("section \\" + ns + "-grams: out of order", line_no);
      current = n;
      seen = 0;
      continue;
    }
    if (current == 0) throw FormatError("n-gram entry outside a section", line_no);
    const std::vector<std::string> fields = split_ws(line);
    const bool has_backoff = fields.size() == current + 2;
    if (fields.size() != current + 1 && !(has_backoff && current < declared.size()))
      throw FormatError("expected " + std::to_string(current) + " tokens in a " + std::to_string(current) +
                            "-gram entry",
                        line_no);
    ArpaEntry e;
    e.log10_prob = parse_double(fields[0], line_no);
    if (has_backoff) e.log10_backoff = parse_double(fields[current + 1], line_no);
    const std::string key = ngram_key(std::span(fields).subspan(1, current));
    if (model.table(current).contains(key)) throw FormatError("duplicate n-gram '" + key + "'", line_no);
    model.set(current, key, e);
    ++seen;
  }
  if (!ended) throw FormatError("missing \\end\\ marker", line_no + 1);
  if (current != declared.size()) throw FormatError("missing sections before \\end\\", line_no);
  return model;
}

ArpaModel arpa_read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open ARPA file '" + path.string() + "'");
  return arpa_read(is);
}

}  // namespace skipnet
