#include "skipnet/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "json_util.hpp"

namespace skipnet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLn10 = std::numbers::ln10;

double lse(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void push_context(const ArpaModel& lm, LmState& s, std::string token) {
  s.context.push_back(std::move(token));
  const std::size_t keep = lm.order() > 1 ? lm.order() - 1 : 0;
  if (s.context.size() > keep) s.context.erase(s.context.begin(), s.context.end() - static_cast<long>(keep));
}

// Natural-log increment for emitting `symbol` after the state's prefix.
double lm_extend(const ArpaModel& lm, LmState& s, char symbol, FusionUnit fusion) {
  double inc = 0.0;
  if (fusion == FusionUnit::Char) {
    const std::string token = char_token(symbol);
    inc = kLn10 * lm.score(s.context, token);
    push_context(lm, s, token);
  } else if (symbol != ' ') {
    s.partial_word += symbol;
  } else if (!s.partial_word.empty()) {
    inc = kLn10 * lm.score(s.context, s.partial_word);
    push_context(lm, s, std::move(s.partial_word));
    s.partial_word.clear();
  }
  s.log_prob += inc;
  return inc;
}

double lm_finish(const ArpaModel& lm, const LmState& state, FusionUnit fusion) {
  LmState s = state;
  double inc = 0.0;
  if (fusion == FusionUnit::Word && !s.partial_word.empty()) {
    inc += kLn10 * lm.score(s.context, s.partial_word);
    push_context(lm, s, s.partial_word);
  }
  return inc + kLn10 * lm.score(s.context, kSentenceEnd);
}

bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.prefix < b.prefix;
}

// Best entry under the tie rule: anything within the tolerance of the top
// score competes on label order.
std::size_t pick_best(const std::vector<BeamHypothesis>& hyps) {
  std::size_t best = 0;
  double top = kNegInf;
  for (const auto& h : hyps) top = std::max(top, h.score);
  bool found = false;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (hyps[i].score < top - kScoreTieTolerance) continue;
    if (!found || hyps[i].prefix < hyps[best].prefix) best = i;
    found = true;
  }
  return best;
}

DecodeResult finish(std::vector<BeamHypothesis> hyps, const Alphabet& alphabet, const DecoderConfig& config) {
  const double alpha = config.lm ? config.lm_weight : 0.0;
  for (auto& h : hyps) {
    h.score = h.log_p_total() + config.insertion_bonus * static_cast<double>(h.prefix.size());
    if (config.lm) h.score += alpha * (h.lm.log_prob + lm_finish(*config.lm, h.lm, config.fusion));
  }
  std::sort(hyps.begin(), hyps.end(), ranks_before);
  const std::size_t best = pick_best(hyps);
  std::rotate(hyps.begin(), hyps.begin() + static_cast<long>(best), hyps.begin() + static_cast<long>(best) + 1);
  DecodeResult r;
  r.labels = hyps.front().prefix;
  r.text = alphabet.decode(r.labels);
  r.score = hyps.front().score;
  r.beam = std::move(hyps);
  return r;
}

}  // namespace

double BeamHypothesis::log_p_total() const { return lse(log_p_blank, log_p_nonblank); }

void DecoderConfig::validate() const {
  if (beam_width < 1) throw ConfigError("decoder.beam_width must be at least 1");
  if (!(lm_weight >= 0.0) || !std::isfinite(lm_weight)) throw ConfigError("decoder.lm_weight must be finite and >= 0");
  if (!std::isfinite(insertion_bonus)) throw ConfigError("decoder.insertion_bonus must be finite");
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"beam_width", beam_width},
          {"lm_weight", lm_weight},
          {"insertion_bonus", insertion_bonus},
          {"fusion", fusion == FusionUnit::Char ? "char" : "word"}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"beam_width", "lm_weight", "insertion_bonus", "fusion"}, "decoder");
  DecoderConfig c;
  detail::read_key(j, "beam_width", c.beam_width, "decoder");
  detail::read_key(j, "lm_weight", c.lm_weight, "decoder");
  detail::read_key(j, "insertion_bonus", c.insertion_bonus, "decoder");
  std::string fusion = "char";
  detail::read_key(j, "fusion", fusion, "decoder");
  if (fusion == "char") c.fusion = FusionUnit::Char;
  else if (fusion == "word") c.fusion = FusionUnit::Word;
  else throw ConfigError("decoder.fusion must be 'char' or 'word', got '" + fusion + "'");
  c.validate();
  return c;
}

double lm_log_prob(const ArpaModel& lm, const Alphabet& alphabet, std::span<const std::size_t> labels,
                   FusionUnit fusion) {
  LmState s;
  for (std::size_t l : labels) lm_extend(lm, s, alphabet.symbol(l), fusion);
  return s.log_prob + lm_finish(lm, s, fusion);
}

DecodeResult prefix_beam_search(const Tensor& logprobs, const Alphabet& alphabet, const DecoderConfig& config) {
  if (logprobs.rank() != 2) throw DimensionError("logprobs must be [classes, frames], got " + shape_string(logprobs.shape()));
  return prefix_beam_search(logprobs.data(), logprobs.dim(0), logprobs.dim(1), alphabet, config);
}

DecodeResult prefix_beam_search(std::span<const double> logprobs, std::size_t classes, std::size_t frames,
                                const Alphabet& alphabet, const DecoderConfig& config) {
  config.validate();
  if (classes != alphabet.size() + 1)
    throw DimensionError("logprobs have " + std::to_string(classes) + " classes, alphabet needs " +
                         std::to_string(alphabet.size() + 1));
  if (logprobs.size() != classes * frames) throw DimensionError("logprobs size does not match classes * frames");
  const double alpha = config.lm ? config.lm_weight : 0.0;
  auto lp = [&](std::size_t k, std::size_t t) { return logprobs[k * frames + t]; };

  BeamHypothesis start;
  start.log_p_nonblank = kNegInf;
  std::vector<BeamHypothesis> beam{start};

  for (std::size_t t = 0; t < frames; ++t) {
    std::map<std::vector<std::size_t>, BeamHypothesis> next;
    auto slot = [&](const std::vector<std::size_t>& prefix, const BeamHypothesis& parent, std::size_t symbol)
        -> BeamHypothesis& {
      auto [it, inserted] = next.try_emplace(prefix);
      if (inserted) {
        BeamHypothesis& h = it->second;
        h.prefix = prefix;
        h.log_p_blank = kNegInf;
        h.log_p_nonblank = kNegInf;
        h.lm = parent.lm;
        if (symbol != kBlank && config.lm) lm_extend(*config.lm, h.lm, alphabet.symbol(symbol), config.fusion);
      }
      return it->second;
    };
    for (const BeamHypothesis& h : beam) {
      const double total = h.log_p_total();
      BeamHypothesis& same = slot(h.prefix, h, kBlank);
      same.log_p_blank = lse(same.log_p_blank, total + lp(kBlank, t));
      if (!h.prefix.empty()) {
        const std::size_t last = h.prefix.back();
        same.log_p_nonblank = lse(same.log_p_nonblank, h.log_p_nonblank + lp(last, t));
      }
      for (std::size_t c = 1; c < classes; ++c) {
        std::vector<std::size_t> extended = h.prefix;
        extended.push_back(c);
        BeamHypothesis& ext = slot(extended, h, c);
        const double from = !h.prefix.empty() && h.prefix.back() == c ? h.log_p_blank : total;
        ext.log_p_nonblank = lse(ext.log_p_nonblank, from + lp(c, t));
      }
    }
    beam.clear();
    for (auto& [prefix, h] : next) {
      if (h.log_p_total() == kNegInf) continue;
      h.score = h.log_p_total() + alpha * h.lm.log_prob + config.insertion_bonus * static_cast<double>(prefix.size());
      beam.push_back(std::move(h));
    }
    std::sort(beam.begin(), beam.end(), ranks_before);
    if (beam.size() > config.beam_width) beam.resize(config.beam_width);
  }
  return finish(std::move(beam), alphabet, config);
}

DecodeResult exhaustive_decode(const Tensor& logprobs, const Alphabet& alphabet, const DecoderConfig& config) {
  config.validate();
  if (logprobs.rank() != 2 || logprobs.dim(0) != alphabet.size() + 1)
    throw DimensionError("logprobs must be [|A| + 1, T], got " + shape_string(logprobs.shape()));
  const std::size_t symbols = alphabet.size(), frames = logprobs.dim(1);
  if (std::pow(static_cast<double>(symbols + 1), static_cast<double>(frames)) > 1e6)
    throw ContractError("exhaustive decode refuses (|A| + 1)^T > 1e6");

  std::vector<BeamHypothesis> all;
  std::vector<std::size_t> seq;
  auto visit = [&](auto&& self) -> void {
    if (ctc_min_frames(seq) <= frames) {
      BeamHypothesis h;
      h.prefix = seq;
      h.log_p_blank = kNegInf;
      h.log_p_nonblank = -ctc_loss(logprobs, seq).loss;
      if (config.lm)
        for (std::size_t l : seq) lm_extend(*config.lm, h.lm, alphabet.symbol(l), config.fusion);
      all.push_back(std::move(h));
    } else {
      return;
    }
    if (seq.size() == frames) return;
    for (std::size_t c = 1; c <= symbols; ++c) {
      seq.push_back(c);
      self(self);
      seq.pop_back();
    }
  };
  visit(visit);
  return finish(std::move(all), alphabet, config);
}

}  // namespace skipnet
