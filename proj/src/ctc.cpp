#include "skipnet/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace skipnet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_logprobs(const Tensor& logprobs, std::span<const std::size_t> target) {
  if (!logprobs.defined() || logprobs.rank() != 2)
    throw DimensionError("ctc: log-probabilities must be [|A| + 1, T]");
  const std::size_t classes = logprobs.dim(0);
  if (classes < 2) throw DimensionError("ctc: need at least one symbol besides blank");
  for (std::size_t label : target)
    if (label == kBlank || label >= classes)
      throw ContractError("ctc: target label " + std::to_string(label) +
                          " outside 1.." + std::to_string(classes - 1));
}

}  // namespace

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw ConfigError("alphabet must contain at least one symbol");
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    for (std::size_t j = i + 1; j < symbols_.size(); ++j)
      if (symbols_[i] == symbols_[j])
        throw ConfigError(std::string("alphabet symbol '") + symbols_[i] + "' appears twice");
}

char Alphabet::symbol(std::size_t label) const {
  if (label == kBlank || label > symbols_.size())
    throw ContractError("label " + std::to_string(label) + " outside alphabet");
  return symbols_[label - 1];
}

std::size_t Alphabet::label(char symbol) const {
  const auto pos = symbols_.find(symbol);
  if (pos == std::string::npos)
    throw ContractError(std::string("character '") + symbol + "' is not in the alphabet");
  return pos + 1;
}

LabelSequence Alphabet::encode(std::string_view text) const {
  LabelSequence seq;
  seq.text = std::string(text);
  for (char c : text) seq.labels.push_back(label(c));
  return seq;
}

std::string Alphabet::decode(std::span<const std::size_t> labels) const {
  std::string text;
  for (std::size_t l : labels) text.push_back(symbol(l));
  return text;
}

std::size_t ctc_min_frames(std::span<const std::size_t> labels) {
  std::size_t frames = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++frames;
  return frames;
}

CtcResult ctc_loss(const Tensor& logprobs, std::span<const std::size_t> target) {
  check_logprobs(logprobs, target);
  const std::size_t classes = logprobs.dim(0), frames = logprobs.dim(1);
  if (frames < ctc_min_frames(target))
    throw InfeasibleError("ctc: target of length " + std::to_string(target.size()) +
                          " needs " + std::to_string(ctc_min_frames(target)) + " frames, have " +
                          std::to_string(frames));
  const auto lp = logprobs.data();
  auto at = [&](std::size_t k, std::size_t t) { return lp[k * frames + t]; };

  // Blank-extended target: blank, l1, blank, l2, ..., blank.
  const std::size_t states = 2 * target.size() + 1;
  std::vector<std::size_t> ext(states, kBlank);
  for (std::size_t u = 0; u < target.size(); ++u) ext[2 * u + 1] = target[u];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(frames * states, kNegInf), beta(frames * states, kNegInf);
  alpha[0] = at(ext[0], 0);
  if (states > 1) alpha[1] = at(ext[1], 0);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + at(ext[s], t);
    }
  }
  double* last_beta = beta.data() + (frames - 1) * states;
  last_beta[states - 1] = 0.0;
  if (states > 1) last_beta[states - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double acc = next[s] + at(ext[s], t + 1);
      if (s + 1 < states) acc = log_add(acc, next[s + 1] + at(ext[s + 1], t + 1));
      if (s + 2 < states && can_skip(s + 2)) acc = log_add(acc, next[s + 2] + at(ext[s + 2], t + 1));
      cur[s] = acc;
    }
  }

  const double* final_alpha = alpha.data() + (frames - 1) * states;
  double log_total = final_alpha[states - 1];
  if (states > 1) log_total = log_add(log_total, final_alpha[states - 2]);
  if (!std::isfinite(log_total))
    throw InfeasibleError("ctc: target has zero probability under the given log-probabilities");

  CtcResult result;
  result.loss = -log_total;
  result.grad.assign(classes * frames, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t s = 0; s < states; ++s) {
      const double a = alpha[t * states + s], b = beta[t * states + s];
      if (a == kNegInf || b == kNegInf) continue;
      result.grad[ext[s] * frames + t] -= std::exp(a + b - log_total);
    }
  return result;
}

Tensor ctc_loss_tensor(const Tensor& logprobs, std::span<const std::size_t> target) {
  CtcResult result = ctc_loss(logprobs, target);
  return detail::make_result(Shape{}, {result.loss}, {logprobs},
                             [grad = std::move(result.grad)](detail::Node& self) {
                               auto& in = self.inputs[0];
                               if (!in || !in->requires_grad) return;
                               in->ensure_grad();
                               for (std::size_t i = 0; i < grad.size(); ++i)
                                 in->grad[i] += self.grad[0] * grad[i];
                             });
}

std::vector<std::size_t> ctc_collapse(std::span<const std::size_t> path) {
  std::vector<std::size_t> out;
  std::size_t previous = kBlank;
  bool first = true;
  for (std::size_t label : path) {
    if (label != kBlank && (first || label != previous)) out.push_back(label);
    previous = label;
    first = false;
  }
  return out;
}

double ctc_brute_force(const Tensor& logprobs, std::span<const std::size_t> target) {
  check_logprobs(logprobs, target);
  const std::size_t classes = logprobs.dim(0), frames = logprobs.dim(1);
  double paths = 1.0;
  for (std::size_t t = 0; t < frames; ++t) paths *= static_cast<double>(classes);
  if (paths > 1e7)
    throw ContractError("ctc_brute_force: " + std::to_string(classes) + "^" +
                        std::to_string(frames) + " paths exceeds the 1e7 enumeration limit");
  const auto lp = logprobs.data();
  const std::vector<std::size_t> wanted(target.begin(), target.end());
  std::vector<std::size_t> path(frames, 0);
  std::vector<double> matches;
  while (true) {
    if (ctc_collapse(path) == wanted) {
      double log_p = 0.0;
      for (std::size_t t = 0; t < frames; ++t) log_p += lp[path[t] * frames + t];
      matches.push_back(log_p);
    }
    std::size_t t = 0;
    while (t < frames && ++path[t] == classes) path[t++] = 0;
    if (t == frames) break;
  }
  if (matches.empty())
    throw InfeasibleError("ctc_brute_force: no path collapses to the target");
  const double peak = *std::max_element(matches.begin(), matches.end());
  double total = 0.0;
  for (double m : matches) total += std::exp(m - peak);
  return -(peak + std::log(total));
}

std::vector<std::size_t> greedy_decode(const Tensor& logprobs) {
  if (!logprobs.defined() || logprobs.rank() != 2)
    throw DimensionError("greedy_decode: log-probabilities must be [|A| + 1, T]");
  const std::size_t classes = logprobs.dim(0), frames = logprobs.dim(1);
  std::vector<std::size_t> path(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (logprobs.at(k, t) > logprobs.at(best, t)) best = k;
    path[t] = best;
  }
  return ctc_collapse(path);
}

}  // namespace skipnet
