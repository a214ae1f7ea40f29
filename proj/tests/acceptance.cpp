// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only N] [--out DIR]

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "skipnet/blocks.hpp"
#include "skipnet/ctc.hpp"
#include "skipnet/decoder.hpp"
#include "skipnet/gradcheck.hpp"
#include "skipnet/model.hpp"
#include "skipnet/ngram.hpp"
#include "skipnet/pipeline.hpp"
#include "skipnet/synth.hpp"
#include "skipnet/train.hpp"

using namespace skipnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

Tensor random_logprobs(std::size_t classes, std::size_t frames, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 2.0);
  std::vector<double> v(classes * frames);
  for (double& x : v) x = dist(rng);
  NoGradGuard guard;
  return log_softmax(Tensor({classes, frames}, v));
}

// 1: finite differences over ops, blocks and the tiny model.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;

Outcome gradient_suites() {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteOptions options;
  options.eps = 1e-5;
  options.tolerance = kGradTolerance;
  const auto results = run_gradient_suites(options);
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  std::string worst_name, failed;
  bool models = false;
  for (const auto& r : results) {
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_name = r.name;
    }
    if (!(r.max_error < kGradTolerance)) failed += " " + r.name;
    models = models || r.name.starts_with("model/");
  }
  const bool ok = failed.empty() && models && elapsed < kGradSeconds;
  return {ok, fmt("%zu suites, max rel err %.2e (%s) < %.0e, %.1f s < %.0f s%s", results.size(), worst,
                  worst_name.c_str(), kGradTolerance, elapsed, kGradSeconds,
                  failed.empty() ? "" : (", failed:" + failed).c_str())};
}

// 2: forward-backward against path enumeration.
constexpr double kCtcTolerance = 1e-9;

Outcome ctc_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240607);
  std::uniform_int_distribution<std::size_t> frames_dist(1, 8), symbols_dist(1, 3), length_dist(0, 3);
  int checked = 0, bad = 0;
  double worst = 0.0;
  while (checked < 200) {
    const std::size_t frames = frames_dist(rng), symbols = symbols_dist(rng);
    std::vector<std::size_t> target(length_dist(rng));
    std::uniform_int_distribution<std::size_t> label_dist(1, symbols);
    for (auto& l : target) l = label_dist(rng);
    if (ctc_min_frames(target) > frames) continue;
    const Tensor lp = random_logprobs(symbols + 1, frames, rng);
    const double err = std::abs(ctc_loss(lp, target).loss - ctc_brute_force(lp, target));
    worst = std::max(worst, err);
    if (!(err < kCtcTolerance)) ++bad;
    ++checked;
  }
  const double elapsed = seconds_since(start);
  return {bad == 0 && elapsed < 30.0,
          fmt("%d instances, max |diff| %.2e < %.0e, %d over, %.1f s < 30 s", checked, worst, kCtcTolerance, bad,
              elapsed)};
}

// 3: full beam equals exhaustive search; best score non-decreasing in B.
Outcome decoder_exactness() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> frames_dist(1, 6), symbols_dist(1, 2);
  int mismatches = 0, non_monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t frames = frames_dist(rng), symbols = symbols_dist(rng);
    const Alphabet alphabet(std::string("ab").substr(0, symbols));
    const Tensor lp = random_logprobs(symbols + 1, frames, rng);
    DecoderConfig c;
    c.lm_weight = 0.0;
    c.insertion_bonus = 0.0;
    c.beam_width = static_cast<std::size_t>(std::pow(symbols + 1, frames));
    if (prefix_beam_search(lp, alphabet, c).labels != exhaustive_decode(lp, alphabet, c).labels) ++mismatches;
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t b : {1, 2, 4, 8}) {
      c.beam_width = b;
      const double score = prefix_beam_search(lp, alphabet, c).score;
      if (score < previous) ++non_monotone;
      previous = score;
    }
  }
  const double elapsed = seconds_since(start);
  return {mismatches == 0 && non_monotone == 0 && elapsed < 60.0,
          fmt("100 instances, %d transcript mismatches, %d monotonicity violations over B in {1,2,4,8}, %.1f s < 60 s",
              mismatches, non_monotone, elapsed)};
}

// 4: modified Kneser-Ney normalization and ARPA round trip.
constexpr double kNormTolerance = 1e-8;
constexpr double kArpaTolerance = 1e-10;

std::vector<Sentence> lm_corpus() {
  const std::vector<std::string> vocab{"one", "two", "three", "four", "five", "six", "seven"};
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> len(1, 8), pick(0, vocab.size() - 1);
  std::vector<Sentence> corpus;
  for (int i = 0; i < 50; ++i) {
    Sentence s;
    if (i % 4 == 0) s = {"one", "two", "three"};
    else
      for (std::size_t k = len(rng); k > 0; --k) s.push_back(vocab[pick(rng)]);
    corpus.push_back(s);
  }
  return corpus;
}

Outcome lm_normalization(const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto corpus = lm_corpus();
  const ArpaModel m = train_kn(count_ngrams(corpus, 4));
  const auto vocab = m.vocabulary();
  std::set<Sentence> contexts{{}};
  for (const Sentence& s : corpus) {
    Sentence p{kSentenceStart};
    p.insert(p.end(), s.begin(), s.end());
    for (std::size_t end = 1; end <= p.size(); ++end)
      for (std::size_t len = 1; len < m.order() && len <= end; ++len)
        contexts.insert(Sentence(p.begin() + static_cast<long>(end - len), p.begin() + static_cast<long>(end)));
  }
  double worst_norm = 0.0;
  for (const Sentence& ctx : contexts) {
    double total = 0.0;
    for (const auto& w : vocab) total += std::pow(10.0, m.score(ctx, w));
    worst_norm = std::max(worst_norm, std::abs(total - 1.0));
  }
  fs::create_directories(out);
  const fs::path file = out / "acceptance_lm.arpa";
  arpa_write(m, file);
  const ArpaModel r = arpa_read(file);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1), len(0, 4);
  double worst_trip = 0.0;
  for (int q = 0; q < 1000; ++q) {
    Sentence ctx;
    if (q % 2 == 0) ctx.push_back(kSentenceStart);
    for (std::size_t k = len(rng); k > 0; --k) ctx.push_back(vocab[pick(rng)]);
    const std::string w = q % 97 == 0 ? "unseen" : vocab[pick(rng)];
    worst_trip = std::max(worst_trip, std::abs(m.score(ctx, w) - r.score(ctx, w)));
  }
  const double elapsed = seconds_since(start);
  return {worst_norm <= kNormTolerance && worst_trip <= kArpaTolerance && elapsed < 30.0,
          fmt("%zu contexts, max |sum-1| %.2e <= %.0e; 1000 queries, max |diff| %.2e <= %.0e; %.1f s < 30 s",
              contexts.size(), worst_norm, kNormTolerance, worst_trip, kArpaTolerance, elapsed)};
}

// 5: synthetic corpus, all four kinds to training CER <= 5% within 200 epochs.
constexpr double kTargetCer = 0.05;
constexpr std::size_t kMaxEpochs = 200;
constexpr double kVariantSeconds = 600.0;

Outcome toy_end_to_end(const fs::path& out) {
  setenv("SKIPNET_THREADS", "1", 1);
  RunConfig config;
  config.synth.seed = 7;
  config.synth.utterances = 20;
  config.train.epochs = kMaxEpochs;
  config.train.stop_at_train_cer = kTargetCer;
  config.decoder.beam_width = 32;
  config.lm.mode = TokenMode::Char;
  config.resolve();
  const fs::path dir = out / "toy";
  fs::remove_all(dir);
  const auto rows = run_all_variants(config, dir);

  bool ok = rows.size() == 4;
  std::string detail;
  for (const auto& row : rows) {
    const fs::path vdir = dir / to_string(row.kind);
    const bool decodes = fs::file_size(vdir / "greedy.tsv") > 0 && fs::file_size(vdir / "beam.tsv") > 0;
    const bool row_ok =
        !row.diverged && row.train_cer <= kTargetCer && row.epochs <= kMaxEpochs && row.wall_s < kVariantSeconds && decodes;
    ok = ok && row_ok;
    detail += fmt("%s cer %.3f @%zu ep %.0fs%s; ", to_string(row.kind).c_str(), row.train_cer, row.epochs, row.wall_s,
                  row_ok ? "" : " (FAIL)");
  }
  std::ifstream csv(dir / "table2.csv");
  std::string line;
  std::size_t lines = 0;
  bool header = false;
  for (; std::getline(csv, line); ++lines)
    if (lines == 0) header = line == kVariantsHeader;
  ok = ok && header && lines == 5;
  detail += fmt("table2.csv %zu rows", lines ? lines - 1 : 0);
  return {ok, detail};
}

// 6: identical output shapes across kinds; residual adds no parameters.
Outcome controlled_comparison() {
  ModelConfig base;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist;
  bool shapes = true;
  std::vector<std::size_t> counts;
  for (std::size_t frames : {9, 40, 101}) {
    std::vector<double> v(base.input_features * frames);
    for (double& x : v) x = dist(rng);
    const Tensor input({base.input_features, frames}, v);
    std::vector<Shape> seen;
    for (ConnectivityKind kind : kAllConnectivityKinds) {
      ModelConfig c = base;
      c.connectivity = kind;
      const AcousticModel model(c);
      NoGradGuard guard;
      const Shape s = model.forward(input, Mode::Eval).shape();
      shapes = shapes && s == Shape{c.output_channels(), model.output_length(frames)};
      seen.push_back(s);
      if (frames == 9) counts.push_back(model.parameter_count());
    }
    for (const Shape& s : seen) shapes = shapes && s == seen.front();
  }
  const bool ok = shapes && counts[1] == counts[0];
  return {ok, fmt("shapes %s at T in {9,40,101}; parameters plain %zu residual %zu highway %zu dense %zu",
                  shapes ? "identical" : "DIFFER", counts[0], counts[1], counts[2], counts[3])};
}

// 7: a strongly negative gate bias makes each highway block carry its input.
// Gated on the activations the blocks receive inside the default network;
// isolated blocks on uniform [-3, 3] inputs are reported alongside.
constexpr double kCarryTolerance = 1e-6;

Outcome highway_carry() {
  SynthConfig sc;
  sc.utterances = 5;
  sc.valid_utterances = 0;
  std::vector<Tensor> inputs;
  for (const auto& u : synthesize(sc).train) inputs.push_back(compute_features(u.wave, FeatureParams{}).values);

  double in_network = 0.0;
  std::size_t checked = 0;
  for (bool per_channel : {false, true}) {
    ModelConfig c;
    c.connectivity = ConnectivityKind::Highway;
    c.gate_bias_init = -20.0;
    c.per_channel_gate = per_channel;
    const AcousticModel model(c);
    for (const Tensor& features : inputs)
      for (Mode mode : {Mode::Train, Mode::Eval}) {
        NoGradGuard guard;
        const auto acts = model.body_activations(features, mode);
        // An odd body starts with one unpaired plain layer.
        for (std::size_t b = c.body_layers % 2; b + 1 < acts.size(); ++b, ++checked)
          for (std::size_t i = 0; i < acts[b].numel(); ++i)
            in_network = std::max(in_network, std::abs(acts[b + 1].data()[i] - acts[b].data()[i]));
      }
  }

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  double isolated = 0.0;
  for (bool per_channel : {false, true}) {
    BlockConfig c = ModelConfig{}.block_config();
    c.gate_bias_init = -20.0;
    c.per_channel_gate = per_channel;
    const HighwayBlock block(c, rng);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> v(c.channels * 50);
      for (double& x : v) x = dist(rng);
      const Tensor x({c.channels, 50}, v);
      NoGradGuard guard;
      const Tensor y = block.forward(x, Mode::Eval);
      for (std::size_t i = 0; i < x.numel(); ++i) isolated = std::max(isolated, std::abs(y.data()[i] - x.data()[i]));
    }
  }
  return {checked > 0 && in_network < kCarryTolerance,
          fmt("in-network sup |y - x| = %.2e < %.0e over %zu block passes; isolated blocks on [-3,3] inputs %.2e",
              in_network, kCarryTolerance, checked, isolated)};
}

// 8: step schedule at the drop boundaries.
Outcome lr_schedule() {
  TrainConfig c;
  c.lr0 = 0.1;
  c.lr_drop_epochs = {82, 123};
  c.lr_drop_factor = 10.0;
  const std::size_t epochs[] = {81, 82, 122, 123};
  const double expected[] = {0.1, 0.1 / 10.0, 0.1 / 10.0, 0.1 / 10.0 / 10.0};
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 4; ++i) {
    const double lr = lr_at(c, epochs[i]);
    ok = ok && lr == expected[i];
    detail += fmt("%s%zu:%g", i ? " " : "", epochs[i], lr);
  }
  return {ok, detail + " (exact)"};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  fs::path out = fs::temp_directory_path() / "skipnet_acceptance";
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--out") && i + 1 < argc) out = argv[++i];
    else {
      std::fprintf(stderr, "usage: %s [--only N] [--out DIR]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suites", gradient_suites},
      {"ctc oracle equivalence", ctc_oracle},
      {"decoder exactness", decoder_exactness},
      {"lm normalization + arpa round trip", [&] { return lm_normalization(out); }},
      {"toy end-to-end", [&] { return toy_end_to_end(out); }},
      {"controlled comparison", controlled_comparison},
      {"highway carry", highway_carry},
      {"lr schedule", lr_schedule},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && only != static_cast<int>(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("A%zu %-36s %s  %s\n", i + 1, criteria[i].first, o.passed ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
