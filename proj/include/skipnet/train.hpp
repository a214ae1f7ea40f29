#pragma once

// SGD training with a step learning-rate schedule, CTC loss, greedy
// evaluation with character and word error rates, and checkpointing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipnet/ctc.hpp"
#include "skipnet/features.hpp"
#include "skipnet/model.hpp"

namespace skipnet {

struct TrainConfig {
  double lr0 = 0.02;
  double momentum = 0.9;
  std::vector<std::size_t> lr_drop_epochs{82, 123};
  double lr_drop_factor = 10.0;
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  std::uint64_t seed = 7;
  double clip_norm = 5.0;
  // Stop once the training-set CER reaches this value; negative disables.
  double stop_at_train_cer = -1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// lr0 / factor^(number of drop epochs <= epoch).
double lr_at(const TrainConfig& config, std::size_t epoch);

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

struct SgdReport {
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

// Global-norm clip, then v <- momentum * v + g and p <- p - lr * v. A
// non-finite gradient leaves parameters and state untouched and throws
// NonFiniteError.
SgdReport sgd_step(std::span<const Tensor> params, SgdState& state, double lr, double momentum, double clip_norm);

enum class EditUnit { Char, Word };

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);
std::vector<std::string> edit_units(const std::string& text, EditUnit unit);

struct EditStats {
  std::size_t distance = 0;
  std::size_t length = 0;
  double rate = 0.0;
};

// Characters count every byte of the text (spaces included); words are
// whitespace-separated. An empty reference leaves the rate undefined and
// throws ContractError.
EditStats edit_distance_metrics(const std::string& ref, const std::string& hyp, EditUnit unit);

// Corpus-level rates: summed distances over summed reference lengths.
struct ErrorRates {
  double cer = 0.0;
  double wer = 0.0;
};
ErrorRates error_rates(std::span<const std::string> refs, std::span<const std::string> hyps);

struct Utterance {
  std::string id;
  Tensor features;
  LabelSequence target;
};

using Dataset = std::vector<Utterance>;

// Transcripts with symbols outside the alphabet are a ConfigError naming the
// utterance.
Dataset load_dataset(const std::filesystem::path& manifest, const FeatureParams& params, const Alphabet& alphabet);

// Worker threads: SKIPNET_THREADS when set (>= 1), else the hardware count.
std::size_t worker_threads();

// Runs body(i) for i in [0, n) over worker_threads() threads, index i on
// thread i % threads. The first exception (by thread) is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

struct EvalResult {
  double loss = 0.0;  // mean over feasible utterances
  double cer = 0.0;
  double wer = 0.0;
  std::size_t infeasible = 0;
  std::vector<std::string> hypotheses;  // greedy, in dataset order
};

EvalResult evaluate(const AcousticModel& model, const Dataset& data, const Alphabet& alphabet);

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double cer = 0.0;
  double wer = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,cer,wer,lr,wall_s";
std::string format_metrics_row(const MetricsRow& row);

struct TrainOutputs {
  std::filesystem::path metrics_csv;  // optional
  std::filesystem::path checkpoint;   // optional: best-WER model
  std::ostream* log = nullptr;        // optional progress lines
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_wer = 0.0;
  double final_train_cer = 1.0;
  std::size_t infeasible_skipped = 0;  // per epoch
  bool diverged = false;
  std::string divergence;
};

// Epoch e (1-based) uses lr_at(config, e). Each epoch visits length-grouped
// batches in a seeded random order; every utterance is forwarded on its own
// (batch-norm statistics per utterance) and contributes loss / batch_size.
// After each epoch the training and validation splits are evaluated and the
// model with the lowest validation WER (training WER without a validation
// set) is kept in memory and written to `outputs.checkpoint`. On a
// non-finite loss or gradient the run halts and the model is restored to
// the best state.
TrainResult train(AcousticModel& model, const Dataset& train_set, const Dataset& valid_set, const Alphabet& alphabet,
                  const TrainConfig& config, const TrainOutputs& outputs = {});

}  // namespace skipnet
