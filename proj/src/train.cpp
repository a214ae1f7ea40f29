#include "skipnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "json_util.hpp"

namespace skipnet {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(lr_drop_factor > 1.0) || !std::isfinite(lr_drop_factor)) throw ConfigError("train.lr_drop_factor must exceed 1");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!std::is_sorted(lr_drop_epochs.begin(), lr_drop_epochs.end()))
    throw ConfigError("train.lr_drop_epochs must be ascending");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr0", lr0},
          {"momentum", momentum},
          {"lr_drop_epochs", lr_drop_epochs},
          {"lr_drop_factor", lr_drop_factor},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"clip_norm", clip_norm},
          {"stop_at_train_cer", stop_at_train_cer}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"lr0", "momentum", "lr_drop_epochs", "lr_drop_factor", "epochs", "batch_size", "seed",
                               "clip_norm", "stop_at_train_cer"},
                              "train");
  TrainConfig c;
  detail::read_key(j, "lr0", c.lr0, "train");
  detail::read_key(j, "momentum", c.momentum, "train");
  detail::read_key(j, "lr_drop_epochs", c.lr_drop_epochs, "train");
  detail::read_key(j, "lr_drop_factor", c.lr_drop_factor, "train");
  detail::read_key(j, "epochs", c.epochs, "train");
  detail::read_key(j, "batch_size", c.batch_size, "train");
  detail::read_key(j, "seed", c.seed, "train");
  detail::read_key(j, "clip_norm", c.clip_norm, "train");
  detail::read_key(j, "stop_at_train_cer", c.stop_at_train_cer, "train");
  c.validate();
  return c;
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  double lr = config.lr0;
  for (std::size_t drop : config.lr_drop_epochs)
    if (drop <= epoch) lr /= config.lr_drop_factor;
  return lr;
}

SgdReport sgd_step(std::span<const Tensor> params, SgdState& state, double lr, double momentum, double clip_norm) {
  if (state.velocity.empty()) {
    for (const Tensor& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw DimensionError("optimizer state does not match the parameters");
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.velocity[i].size() != params[i].numel()) throw DimensionError("optimizer state does not match the parameters");
    if (!params[i].has_grad()) continue;
    for (double g : params[i].grad()) sq += g * g;
  }
  SgdReport report;
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm)) throw NonFiniteError("non-finite gradient; optimizer step aborted");
  if (report.grad_norm > clip_norm) report.clip_scale = clip_norm / report.grad_norm;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.velocity[i];
    auto value = params[i].data();
    const bool has = params[i].has_grad();
    const auto grad = has ? params[i].grad() : std::span<double>();
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = momentum * v[k] + (has ? report.clip_scale * grad[k] : 0.0);
      value[k] -= lr * v[k];
    }
  }
  return report;
}

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  std::vector<std::size_t> row(hyp.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[hyp.size()];
}

std::vector<std::string> edit_units(const std::string& text, EditUnit unit) {
  std::vector<std::string> out;
  if (unit == EditUnit::Char) {
    for (char c : text) out.emplace_back(1, c);
    return out;
  }
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

EditStats edit_distance_metrics(const std::string& ref, const std::string& hyp, EditUnit unit) {
  const auto r = edit_units(ref, unit), h = edit_units(hyp, unit);
  if (r.empty()) throw ContractError("error rate is undefined for an empty reference");
  EditStats s;
  s.distance = edit_distance(r, h);
  s.length = r.size();
  s.rate = static_cast<double>(s.distance) / static_cast<double>(s.length);
  return s;
}

ErrorRates error_rates(std::span<const std::string> refs, std::span<const std::string> hyps) {
  if (refs.size() != hyps.size()) throw ContractError("reference and hypothesis counts differ");
  std::size_t cd = 0, cl = 0, wd = 0, wl = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto rc = edit_units(refs[i], EditUnit::Char), hc = edit_units(hyps[i], EditUnit::Char);
    const auto rw = edit_units(refs[i], EditUnit::Word), hw = edit_units(hyps[i], EditUnit::Word);
    cd += edit_distance(rc, hc);
    cl += rc.size();
    wd += edit_distance(rw, hw);
    wl += rw.size();
  }
  if (cl == 0 || wl == 0) throw ContractError("error rate is undefined for empty references");
  return {static_cast<double>(cd) / static_cast<double>(cl), static_cast<double>(wd) / static_cast<double>(wl)};
}

Dataset load_dataset(const std::filesystem::path& manifest, const FeatureParams& params, const Alphabet& alphabet) {
  Dataset out;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    Utterance u;
    u.id = e.id;
    u.features = load_features(e, params).values;
    try {
      u.target = alphabet.encode(e.transcript);
    } catch (const ContractError& err) {
      throw ConfigError("utterance '" + e.id + "': " + err.what());
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("SKIPNET_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError("SKIPNET_THREADS must be a positive integer, got '" + std::string(env) + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t k = 0; k < threads; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += threads) body(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

EvalResult evaluate(const AcousticModel& model, const Dataset& data, const Alphabet& alphabet) {
  EvalResult r;
  const std::size_t n = data.size();
  std::vector<double> losses(n, std::numeric_limits<double>::quiet_NaN());
  r.hypotheses.resize(n);
  parallel_for(n, [&](std::size_t i) {
    NoGradGuard guard;
    const Tensor lp = model.forward(data[i].features, Mode::Eval);
    r.hypotheses[i] = alphabet.decode(greedy_decode(lp));
    if (ctc_min_frames(data[i].target.labels) <= lp.dim(1)) losses[i] = ctc_loss(lp, data[i].target.labels).loss;
  });
  double total = 0.0;
  std::size_t feasible = 0;
  for (double l : losses) {
    if (std::isnan(l)) {
      ++r.infeasible;
    } else {
      total += l;
      ++feasible;
    }
  }
  r.loss = feasible ? total / static_cast<double>(feasible) : std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> refs;
  for (const auto& u : data) refs.push_back(u.target.text);
  if (n > 0) {
    const ErrorRates e = error_rates(refs, r.hypotheses);
    r.cer = e.cer;
    r.wer = e.wer;
  }
  return r;
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%.3f", row.epoch, row.split.c_str(), row.loss,
                row.cer, row.wer, row.lr, row.wall_s);
  return buf;
}

namespace {

// Indices grouped by feature length, split into batches.
std::vector<std::vector<std::size_t>> length_batches(const Dataset& data, std::size_t batch_size) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data[a].features.dim(1) < data[b].features.dim(1); });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  return batches;
}

}  // namespace

TrainResult train(AcousticModel& model, const Dataset& train_set, const Dataset& valid_set, const Alphabet& alphabet,
                  const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  if (model.config().alphabet_size != alphabet.size())
    throw ConfigError("model alphabet_size " + std::to_string(model.config().alphabet_size) +
                      " does not match the alphabet size " + std::to_string(alphabet.size()));

  std::ofstream csv;
  if (!outputs.metrics_csv.empty()) {
    csv.open(outputs.metrics_csv);
    if (!csv) throw ConfigError("cannot write metrics file '" + outputs.metrics_csv.string() + "'");
    csv << kMetricsHeader << '\n';
  }

  TrainResult result;
  for (const auto& u : train_set)
    if (ctc_min_frames(u.target.labels) > model.output_length(u.features.dim(1))) ++result.infeasible_skipped;
  if (result.infeasible_skipped == train_set.size()) throw ContractError("no training utterance is CTC-feasible");

  std::mt19937_64 rng(config.seed);
  auto batches = length_batches(train_set, config.batch_size);
  const std::vector<Tensor> params = model.parameter_tensors();
  SgdState optimizer;
  AcousticModel::State best_state = model.snapshot();
  double best_wer = std::numeric_limits<double>::infinity(), best_cer = best_wer;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    std::shuffle(batches.begin(), batches.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    try {
      for (const auto& batch : batches) {
        model.zero_grad();
        bool any = false;
        for (std::size_t idx : batch) {
          const Utterance& u = train_set[idx];
          Tensor lp = model.forward(u.features, Mode::Train);
          lp.check_finite("forward");
          if (ctc_min_frames(u.target.labels) > lp.dim(1)) continue;
          Tensor loss = ctc_loss_tensor(lp, u.target.labels);
          if (!std::isfinite(loss.item())) throw NonFiniteError("non-finite loss on utterance '" + u.id + "'");
          loss_sum += loss.item();
          ++loss_count;
          backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
          any = true;
        }
        if (any) sgd_step(params, optimizer, lr, config.momentum, config.clip_norm);
      }
    } catch (const NonFiniteError& e) {
      result.diverged = true;
      result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      if (outputs.log) *outputs.log << "halting: " << result.divergence << '\n';
      model.restore(best_state);
      break;
    }

    const EvalResult on_train = evaluate(model, train_set, alphabet);
    MetricsRow train_row{epoch, "train", loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0,
                         on_train.cer, on_train.wer, lr, elapsed()};
    result.rows.push_back(train_row);
    double wer = on_train.wer, cer = on_train.cer;
    if (!valid_set.empty()) {
      const EvalResult on_valid = evaluate(model, valid_set, alphabet);
      result.rows.push_back({epoch, "valid", on_valid.loss, on_valid.cer, on_valid.wer, lr, elapsed()});
      wer = on_valid.wer;
      cer = on_valid.cer;
    }
    if (csv) {
      for (std::size_t k = result.rows.size() - (valid_set.empty() ? 1 : 2); k < result.rows.size(); ++k)
        csv << format_metrics_row(result.rows[k]) << '\n';
      csv.flush();
    }
    result.epochs_run = epoch;
    result.final_train_cer = on_train.cer;
    if (wer < best_wer || (wer == best_wer && cer < best_cer)) {
      best_wer = wer;
      best_cer = cer;
      best_state = model.snapshot();
      result.best_epoch = epoch;
      result.best_wer = wer;
      if (!outputs.checkpoint.empty()) model.save(outputs.checkpoint);
    }
    if (outputs.log)
      *outputs.log << "epoch " << epoch << " lr " << lr << " loss " << train_row.loss << " train_cer " << on_train.cer
                   << " wer " << wer << '\n';
    if (config.stop_at_train_cer >= 0.0 && on_train.cer <= config.stop_at_train_cer) break;
  }
  return result;
}

}  // namespace skipnet
