#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <string>
#include <vector>

#include "skipnet/ctc.hpp"
#include "skipnet/decoder.hpp"
#include "skipnet/features.hpp"
#include "skipnet/gradcheck.hpp"
#include "skipnet/model.hpp"
#include "skipnet/ngram.hpp"
#include "skipnet/pipeline.hpp"
#include "skipnet/train.hpp"

namespace py = pybind11;
using namespace skipnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

RunConfig parse_config(const std::string& json) { return RunConfig::from_json(nlohmann::json::parse(json)); }

py::dict row_dict(const VariantRow& r) {
  py::dict d;
  d["architecture"] = to_string(r.kind);
  d["wer"] = r.beam.wer;
  d["cer"] = r.beam.cer;
  d["greedy_wer"] = r.greedy.wer;
  d["greedy_cer"] = r.greedy.cer;
  d["train_cer"] = r.train_cer;
  d["epochs"] = r.epochs;
  d["parameters"] = r.parameters;
  d["eval_split"] = r.eval_split;
  d["diverged"] = r.diverged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_skipnet, m) {
  m.doc() = "Fully convolutional CTC speech recognition with skip connections";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", error);
  auto contract = py::register_exception<ContractError>(m, "ContractError", error);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", contract);
  py::register_exception<InfeasibleError>(m, "InfeasibleError", error);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<FormatError>(m, "FormatError", error);

  py::class_<Alphabet>(m, "Alphabet")
      .def(py::init<std::string>(), py::arg("symbols"))
      .def_property_readonly("symbols", &Alphabet::symbols)
      .def("__len__", &Alphabet::size)
      .def("encode", [](const Alphabet& a, const std::string& text) { return a.encode(text).labels; })
      .def("decode", [](const Alphabet& a, const std::vector<std::size_t>& labels) { return a.decode(labels); });

  m.def(
      "ctc_loss",
      [](const Array& logprobs, const std::vector<std::size_t>& target) {
        const Tensor lp = to_tensor(logprobs);
        CtcResult r = ctc_loss(lp, target);
        Array grad({lp.dim(0), lp.dim(1)});
        std::copy(r.grad.begin(), r.grad.end(), grad.mutable_data());
        return py::make_tuple(r.loss, grad);
      },
      py::arg("logprobs"), py::arg("target"), "Loss and gradient for [classes, frames] log-probabilities.");
  m.def(
      "ctc_brute_force",
      [](const Array& logprobs, const std::vector<std::size_t>& target) {
        return ctc_brute_force(to_tensor(logprobs), target);
      },
      py::arg("logprobs"), py::arg("target"));
  m.def(
      "greedy_decode", [](const Array& logprobs) { return greedy_decode(to_tensor(logprobs)); }, py::arg("logprobs"));
  m.def("ctc_collapse", [](const std::vector<std::size_t>& path) { return ctc_collapse(path); }, py::arg("path"));

  py::class_<ArpaModel, std::shared_ptr<ArpaModel>>(m, "LanguageModel")
      .def_static(
          "train",
          [](const std::vector<std::string>& lines, std::size_t order, const std::string& mode) {
            const TokenMode tm = mode == "word" ? TokenMode::Word : TokenMode::Char;
            if (mode != "word" && mode != "char") throw ConfigError("mode must be 'char' or 'word'");
            std::vector<Sentence> corpus;
            for (const auto& line : lines) corpus.push_back(tokenize(line, tm));
            return std::make_shared<ArpaModel>(train_kn(count_ngrams(corpus, order)));
          },
          py::arg("lines"), py::arg("order") = 4, py::arg("mode") = "char")
      .def_static(
          "read", [](const std::filesystem::path& p) { return std::make_shared<ArpaModel>(arpa_read(p)); },
          py::arg("path"))
      .def(
          "write", [](const ArpaModel& lm, const std::filesystem::path& p) { arpa_write(lm, p); }, py::arg("path"))
      .def_property_readonly("order", &ArpaModel::order)
      .def("vocabulary", &ArpaModel::vocabulary)
      .def(
          "score",
          [](const ArpaModel& lm, const std::vector<std::string>& context, const std::string& token) {
            return lm.score(context, token);
          },
          py::arg("context"), py::arg("token"), "log10 p(token | context)");

  py::class_<DecoderConfig>(m, "DecoderConfig")
      .def(py::init<>())
      .def_readwrite("beam_width", &DecoderConfig::beam_width)
      .def_readwrite("lm_weight", &DecoderConfig::lm_weight)
      .def_readwrite("insertion_bonus", &DecoderConfig::insertion_bonus)
      .def_property(
          "fusion", [](const DecoderConfig& c) { return c.fusion == FusionUnit::Char ? "char" : "word"; },
          [](DecoderConfig& c, const std::string& v) {
            if (v != "char" && v != "word") throw ConfigError("fusion must be 'char' or 'word'");
            c.fusion = v == "char" ? FusionUnit::Char : FusionUnit::Word;
          })
      .def_property(
          "lm", [](const DecoderConfig& c) { return std::const_pointer_cast<ArpaModel>(c.lm); },
          [](DecoderConfig& c, std::shared_ptr<ArpaModel> lm) { c.lm = std::move(lm); });

  m.def(
      "prefix_beam_search",
      [](const Array& logprobs, const Alphabet& alphabet, const DecoderConfig& config) {
        const DecodeResult r = prefix_beam_search(to_tensor(logprobs), alphabet, config);
        return py::make_tuple(r.text, r.score);
      },
      py::arg("logprobs"), py::arg("alphabet"), py::arg("config"), "Returns (transcript, fused score).");
  m.def(
      "exhaustive_decode",
      [](const Array& logprobs, const Alphabet& alphabet, const DecoderConfig& config) {
        const DecodeResult r = exhaustive_decode(to_tensor(logprobs), alphabet, config);
        return py::make_tuple(r.text, r.score);
      },
      py::arg("logprobs"), py::arg("alphabet"), py::arg("config"));

  m.def(
      "read_wav",
      [](const std::filesystem::path& p) {
        const Waveform w = read_wav(p);
        return py::make_tuple(Array(static_cast<py::ssize_t>(w.samples.size()), w.samples.data()), w.sample_rate);
      },
      py::arg("path"), "Returns (samples in [-1, 1], sample_rate).");
  m.def(
      "compute_features",
      [](const Array& samples, std::uint32_t sample_rate, const std::string& params_json) {
        if (samples.ndim() != 1) throw DimensionError("samples must be 1-D");
        Waveform w{sample_rate, std::vector<double>(samples.data(), samples.data() + samples.size())};
        return to_array(compute_features(w, FeatureParams::from_json(nlohmann::json::parse(params_json))).values);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("params_json") = "{}");

  m.def(
      "edit_distance",
      [](const std::string& ref, const std::string& hyp, const std::string& unit) {
        const EditStats s = edit_distance_metrics(ref, hyp, unit == "word" ? EditUnit::Word : EditUnit::Char);
        return py::make_tuple(s.distance, s.length, s.rate);
      },
      py::arg("ref"), py::arg("hyp"), py::arg("unit") = "char", "Returns (distance, reference length, rate).");
  m.def(
      "error_rates",
      [](const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
        const ErrorRates e = error_rates(refs, hyps);
        return py::make_tuple(e.cer, e.wer);
      },
      py::arg("refs"), py::arg("hyps"), "Returns corpus-level (cer, wer).");
  m.def(
      "lr_at",
      [](const std::string& train_json, std::size_t epoch) {
        return lr_at(TrainConfig::from_json(nlohmann::json::parse(train_json)), epoch);
      },
      py::arg("train_json"), py::arg("epoch"));

  py::class_<AcousticModel>(m, "AcousticModel")
      .def(py::init([](const std::string& json) { return AcousticModel(ModelConfig::from_json(nlohmann::json::parse(json))); }),
           py::arg("config_json"))
      .def_static("load", &AcousticModel::load, py::arg("path"))
      .def("save", &AcousticModel::save, py::arg("path"))
      .def(
          "forward",
          [](const AcousticModel& model, const Array& features) {
            NoGradGuard guard;
            return to_array(model.forward(to_tensor(features), Mode::Eval));
          },
          py::arg("features"), "[features, frames] -> log-probabilities [|A| + 1, frames']")
      .def("output_length", &AcousticModel::output_length, py::arg("frames"))
      .def_property_readonly("parameter_count", &AcousticModel::parameter_count)
      .def_property_readonly("config_json", [](const AcousticModel& model) { return model.config().to_json().dump(); });

  m.def(
      "resolve_config",
      [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
        return RunConfig::load(path, overrides).to_json().dump();
      },
      py::arg("path") = std::filesystem::path(), py::arg("overrides") = std::vector<std::string>{},
      "Loads a config file (empty path: defaults), applies key=value overrides and returns resolved JSON.");
  m.def(
      "run_synth", [](const std::string& cfg, const std::filesystem::path& out) { run_synth(parse_config(cfg), out); },
      py::arg("config_json"), py::arg("out_dir"));
  m.def(
      "run_lm_train",
      [](const std::string& cfg, const std::filesystem::path& corpus, const std::filesystem::path& out) {
        return std::make_shared<ArpaModel>(run_lm_train(parse_config(cfg), corpus, out));
      },
      py::arg("config_json"), py::arg("corpus"), py::arg("out_dir"));
  m.def(
      "run_train",
      [](const std::string& cfg, const std::filesystem::path& out) {
        const RunConfig config = parse_config(cfg);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = run_train(config, out);
        }
        py::dict d;
        d["epochs"] = r.epochs_run;
        d["best_epoch"] = r.best_epoch;
        d["best_wer"] = r.best_wer;
        d["final_train_cer"] = r.final_train_cer;
        d["diverged"] = r.diverged;
        return d;
      },
      py::arg("config_json"), py::arg("out_dir"));
  m.def(
      "run_decode",
      [](const std::string& cfg, const std::filesystem::path& manifest, const std::filesystem::path& out, bool greedy) {
        const RunConfig config = parse_config(cfg);
        std::vector<Transcript> hyps;
        {
          py::gil_scoped_release release;
          hyps = run_decode(config, manifest, out, {greedy});
        }
        std::vector<std::pair<std::string, std::string>> rows;
        for (auto& h : hyps) rows.emplace_back(h.id, h.text);
        return rows;
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("out_dir"), py::arg("greedy") = false);
  m.def(
      "run_all_variants",
      [](const std::string& cfg, const std::filesystem::path& out) {
        const RunConfig config = parse_config(cfg);
        std::vector<VariantRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_all_variants(config, out);
        }
        py::list result;
        for (const auto& r : rows) result.append(row_dict(r));
        return result;
      },
      py::arg("config_json"), py::arg("out_dir"));
  m.def("gradient_suites", [] {
    std::vector<std::tuple<std::string, double, bool>> out;
    for (const auto& r : run_gradient_suites()) out.emplace_back(r.name, r.max_error, r.passed);
    return out;
  });
}
