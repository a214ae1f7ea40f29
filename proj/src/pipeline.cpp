#include "skipnet/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "json_util.hpp"

namespace skipnet {

namespace fs = std::filesystem;

nlohmann::json LmSettings::to_json() const {
  return {{"order", order}, {"mode", mode == TokenMode::Char ? "char" : "word"}};
}

LmSettings LmSettings::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"order", "mode"}, "lm");
  LmSettings s;
  detail::read_key(j, "order", s.order, "lm");
  if (s.order < 1) throw ConfigError("lm.order must be at least 1");
  std::string mode = "char";
  detail::read_key(j, "mode", mode, "lm");
  if (mode == "char") s.mode = TokenMode::Char;
  else if (mode == "word") s.mode = TokenMode::Word;
  else throw ConfigError("lm.mode must be 'char' or 'word', got '" + mode + "'");
  return s;
}

nlohmann::json PathSettings::to_json() const {
  return {{"train", train.string()},   {"valid", valid.string()}, {"test", test.string()},
          {"corpus", corpus.string()}, {"lm", lm.string()},       {"checkpoint", checkpoint.string()}};
}

PathSettings PathSettings::from_json(const nlohmann::json& j, const fs::path& base) {
  detail::reject_unknown_keys(j, {"train", "valid", "test", "corpus", "lm", "checkpoint"}, "paths");
  PathSettings s;
  auto read = [&](const char* key, fs::path& out) {
    std::string v;
    detail::read_key(j, key, v, "paths");
    out = v.empty() || fs::path(v).is_absolute() || base.empty() ? fs::path(v) : base / v;
  };
  read("train", s.train);
  read("valid", s.valid);
  read("test", s.test);
  read("corpus", s.corpus);
  read("lm", s.lm);
  read("checkpoint", s.checkpoint);
  return s;
}

void RunConfig::resolve() {
  const Alphabet a(alphabet);  // validates the symbols
  features.validate();
  if (model.input_features != features.feature_count())
    throw ConfigError("model.input_features is " + std::to_string(model.input_features) + " but the features give " +
                      std::to_string(features.feature_count()));
  if (model.alphabet_size != a.size())
    throw ConfigError("model.alphabet_size is " + std::to_string(model.alphabet_size) + " but alphabet '" +
                      alphabet + "' has " + std::to_string(a.size()) + " symbols");
  for (char c : synth.alphabet)
    if (alphabet.find(c) == std::string::npos)
      throw ConfigError(std::string("synth.alphabet symbol '") + c + "' is not in alphabet '" + alphabet + "'");
  if (synth.sample_rate != features.sample_rate)
    throw ConfigError("synth.sample_rate differs from features.sample_rate");
  model.validate();
  train.validate();
  decoder.validate();
  synth.validate();
}

nlohmann::json RunConfig::to_json() const {
  return {{"alphabet", alphabet},         {"features", features.to_json()}, {"model", model.to_json()},
          {"train", train.to_json()},     {"decoder", decoder.to_json()},   {"lm", lm.to_json()},
          {"synth", synth.to_json()},     {"paths", paths.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base) {
  detail::reject_unknown_keys(j, {"alphabet", "features", "model", "train", "decoder", "lm", "synth", "paths"},
                              "config");
  const nlohmann::json empty = nlohmann::json::object();
  auto section = [&](const char* key) -> const nlohmann::json& { return j.contains(key) ? j.at(key) : empty; };
  RunConfig c;
  detail::read_key(j, "alphabet", c.alphabet, "config");
  c.features = FeatureParams::from_json(section("features"));
  c.model = ModelConfig::from_json(section("model"));
  if (!section("model").contains("input_features")) c.model.input_features = c.features.feature_count();
  if (!section("model").contains("alphabet_size")) c.model.alphabet_size = c.alphabet.size();
  c.train = TrainConfig::from_json(section("train"));
  c.decoder = DecoderConfig::from_json(section("decoder"));
  c.lm = LmSettings::from_json(section("lm"));
  nlohmann::json synth = section("synth");
  if (!synth.contains("alphabet")) synth["alphabet"] = c.alphabet;
  if (!synth.contains("sample_rate")) synth["sample_rate"] = c.features.sample_rate;
  c.synth = SynthConfig::from_json(synth);
  c.paths = PathSettings::from_json(section("paths"), base);
  c.resolve();
  return c;
}

RunConfig RunConfig::load(const fs::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config '" + path.string() + "' must hold a JSON object");
    // File paths are relative to the file, override paths to the working
    // directory.
    if (j.contains("paths") && j["paths"].is_object()) {
      const fs::path dir = fs::absolute(path).parent_path();
      for (auto& [key, value] : j["paths"].items())
        if (value.is_string() && !value.get<std::string>().empty() && fs::path(value.get<std::string>()).is_relative())
          value = (dir / value.get<std::string>()).lexically_normal().string();
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return from_json(j, fs::current_path());
}

void RunConfig::set_seed(std::uint64_t seed) {
  model.init_seed = seed;
  train.seed = seed;
  synth.seed = seed;
}

void RunConfig::write(const fs::path& out_dir) const {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "config.json");
  if (!os) throw ConfigError("cannot write '" + (out_dir / "config.json").string() + "'");
  os << to_json().dump(2) << '\n';
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  if (path.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    node = &(*node)[path[i]];
    if (node->is_null()) *node = nlohmann::json::object();
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + path[i] + "' is not a section");
  }
  (*node)[path.back()] = value;
}

std::vector<Transcript> read_transcripts(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open transcript file '" + path.string() + "'");
  std::vector<Transcript> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, '\t');) fields.push_back(f);
    if (line.back() == '\t') fields.emplace_back();
    if (fields.size() != 2 && fields.size() != 3)
      throw FormatError(path.string() + ": expected id<TAB>text or id<TAB>path<TAB>text", line_no);
    if (fields[0].empty()) throw FormatError(path.string() + ": empty utterance id", line_no);
    out.push_back({fields[0], fields.back()});
  }
  return out;
}

void write_transcripts(const fs::path& path, const std::vector<Transcript>& rows) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  for (const auto& r : rows) os << r.id << '\t' << r.text << '\n';
}

const fs::path& require_path(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not set");
  if (!fs::exists(path)) throw ConfigError(what + " '" + path.string() + "' does not exist");
  return path;
}

void run_synth(const RunConfig& config, const fs::path& out_dir) {
  write_synth_corpus(out_dir, synthesize(config.synth));
  config.write(out_dir);
}

fs::path run_featurize(const RunConfig& config, const fs::path& manifest, const fs::path& out_dir) {
  std::vector<ManifestEntry> entries = read_manifest(require_path(manifest, "manifest"));
  fs::create_directories(out_dir / "features");
  std::vector<ManifestEntry> cached(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const fs::path rel = fs::path("features") / (entries[i].id + ".feat");
    write_features(out_dir / rel, load_features(entries[i], config.features));
    cached[i] = {entries[i].id, rel, entries[i].transcript};
  });
  const fs::path out = out_dir / manifest.filename();
  write_manifest(out, cached);
  config.write(out_dir);
  return out;
}

ArpaModel run_lm_train(const RunConfig& config, const fs::path& corpus, const fs::path& out_dir, std::ostream* log) {
  const auto sentences = read_corpus(require_path(corpus, "LM corpus"), config.lm.mode);
  ArpaModel lm = train_kn(count_ngrams(sentences, config.lm.order));
  if (log)
    for (std::size_t n = 0; n < lm.discounts.size(); ++n)
      if (lm.discounts[n].fallback)
        *log << "warning: order " << n + 1 << " counts-of-counts are degenerate; using discount 0.75\n";
  fs::create_directories(out_dir);
  arpa_write(lm, out_dir / "lm.arpa");
  config.write(out_dir);
  return lm;
}

void check_lm_alphabet(const ArpaModel& lm, const Alphabet& alphabet, FusionUnit fusion) {
  for (const std::string& token : lm.vocabulary()) {
    if (token == kSentenceEnd || token == kUnknown) continue;
    if (fusion == FusionUnit::Char) {
      const bool ok = token == kWordBoundary ? alphabet.symbols().find(' ') != std::string::npos
                                             : token.size() == 1 && alphabet.symbols().find(token[0]) != std::string::npos;
      if (!ok)
        throw ConfigError("LM token '" + token + "' is not a symbol of alphabet '" + alphabet.symbols() +
                          "' (character fusion needs a character LM)");
    } else {
      for (char c : token)
        if (c == ' ' || alphabet.symbols().find(c) == std::string::npos)
          throw ConfigError("LM word '" + token + "' uses symbols outside alphabet '" + alphabet.symbols() + "'");
    }
  }
}

TrainResult run_train(const RunConfig& config, const fs::path& out_dir, std::ostream* log) {
  const Alphabet alphabet(config.alphabet);
  const Dataset train_set = load_dataset(require_path(config.paths.train, "paths.train"), config.features, alphabet);
  Dataset valid_set;
  if (!config.paths.valid.empty())
    valid_set = load_dataset(require_path(config.paths.valid, "paths.valid"), config.features, alphabet);
  fs::create_directories(out_dir);
  config.write(out_dir);
  AcousticModel model(config.model);
  TrainResult r = train(model, train_set, valid_set, alphabet, config.train,
                        {out_dir / "metrics.csv", out_dir / "best.ckpt", log});
  model.save(out_dir / "final.ckpt");
  if (log && r.infeasible_skipped)
    *log << "skipped " << r.infeasible_skipped << " utterances too short for their transcripts\n";
  return r;
}

std::vector<Transcript> decode_dataset(const AcousticModel& model, const Dataset& data, const Alphabet& alphabet,
                                       const DecoderConfig& decoder, bool greedy) {
  std::vector<Transcript> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    NoGradGuard guard;
    const Tensor lp = model.forward(data[i].features, Mode::Eval);
    out[i] = {data[i].id, greedy ? alphabet.decode(greedy_decode(lp)) : prefix_beam_search(lp, alphabet, decoder).text};
  });
  return out;
}

std::vector<Transcript> run_decode(const RunConfig& config, const fs::path& manifest, const fs::path& out_dir,
                                   const DecodeOptions& options) {
  const Alphabet alphabet(config.alphabet);
  DecoderConfig decoder = config.decoder;
  require_path(manifest, "manifest");
  const fs::path& ckpt = require_path(config.paths.checkpoint, "paths.checkpoint");
  if (!options.greedy && !config.paths.lm.empty()) {
    auto lm = std::make_shared<ArpaModel>(arpa_read(require_path(config.paths.lm, "paths.lm")));
    check_lm_alphabet(*lm, alphabet, decoder.fusion);
    decoder.lm = std::move(lm);
  }
  AcousticModel model = AcousticModel::load(ckpt);
  if (model.config().alphabet_size != alphabet.size())
    throw ConfigError("checkpoint '" + ckpt.string() + "' has " + std::to_string(model.config().alphabet_size) +
                      " output symbols but alphabet '" + config.alphabet + "' has " + std::to_string(alphabet.size()));
  if (model.config().input_features != config.features.feature_count())
    throw ConfigError("checkpoint '" + ckpt.string() + "' expects " + std::to_string(model.config().input_features) +
                      " features but the feature settings give " + std::to_string(config.features.feature_count()));
  const Dataset data = load_dataset(manifest, config.features, alphabet);
  std::vector<Transcript> hyps = decode_dataset(model, data, alphabet, decoder, options.greedy);
  fs::create_directories(out_dir);
  write_transcripts(out_dir / "hypotheses.tsv", hyps);
  config.write(out_dir);
  return hyps;
}

Summary score_transcripts(const std::vector<Transcript>& refs, const std::vector<Transcript>& hyps) {
  std::map<std::string, std::string> by_id;
  for (const auto& h : hyps)
    if (!by_id.emplace(h.id, h.text).second) throw ConfigError("duplicate hypothesis id '" + h.id + "'");
  std::vector<std::string> r, h;
  for (const auto& ref : refs) {
    auto it = by_id.find(ref.id);
    if (it == by_id.end()) throw ConfigError("no hypothesis for utterance '" + ref.id + "'");
    r.push_back(ref.text);
    h.push_back(it->second);
  }
  if (r.empty()) throw ConfigError("no reference transcripts to score");
  const ErrorRates e = error_rates(r, h);
  return {r.size(), e.cer, e.wer};
}

std::string format_variant_row(const VariantRow& row) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%zu,%zu,%s", to_string(row.kind).c_str(),
                row.beam.wer, row.beam.cer, row.greedy.wer, row.greedy.cer, row.train_cer, row.epochs,
                row.parameters, row.eval_split.c_str());
  return buf;
}

std::vector<VariantRow> run_all_variants(const RunConfig& config, const fs::path& out_dir, std::ostream* log) {
  const Alphabet alphabet(config.alphabet);
  fs::create_directories(out_dir);
  config.write(out_dir);

  fs::path train_manifest = config.paths.train, valid_manifest = config.paths.valid, corpus = config.paths.corpus;
  if (train_manifest.empty()) {
    const fs::path data_dir = out_dir / "data";
    write_synth_corpus(data_dir, synthesize(config.synth));
    train_manifest = data_dir / "train.tsv";
    if (config.synth.valid_utterances > 0) valid_manifest = data_dir / "valid.tsv";
    if (corpus.empty()) corpus = data_dir / "corpus.txt";
  }
  const Dataset train_set = load_dataset(require_path(train_manifest, "paths.train"), config.features, alphabet);
  Dataset valid_set;
  if (!valid_manifest.empty()) valid_set = load_dataset(require_path(valid_manifest, "paths.valid"), config.features, alphabet);

  DecoderConfig decoder = config.decoder;
  std::shared_ptr<ArpaModel> lm;
  if (!config.paths.lm.empty()) {
    lm = std::make_shared<ArpaModel>(arpa_read(require_path(config.paths.lm, "paths.lm")));
  } else {
    if (corpus.empty()) {
      corpus = out_dir / "corpus.txt";
      std::ofstream os(corpus);
      for (const auto& u : train_set) os << u.target.text << '\n';
    }
    lm = std::make_shared<ArpaModel>(run_lm_train(config, corpus, out_dir, log));
  }
  check_lm_alphabet(*lm, alphabet, decoder.fusion);
  decoder.lm = lm;

  const Dataset& eval_set = valid_set.empty() ? train_set : valid_set;
  std::vector<Transcript> refs;
  for (const auto& u : eval_set) refs.push_back({u.id, u.target.text});

  std::vector<VariantRow> rows;
  for (ConnectivityKind kind : kAllConnectivityKinds) {
    const fs::path dir = out_dir / to_string(kind);
    fs::create_directories(dir);
    RunConfig variant = config;
    variant.model.connectivity = kind;
    variant.write(dir);
    AcousticModel model(variant.model);
    const auto start = std::chrono::steady_clock::now();
    if (log) *log << "== " << to_string(kind) << " (" << model.parameter_count() << " parameters)\n";
    const TrainResult r =
        train(model, train_set, valid_set, alphabet, variant.train, {dir / "metrics.csv", dir / "best.ckpt", log});
    model.save(dir / "final.ckpt");
    VariantRow row;
    row.kind = kind;
    row.parameters = model.parameter_count();
    row.epochs = r.epochs_run;
    row.train_cer = r.final_train_cer;
    row.diverged = r.diverged;
    row.eval_split = valid_set.empty() ? "train" : "valid";
    const auto greedy = decode_dataset(model, eval_set, alphabet, decoder, true);
    const auto beam = decode_dataset(model, eval_set, alphabet, decoder, false);
    write_transcripts(dir / "greedy.tsv", greedy);
    write_transcripts(dir / "beam.tsv", beam);
    row.greedy = score_transcripts(refs, greedy);
    row.beam = score_transcripts(refs, beam);
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log)
      *log << to_string(kind) << ": epochs " << row.epochs << " train_cer " << row.train_cer << " greedy_wer "
           << row.greedy.wer << " beam_wer " << row.beam.wer << " (" << row.wall_s << " s)\n";
    rows.push_back(row);
  }

  std::ofstream csv(out_dir / "table2.csv");
  if (!csv) throw ConfigError("cannot write '" + (out_dir / "table2.csv").string() + "'");
  csv << kVariantsHeader << '\n';
  for (const auto& row : rows) csv << format_variant_row(row) << '\n';
  return rows;
}

}  // namespace skipnet
