// skipnet: command-line front end for the speech pipeline.
//
//   skipnet synth-data --out data
//   skipnet featurize --config run.json --manifest data/train.tsv --out feats
//   skipnet lm-train --corpus data/corpus.txt --out lm
//   skipnet train --config run.json --out run
//   skipnet decode --config run.json --checkpoint run/best.ckpt --lm lm/lm.arpa --manifest data/valid.tsv --out dec
//   skipnet evaluate --ref data/valid.tsv --hyp dec/hypotheses.tsv
//   skipnet evaluate --all-variants --config run.json --out table
//   skipnet gradcheck

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "skipnet/gradcheck.hpp"
#include "skipnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace skipnet;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;

  RunConfig load(std::vector<std::string> extra = {}) const {
    std::vector<std::string> all = overrides;
    all.insert(all.end(), extra.begin(), extra.end());
    RunConfig c = RunConfig::load(config, all);
    if (seed) {
      c.set_seed(*seed);
      c.resolve();
    }
    return c;
  }
  fs::path out_or(const char* fallback) const { return out.empty() ? fs::path(fallback) : fs::path(out); }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config, "JSON run configuration");
  cmd->add_option("--seed", common.seed, "Seed for model init, training order and synthesis");
  cmd->add_option("--out", common.out, "Output directory");
  cmd->add_option("--set", common.overrides, "Override a config key: section.key=value (repeatable)");
}

std::string summary_line(const Summary& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "utterances %zu  WER %.4f  CER %.4f", s.utterances, s.wer, s.cer);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully convolutional speech recognition with skip connections"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic tone corpus");
  add_common(synth, common);
  std::optional<std::size_t> utterances;
  synth->add_option("--utterances", utterances, "Training utterances (synth.utterances)");

  auto* featurize = app.add_subcommand("featurize", "Compute feature caches for manifests");
  add_common(featurize, common);
  std::vector<std::string> feat_manifests;
  featurize->add_option("--manifest", feat_manifests, "Manifest(s); defaults to paths.train/valid/test");

  auto* lm_train = app.add_subcommand("lm-train", "Train a modified Kneser-Ney n-gram LM");
  add_common(lm_train, common);
  std::string corpus;
  lm_train->add_option("--corpus", corpus, "Text corpus, one sentence per line (default paths.corpus)");

  auto* train_cmd = app.add_subcommand("train", "Train an acoustic model");
  add_common(train_cmd, common);

  auto* decode = app.add_subcommand("decode", "Decode a manifest to utt-id<TAB>transcript");
  add_common(decode, common);
  std::string manifest, checkpoint, lm_path;
  bool greedy = false;
  decode->add_option("--manifest", manifest, "Manifest to decode (default paths.test, then paths.valid)");
  decode->add_option("--checkpoint", checkpoint, "Model checkpoint (paths.checkpoint)");
  decode->add_option("--lm", lm_path, "ARPA language model (paths.lm)");
  decode->add_flag("--greedy", greedy, "Best-path decoding without the beam or LM");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score hypotheses or run the four-variant comparison");
  add_common(evaluate_cmd, common);
  std::string ref, hyp;
  bool all_variants = false;
  evaluate_cmd->add_option("--ref", ref, "Reference transcripts or manifest");
  evaluate_cmd->add_option("--hyp", hyp, "Hypotheses file");
  evaluate_cmd->add_flag("--all-variants", all_variants, "Train and decode every connectivity kind");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  add_common(gradcheck, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      std::vector<std::string> extra;
      if (utterances) extra.push_back("synth.utterances=" + std::to_string(*utterances));
      const RunConfig config = common.load(extra);
      const fs::path out = common.out_or("synth");
      run_synth(config, out);
      std::cout << "wrote " << config.synth.utterances << " + " << config.synth.valid_utterances
                << " utterances to " << out.string() << '\n';
    } else if (featurize->parsed()) {
      const RunConfig config = common.load();
      std::vector<fs::path> manifests(feat_manifests.begin(), feat_manifests.end());
      if (manifests.empty())
        for (const fs::path& p : {config.paths.train, config.paths.valid, config.paths.test})
          if (!p.empty()) manifests.push_back(p);
      if (manifests.empty()) throw ConfigError("no manifest given: pass --manifest or set paths.train");
      for (const auto& m : manifests)
        std::cout << "wrote " << run_featurize(config, m, common.out_or("features")).string() << '\n';
    } else if (lm_train->parsed()) {
      const RunConfig config = common.load();
      const fs::path text = corpus.empty() ? config.paths.corpus : fs::path(corpus);
      const fs::path out = common.out_or("lm");
      const ArpaModel lm = run_lm_train(config, require_path(text, "LM corpus (--corpus or paths.corpus)"), out, &std::cerr);
      const auto ppl = perplexity(lm, read_corpus(text, config.lm.mode));
      std::cout << "wrote " << (out / "lm.arpa").string() << "  order " << lm.order() << "  training perplexity "
                << ppl.perplexity << '\n';
    } else if (train_cmd->parsed()) {
      const RunConfig config = common.load();
      const fs::path out = common.out_or("run");
      const TrainResult r = run_train(config, out, &std::cerr);
      std::cout << "epochs " << r.epochs_run << "  best epoch " << r.best_epoch << "  best WER " << r.best_wer
                << "  final train CER " << r.final_train_cer << '\n';
      if (r.diverged) {
        std::cerr << "error: training diverged (" << r.divergence << "); best model kept in "
                  << (out / "best.ckpt").string() << '\n';
        return 1;
      }
    } else if (decode->parsed()) {
      std::vector<std::string> extra;
      if (!checkpoint.empty()) extra.push_back("paths.checkpoint=" + fs::absolute(checkpoint).string());
      if (!lm_path.empty()) extra.push_back("paths.lm=" + fs::absolute(lm_path).string());
      const RunConfig config = common.load(extra);
      fs::path m = manifest;
      if (m.empty()) m = config.paths.test.empty() ? config.paths.valid : config.paths.test;
      const fs::path out = common.out_or("decode");
      const auto hyps = run_decode(config, require_path(m, "manifest (--manifest, paths.test or paths.valid)"), out,
                                   {greedy});
      std::cout << "wrote " << hyps.size() << " hypotheses to " << (out / "hypotheses.tsv").string() << '\n';
    } else if (evaluate_cmd->parsed()) {
      if (all_variants) {
        const RunConfig config = common.load();
        const fs::path out = common.out_or("variants");
        const auto rows = run_all_variants(config, out, &std::cerr);
        std::cout << kVariantsHeader << '\n';
        for (const auto& row : rows) std::cout << format_variant_row(row) << '\n';
        std::cout << "wrote " << (out / "table2.csv").string() << '\n';
      } else {
        if (ref.empty() || hyp.empty()) throw ConfigError("evaluate needs --ref and --hyp, or --all-variants");
        const Summary s = score_transcripts(read_transcripts(require_path(ref, "--ref")),
                                            read_transcripts(require_path(hyp, "--hyp")));
        std::cout << summary_line(s) << '\n';
        if (!common.out.empty()) {
          fs::create_directories(common.out);
          std::ofstream os(fs::path(common.out) / "summary.csv");
          os << "utterances,wer,cer\n" << s.utterances << ',' << s.wer << ',' << s.cer << '\n';
        }
      }
    } else if (gradcheck->parsed()) {
      bool ok = true;
      std::ofstream csv;
      if (!common.out.empty()) {
        fs::create_directories(common.out);
        csv.open(fs::path(common.out) / "gradcheck.csv");
        csv << "suite,max_error,tolerance,passed\n";
      }
      for (const GradSuiteResult& r : run_gradient_suites()) {
        ok = ok && r.passed;
        std::printf("%-4s %-40s max rel err %.3e (tol %.0e)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.max_error, r.tolerance);
        if (csv) csv << r.name << ',' << r.max_error << ',' << r.tolerance << ',' << (r.passed ? 1 : 0) << '\n';
      }
      if (!ok) {
        std::cerr << "error: gradient check failed\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
