// Copyright 2026 The wmlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// wmlab command-line harness. Exit codes: 0 success, 1 runtime failure,
// 2 configuration error.

#include <openssl/rand.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wmlab/attacks.hpp"
#include "wmlab/dp_defense.hpp"
#include "wmlab/experiment.hpp"
#include "wmlab/keyring.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/oracles.hpp"
#include "wmlab/service.hpp"

namespace {

using namespace wmlab;
using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// A config problem discovered after parsing (bad combination of flags).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << data;
}

// Model selection shared by several subcommands: a trained Markov file, or
// the toy world's generator.
struct ModelOpt {
  std::string path;
  std::shared_ptr<const LanguageModel> load() const {
    if (!path.empty()) return std::make_shared<MarkovModel>(MarkovModel::load(path));
    return default_toy_world().generator;
  }
};

void add_model_opt(CLI::App* app, ModelOpt& m) {
  app->add_option("--model", m.path, "Markov model file (default: toy world generator)");
}

TokenSequence read_tokens(const Vocabulary& vocab, const std::string& text,
                          const std::string& file) {
  if (!text.empty() && !file.empty()) throw ConfigError("use either --text or --input");
  if (!file.empty()) return vocab.encode(read_file(file));
  return vocab.encode(text);
}

// ---------------------------------------------------------------------------
// Experiment options shared by `attack` and `run`.

struct ExperimentOpts {
  std::string config_path;
  std::string scheme;
  std::optional<std::size_t> keys, trials, length, calibration, insert_count, n_queries, top_l,
      steal_tokens, max_edits;
  std::optional<std::uint64_t> seed;
  std::optional<double> target_fpr, delta, gamma;
  bool timing = false;
  std::string out_csv, out_json;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "experiment config (JSON)");
    app->add_option("--scheme", scheme, "kgw | unigram | exp");
    app->add_option("--keys", keys, "key set size n");
    app->add_option("--trials", trials);
    app->add_option("--length", length, "response tokens");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--calibration-samples", calibration);
    app->add_option("--target-fpr", target_fpr);
    app->add_option("--delta", delta, "green-list bias");
    app->add_option("--gamma", gamma, "green-list fraction");
    app->add_option("--insert-count", insert_count, "piggyback insertions (0 = s_max)");
    app->add_option("--max-edits", max_edits);
    app->add_option("--queries", n_queries, "multikey observations per token");
    app->add_option("--top-l", top_l);
    app->add_option("--steal-tokens", steal_tokens);
    app->add_flag("--timing", timing, "record wall-clock per trial");
    app->add_option("--out", out_csv, "CSV report path");
    app->add_option("--summary", out_json, "JSON summary path");
  }

  ExperimentConfig build(ExperimentKind kind) const {
    ExperimentConfig c;
    if (!config_path.empty()) c = experiment_config_from_json(read_file(config_path));
    c.kind = kind;
    if (!scheme.empty()) c.scheme.scheme = parse_scheme(scheme);
    if (keys) c.keys = *keys;
    if (trials) c.trials = *trials;
    if (length) c.length = *length;
    if (seed) c.seed = *seed;
    if (calibration) c.calibration_samples = *calibration;
    if (target_fpr) c.target_fpr = *target_fpr;
    if (delta) c.scheme.kgw.delta = c.scheme.unigram.delta = *delta;
    if (gamma) c.scheme.kgw.gamma = c.scheme.unigram.gamma = *gamma;
    if (insert_count) c.insert_count = *insert_count;
    if (max_edits) c.max_edits = *max_edits;
    if (n_queries) c.n_queries = *n_queries;
    if (top_l) c.top_l = c.spoof_top_l = *top_l;
    if (steal_tokens) c.steal_tokens = *steal_tokens;
    if (timing) c.record_timing = true;
    c.validate();
    return c;
  }
};

int run_and_report(const ExperimentConfig& c, const ExperimentOpts& o) {
  const Report report = run_experiment(c);
  if (!o.out_csv.empty()) {
    std::ofstream out(o.out_csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + o.out_csv);
    write_report_csv(out, report);
  } else if (o.out_json.empty()) {
    write_report_csv(std::cout, report);
  }
  std::optional<Summary> summary;
  if (!report.rows.empty()) summary = summarize(report);
  if (!o.out_json.empty()) {
    write_file(o.out_json, summary_to_json(report, summary ? &*summary : nullptr, &c) + "\n");
  }
  if (summary) std::cerr << summary_table(report, *summary);
  if (report.partial) {
    std::cerr << "partial report: " << report.error << '\n';
    return kExitRuntime;
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<BoundCheckResult> verify_theorems(std::size_t trials, std::size_t thm1_trials,
                                              std::uint64_t seed) {
  std::vector<BoundCheckResult> rows;
  Rng rng(seed);
  for (const std::size_t n : {3, 7, 13}) {
    for (const std::size_t c : {1, 3}) {
      const double cf = thm2_prob(n, 0.5, c);
      const double mc = thm2_monte_carlo(n, 0.5, c, trials, rng);
      rows.push_back(make_bound_check("keyset_majority n=" + std::to_string(n) +
                                          " c=" + std::to_string(c),
                                      cf, mc, trials, 0.02));
    }
  }
  for (const std::size_t n : {3, 7, 13}) {
    for (const double p : {0.3, 0.5, 0.7}) {
      std::size_t ok = 0;
      for (std::size_t t = 0; t < trials; ++t) {
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i) k += rng.uniform() < p ? 1 : 0;
        ok += k > n / 2 ? 1 : 0;
      }
      char name[64];
      std::snprintf(name, sizeof name, "majority_vote n=%zu p=%.1f", n, p);
      rows.push_back(make_bound_check(name, thm3_prob(n, p),
                                      static_cast<double>(ok) / static_cast<double>(trials),
                                      trials, 0.02));
    }
  }
  for (const std::size_t s : {20, 50, 100}) {
    Thm1ValidationConfig cfg;
    cfg.trials = thm1_trials;
    cfg.fixed_s = s;
    cfg.seed = seed;
    const Thm1Validation v = thm1_empirical_validation(default_toy_world(), cfg);
    rows.push_back(make_bound_check("insertion_expected_z s=" + std::to_string(s),
                                    v.mean_z_predicted, v.mean_z_after, thm1_trials, 0.15));
  }
  return rows;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"wmlab: watermark attack and defense laboratory"};
  app.require_subcommand(1);

  // train-lm
  auto* train = app.add_subcommand("train-lm", "train a Markov model on a text corpus");
  std::string corpus, model_out;
  int order = 2;
  double alpha = 0.1;
  std::size_t max_types = kDefaultMaxTypes;
  bool toy = false;
  train->add_option("--corpus", corpus, "UTF-8 text; documents separated by blank lines");
  train->add_option("--order", order);
  train->add_option("--alpha", alpha, "additive smoothing");
  train->add_option("--max-types", max_types);
  train->add_flag("--toy", toy, "save the toy world generator instead");
  train->add_option("--out", model_out)->required();

  // keygen
  auto* keygen = app.add_subcommand("keygen", "create a key ring");
  std::string kg_scheme = "kgw", kg_label, kg_out;
  std::size_t kg_n = 1;
  ModelOpt kg_model;
  keygen->add_option("--scheme", kg_scheme);
  keygen->add_option("--keys", kg_n);
  keygen->add_option("--label", kg_label, "derive keys from a label (default: random)");
  keygen->add_option("--out", kg_out)->required();
  add_model_opt(keygen, kg_model);

  // generate
  auto* gen = app.add_subcommand("generate", "generate (optionally watermarked) text");
  ModelOpt gen_model;
  std::string gen_keyring, gen_prompt;
  std::size_t gen_len = 200;
  std::uint64_t gen_seed = 1;
  add_model_opt(gen, gen_model);
  gen->add_option("--keyring", gen_keyring, "watermark with this key ring");
  gen->add_option("--prompt", gen_prompt);
  gen->add_option("--length", gen_len);
  gen->add_option("--seed", gen_seed);

  // detect
  auto* det = app.add_subcommand("detect", "score text against a key ring");
  ModelOpt det_model;
  std::string det_keyring, det_text, det_input;
  std::optional<double> det_sigma;
  add_model_opt(det, det_model);
  det->add_option("--keyring", det_keyring)->required();
  det->add_option("--text", det_text);
  det->add_option("--input", det_input, "read text from a file");
  det->add_option("--dp-sigma", det_sigma, "noised detection (needs a noise key)");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "calibrate multi-key thresholds on null text");
  ModelOpt cal_model;
  std::string cal_keyring;
  std::size_t cal_samples = 10000, cal_len = 200;
  double cal_fpr = 1e-3;
  std::uint64_t cal_seed = 1;
  add_model_opt(cal, cal_model);
  cal->add_option("--keyring", cal_keyring, "updated in place")->required();
  cal->add_option("--samples", cal_samples);
  cal->add_option("--length", cal_len);
  cal->add_option("--target-fpr", cal_fpr);
  cal->add_option("--seed", cal_seed);

  // attack
  auto* attack = app.add_subcommand("attack", "run an attack experiment");
  attack->require_subcommand(1);
  struct AttackCmd {
    const char* name;
    ExperimentKind kind;
    const char* help;
  };
  const std::vector<AttackCmd> attack_cmds = {
      {"piggyback", ExperimentKind::piggyback_insert, "random-token insertion spoofing"},
      {"piggyback-edit", ExperimentKind::piggyback_edit, "toxic substitution spoofing"},
      {"multikey", ExperimentKind::multikey_removal, "majority-vote removal over a key set"},
      {"api-removal", ExperimentKind::api_removal, "detection-API guided removal"},
      {"api-spoof", ExperimentKind::api_spoof, "detection-API guided spoofing"},
      {"steal", ExperimentKind::steal, "green-list estimation from observations"},
  };
  ExperimentOpts attack_opts;
  std::vector<CLI::App*> attack_subs;
  for (const auto& a : attack_cmds) {
    auto* sub = attack->add_subcommand(a.name, a.help);
    attack_opts.attach(sub);
    attack_subs.push_back(sub);
  }

  // run (power / null experiments and config-driven runs)
  auto* runc = app.add_subcommand("run", "run any experiment named in the config or --experiment");
  ExperimentOpts run_opts;
  std::string run_kind;
  runc->add_option("--experiment", run_kind, "detect-power | null-fpr | ... (default: config)");
  run_opts.attach(runc);

  // defend-eval
  auto* dfe = app.add_subcommand("defend-eval", "sigma sweep of DP-noised detection");
  std::string dfe_scheme = "kgw", dfe_out;
  std::vector<double> sigmas = {0.0, 1.0, 2.0, 4.0, 8.0};
  std::size_t dfe_trials = 100, dfe_len = 200;
  std::uint64_t dfe_seed = 1;
  dfe->add_option("--scheme", dfe_scheme);
  dfe->add_option("--sigmas", sigmas)->delimiter(',');
  dfe->add_option("--trials", dfe_trials);
  dfe->add_option("--length", dfe_len);
  dfe->add_option("--seed", dfe_seed);
  dfe->add_option("--out", dfe_out, "CSV path (default: stdout)");

  // verify-theorems
  auto* vt = app.add_subcommand("verify-theorems", "closed forms against simulation");
  std::size_t vt_trials = 100000, vt_thm1 = 200;
  std::uint64_t vt_seed = 1;
  std::string vt_out;
  vt->add_option("--trials", vt_trials, "Monte-Carlo trials per check");
  vt->add_option("--insertion-trials", vt_thm1, "toy-model trials for the insertion law");
  vt->add_option("--seed", vt_seed);
  vt->add_option("--out", vt_out, "CSV path (default: stdout)");

  // serve
  auto* srv = app.add_subcommand("serve", "run the detection API (WMLAB_CONFIG overrides)");
  std::string srv_config = "wmlab-service.json";
  srv->add_option("--config", srv_config);

  // report
  auto* rep = app.add_subcommand("report", "summarize a CSV report");
  std::string rep_in, rep_json, rep_name = "report";
  rep->add_option("--input", rep_in)->required();
  rep->add_option("--json", rep_json, "write the JSON summary here");
  rep->add_option("--experiment", rep_name, "label stored in the summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (train->parsed()) {
    if (toy) {
      default_toy_world().generator->save(model_out);
      return 0;
    }
    if (corpus.empty()) throw ConfigError("train-lm needs --corpus or --toy");
    const std::string text = read_file(corpus);
    const Vocabulary vocab = Vocabulary::from_corpus(text, max_types);
    std::vector<TokenSequence> docs;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find("\n\n", start);
      if (end == std::string::npos) end = text.size();
      TokenSequence d = vocab.encode(std::string_view(text).substr(start, end - start));
      if (!d.empty()) docs.push_back(std::move(d));
      start = end + 2;
    }
    const MarkovModel m = train_markov(vocab, docs, order, alpha);
    m.save(model_out);
    std::cerr << "trained order-" << order << " model: " << vocab.size() << " types, "
              << m.context_count() << " contexts\n";
    return 0;
  }

  if (keygen->parsed()) {
    SchemeConfig cfg;
    cfg.scheme = parse_scheme(kg_scheme);
    const std::size_t V = kg_model.load()->vocab_size();
    std::vector<WatermarkKey> keys;
    auto random_key = [] {
      std::vector<std::uint8_t> b(32);
      if (RAND_bytes(b.data(), static_cast<int>(b.size())) != 1) {
        throw std::runtime_error("RAND_bytes failed");
      }
      return WatermarkKey(std::move(b));
    };
    for (std::size_t i = 0; i < kg_n; ++i) {
      keys.push_back(kg_label.empty() ? random_key() : WatermarkKey::derive(kg_label, i));
    }
    const WatermarkKey noise =
        kg_label.empty() ? random_key() : WatermarkKey::derive(kg_label + "-noise");
    save_keyring(kg_out, KeySet(cfg, std::move(keys), V), nullptr, &noise);
    return 0;
  }

  if (gen->parsed()) {
    const auto model = gen_model.load();
    Rng rng(gen_seed);
    const TokenSequence prompt = model->vocab().encode(gen_prompt);
    TokenSequence out;
    if (!gen_keyring.empty()) {
      const KeyringFile kr = load_keyring(gen_keyring);
      out = embed_with_keyset(*model, prompt, kr.keys, gen_len, rng).first;
    } else {
      out = generate(*model, prompt, gen_len, rng);
    }
    std::cout << model->vocab().decode(out) << '\n';
    return 0;
  }

  if (det->parsed()) {
    const auto model = det_model.load();
    const KeyringFile kr = load_keyring(det_keyring);
    const TokenSequence x = read_tokens(model->vocab(), det_text, det_input);
    const ThresholdTable* table = kr.thresholds ? &*kr.thresholds : nullptr;
    const KeySet& keys = kr.keys;
    json j;
    if (det_sigma) {
      if (!kr.noise_key) throw ConfigError("key ring has no noise key");
      const DpParams p = DpParams::for_scheme(keys.config(), *kr.noise_key, *det_sigma);
      const Detector d = [&](std::span<const TokenId> t) { return detect_multi(t, keys, table); };
      const NoisedReport r = dp_detect(x, d, p);
      j = {{"score", r.noised_value}, {"watermarked", r.verdict}};
    } else {
      const DetectionReport r = detect_multi(x, keys, table);
      j = {{"score", r.value}, {"watermarked", r.verdict}};
    }
    j["score_kind"] = std::string(to_string(keys.kind()));
    j["tokens"] = x.size();
    std::cout << j.dump(2) << '\n';
    return 0;
  }

  if (cal->parsed()) {
    const auto model = cal_model.load();
    const KeyringFile kr = load_keyring(cal_keyring);
    const ToyWorld* world = cal_model.path.empty() ? &default_toy_world() : nullptr;
    const NullSampler sampler = [&](std::size_t i) {
      Rng rng(derive_seed(cal_seed, i));
      const TokenSequence prompt = world ? world->prompt(rng) : TokenSequence{};
      return generate(*model, prompt, cal_len, rng);
    };
    const ThresholdTable t = calibrate_thresholds(kr.keys, sampler, cal_fpr, cal_samples);
    for (const auto& w : t.warnings) std::cerr << "warning: " << w << '\n';
    save_keyring(cal_keyring, kr.keys, &t, kr.noise_key ? &*kr.noise_key : nullptr);
    std::cout << "per-key threshold " << t.per_key_threshold << " (" << t.calibration_exceedances
              << " exceedances in " << t.calibration_samples << " samples)\n";
    return 0;
  }

  for (std::size_t i = 0; i < attack_subs.size(); ++i) {
    if (attack_subs[i]->parsed()) {
      return run_and_report(attack_opts.build(attack_cmds[i].kind), attack_opts);
    }
  }

  if (runc->parsed()) {
    ExperimentKind kind = ExperimentKind::detect_power;
    if (!run_kind.empty()) {
      kind = parse_experiment(run_kind);
    } else if (!run_opts.config_path.empty()) {
      kind = experiment_config_from_json(read_file(run_opts.config_path)).kind;
    }
    return run_and_report(run_opts.build(kind), run_opts);
  }

  if (dfe->parsed()) {
    SchemeConfig cfg;
    cfg.scheme = parse_scheme(dfe_scheme);
    const ToyWorld& w = default_toy_world();
    const auto keys = std::make_shared<const KeySet>(
        KeySet::derive(cfg, "wmlab-defend", 1, w.vocab().size()));
    const Detector detector = [keys](std::span<const TokenId> x) { return detect_multi(x, *keys); };
    DpEvalSetup setup;
    setup.local = w.evaluator.get();
    setup.length = dfe_len;
    for (std::size_t t = 0; t < dfe_trials; ++t) {
      Rng rng(derive_seed(dfe_seed, t));
      TokenSequence p = w.prompt(rng);
      setup.watermarked.push_back(keys->watermark(0).generate(*w.generator, p, dfe_len, rng));
      setup.unwatermarked.push_back(generate(*w.generator, p, dfe_len, rng));
      setup.prompts.push_back(std::move(p));
    }
    double log_p_sens = 1.0;
    if (cfg.kind() == ScoreKind::p_value) {
      Rng rng(derive_seed(dfe_seed, 1ull << 50));
      log_p_sens = calibrate_log_p_sensitivity(detector, setup.watermarked, w.vocab().size(), 4,
                                               rng);
    }
    std::ostringstream csv;
    csv << "sigma,trials,spoof_asr,accuracy,detection_queries_per_token\r\n";
    for (const double sigma : sigmas) {
      DpParams p = DpParams::for_scheme(cfg, WatermarkKey::derive("wmlab-defend-noise"), sigma);
      p.log_p_sensitivity = log_p_sens;
      const DpEvalSummary s = dp_defense_eval(setup, detector, p);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g,%.17g,%.17g\r\n", s.sigma, s.trials,
                    s.spoof_asr, s.accuracy, s.detection_queries_per_token);
      csv << buf;
      std::fprintf(stderr, "sigma %-5g spoof ASR %.3f accuracy %.3f\n", s.sigma, s.spoof_asr,
                   s.accuracy);
    }
    if (dfe_out.empty()) {
      std::cout << csv.str();
    } else {
      write_file(dfe_out, csv.str());
    }
    return 0;
  }

  if (vt->parsed()) {
    const auto rows = verify_theorems(vt_trials, vt_thm1, vt_seed);
    std::ostringstream csv;
    write_bound_checks_csv(csv, rows);
    if (vt_out.empty()) {
      std::cout << csv.str();
    } else {
      write_file(vt_out, csv.str());
    }
    bool ok = true;
    for (const auto& r : rows) ok = ok && r.pass;
    return ok ? 0 : kExitRuntime;
  }

  if (srv->parsed()) {
    const ServiceConfig config = load_service_config(resolve_config_path(srv_config));
    auto service = DetectionService::from_config(config);
    std::cerr << "listening on " << config.host << ':' << config.port << '\n';
    service->serve();
    return 0;
  }

  if (rep->parsed()) {
    std::ifstream in(rep_in, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + rep_in);
    Report report = read_report_csv(in);
    report.experiment = rep_name;
    const Summary s = summarize(report);
    std::cout << summary_table(report, s);
    if (!rep_json.empty()) write_file(rep_json, summary_to_json(report, &s, nullptr) + "\n");
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const wmlab::ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const wmlab::FormatError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const wmlab::InvalidKeyError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
