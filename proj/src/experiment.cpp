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

#include "wmlab/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "json_io.hpp"
#include "wmlab/attacks.hpp"

namespace wmlab {

using detail::json;

namespace {

struct KindName {
  ExperimentKind kind;
  const char* name;
};

constexpr std::array<KindName, 8> kKindNames{{
    {ExperimentKind::detect_power, "detect-power"},
    {ExperimentKind::null_fpr, "null-fpr"},
    {ExperimentKind::piggyback_insert, "piggyback-insert"},
    {ExperimentKind::piggyback_edit, "piggyback-edit"},
    {ExperimentKind::multikey_removal, "multikey-removal"},
    {ExperimentKind::api_removal, "api-removal"},
    {ExperimentKind::api_spoof, "api-spoof"},
    {ExperimentKind::steal, "steal"},
}};

// Fixed seed streams that do not collide with per-trial seeds (< 2^40).
constexpr std::uint64_t kLexiconStream = 1ull << 50;
constexpr std::uint64_t kCalibrationStream = 1ull << 51;

}  // namespace

std::string_view to_string(ExperimentKind k) {
  for (const auto& e : kKindNames) {
    if (e.kind == k) return e.name;
  }
  return "?";
}

ExperimentKind parse_experiment(std::string_view name) {
  std::string norm(name);
  std::replace(norm.begin(), norm.end(), '_', '-');
  for (const auto& e : kKindNames) {
    if (norm == e.name) return e.kind;
  }
  throw ParameterError("unknown experiment '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  scheme.validate();
  if (keys < 1) throw ParameterError("keys must be >= 1");
  if (length < 2) throw ParameterError("length must be >= 2");
  if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw ParameterError("target_fpr in (0,1)");
  if (top_l < 1 || top_l > 5) throw ParameterError("top_l must be in [1, 5]");
  if (spoof_top_l < 1) throw ParameterError("spoof_top_l must be >= 1");
  if (max_edits < 1) throw ParameterError("max_edits must be >= 1");
  if (lexicon_size < 1 || lexicon_size > world.vocab_size) {
    throw ParameterError("lexicon_size out of range");
  }
  if (kind == ExperimentKind::steal && scheme.scheme != Scheme::unigram) {
    throw ParameterError("the stealing experiment targets the unigram scheme");
  }
  if (kind == ExperimentKind::piggyback_insert && scheme.kind() != ScoreKind::z_score &&
      insert_count == 0) {
    throw ParameterError("insertion budget is defined for z-score schemes; set insert_count");
  }
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = std::string(to_string(c.kind));
  j["scheme"] = detail::to_json(c.scheme);
  j["keys"] = c.keys;
  j["key_label"] = c.key_label;
  j["trials"] = c.trials;
  j["length"] = c.length;
  j["seed"] = c.seed;
  j["world"] = {{"vocab_size", c.world.vocab_size},
                {"order", c.world.order},
                {"alpha", c.world.alpha},
                {"teacher_concentration", c.world.teacher_concentration},
                {"documents", c.world.documents},
                {"document_length", c.world.document_length},
                {"prompt_length", c.world.prompt_length},
                {"seed", c.world.seed}};
  j["calibration_samples"] = c.calibration_samples;
  j["target_fpr"] = c.target_fpr;
  j["insert_count"] = c.insert_count;
  j["lexicon_size"] = c.lexicon_size;
  j["max_edits"] = c.max_edits;
  j["substitution_rules"] = c.substitution_rules;
  j["n_queries"] = c.n_queries;
  j["top_l"] = c.top_l;
  j["spoof_top_l"] = c.spoof_top_l;
  j["removal_beta"] = c.removal_beta;
  j["steal_tokens"] = c.steal_tokens;
  j["record_timing"] = c.record_timing;
  return j.dump(2);
}

ExperimentConfig experiment_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("experiment config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("experiment config must be a JSON object");
  ExperimentConfig c;
  std::string kind = std::string(to_string(c.kind));
  detail::read_opt(j, "experiment", kind);
  c.kind = parse_experiment(kind);
  if (j.contains("scheme")) {
    if (j["scheme"].is_string()) {
      c.scheme.scheme = parse_scheme(j["scheme"].get<std::string>());
    } else {
      c.scheme = detail::scheme_config_from_json(j["scheme"]);
    }
  }
  detail::read_opt(j, "keys", c.keys);
  detail::read_opt(j, "key_label", c.key_label);
  detail::read_opt(j, "trials", c.trials);
  detail::read_opt(j, "length", c.length);
  detail::read_opt(j, "seed", c.seed);
  if (j.contains("world")) {
    const json& w = j["world"];
    detail::read_opt(w, "vocab_size", c.world.vocab_size);
    detail::read_opt(w, "order", c.world.order);
    detail::read_opt(w, "alpha", c.world.alpha);
    detail::read_opt(w, "teacher_concentration", c.world.teacher_concentration);
    detail::read_opt(w, "documents", c.world.documents);
    detail::read_opt(w, "document_length", c.world.document_length);
    detail::read_opt(w, "prompt_length", c.world.prompt_length);
    detail::read_opt(w, "seed", c.world.seed);
  }
  detail::read_opt(j, "calibration_samples", c.calibration_samples);
  detail::read_opt(j, "target_fpr", c.target_fpr);
  detail::read_opt(j, "insert_count", c.insert_count);
  detail::read_opt(j, "lexicon_size", c.lexicon_size);
  detail::read_opt(j, "max_edits", c.max_edits);
  detail::read_opt(j, "substitution_rules", c.substitution_rules);
  detail::read_opt(j, "n_queries", c.n_queries);
  detail::read_opt(j, "top_l", c.top_l);
  detail::read_opt(j, "spoof_top_l", c.spoof_top_l);
  detail::read_opt(j, "removal_beta", c.removal_beta);
  detail::read_opt(j, "steal_tokens", c.steal_tokens);
  detail::read_opt(j, "record_timing", c.record_timing);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

class Runner {
 public:
  explicit Runner(const ExperimentConfig& c) : c_(c) {
    if (c_.world == ToyWorldConfig{}) {
      world_ = &default_toy_world();
    } else {
      owned_world_ = build_toy_world(c_.world);
      world_ = &owned_world_;
    }
    V_ = world_->vocab().size();
    if (c_.kind != ExperimentKind::steal) {
      keys_ = std::make_shared<const KeySet>(KeySet::derive(c_.scheme, c_.key_label, c_.keys, V_));
      set_thresholds();
    }
  }

  double threshold() const {
    return table_ ? table_->per_key_threshold : c_.scheme.threshold();
  }

  ReportRow trial(std::size_t t) const {
    Rng rng(derive_seed(c_.seed, t));
    ReportRow row;
    row.trial = t;
    const TokenSequence prompt = world_->prompt(rng);
    TokenSequence text;
    switch (c_.kind) {
      case ExperimentKind::detect_power: {
        text = embed_with_keyset(gen(), prompt, *keys_, c_.length, rng).first;
        after(row, text);
        row.success = row.verdict_after;
        break;
      }
      case ExperimentKind::null_fpr: {
        text = generate(gen(), prompt, c_.length, rng);
        after(row, text);
        row.success = row.verdict_after;
        break;
      }
      case ExperimentKind::piggyback_insert: {
        const TokenSequence x = embed_with_keyset(gen(), prompt, *keys_, c_.length, rng).first;
        const DetectionReport b = detect(x);
        before(row, b);
        const std::size_t s = c_.insert_count > 0
                                  ? c_.insert_count
                                  : max_insertable(b.value, b.length, threshold());
        const Lexicon lex = lexicon();
        text = piggyback_insert(x, lex, s, rng);
        after(row, text);
        row.flagged_fraction = lex.flagged_fraction(text);
        row.success = row.verdict_after;
        break;
      }
      case ExperimentKind::piggyback_edit: {
        const TokenSequence x = embed_with_keyset(gen(), prompt, *keys_, c_.length, rng).first;
        before(row, detect(x));
        Rng table_rng(derive_seed(c_.seed, kLexiconStream + 1));
        const auto table = SubstitutionTable::random(V_, c_.substitution_rules, table_rng);
        text = piggyback_edit(x, table, c_.max_edits).text;
        after(row, text);
        row.success = row.verdict_after;
        break;
      }
      case ExperimentKind::multikey_removal: {
        MultikeyRemovalParams p;
        p.n_queries = c_.n_queries > 0 ? c_.n_queries : c_.keys;
        const AttackOutcome o = multikey_removal(gen(), prompt, *keys_, p, c_.length, rng);
        text = o.text;
        row.queries_generation = o.queries_generation;
        after(row, text);
        row.success = !row.verdict_after;
        break;
      }
      case ExperimentKind::api_removal: {
        const std::size_t k = keys_->size() == 1 ? 0 : rng.below(keys_->size());
        GenerationApi api(world_->generator, keys_->watermark_ptr(k));
        DetectionOracle oracle = DetectionOracle::exact(keys_);
        ApiRemovalParams p;
        p.L = c_.top_l;
        p.beta = c_.removal_beta;
        if (c_.scheme.kind() == ScoreKind::z_score) p.gamma = c_.scheme.gamma();
        const AttackOutcome o = api_removal(api, prompt, oracle, p, c_.length, rng);
        text = o.text;
        row.queries_generation = o.queries_generation;
        row.queries_detection = o.queries_detection;
        after(row, text);
        row.success = !row.verdict_after;
        break;
      }
      case ExperimentKind::api_spoof: {
        DetectionOracle oracle = DetectionOracle::exact(keys_);
        ApiSpoofParams p;
        p.L = c_.spoof_top_l;
        const AttackOutcome o = api_spoof(*world_->evaluator, prompt, oracle, p, c_.length);
        text = o.text;
        row.queries_generation = o.queries_generation;
        row.queries_detection = o.queries_detection;
        after(row, text);
        row.success = row.verdict_after;
        break;
      }
      case ExperimentKind::steal: {
        const KeySet keys = KeySet::derive(c_.scheme, c_.key_label + "-" + std::to_string(t),
                                           c_.keys, V_);
        std::vector<ObservedSample> samples;
        std::size_t observed = 0;
        while (observed < c_.steal_tokens) {
          TokenSequence p = world_->prompt(rng);
          TokenSequence r = embed_with_keyset(gen(), p, keys, c_.length, rng).first;
          observed += r.size();
          samples.push_back({std::move(p), std::move(r)});
        }
        const StealResult st = steal_greenlist(samples, *world_->generator, c_.scheme.gamma());
        row.score_after = steal_precision(st, keys);
        row.verdict_after = row.score_after > c_.scheme.gamma() + 0.1;
        row.success = row.verdict_after;
        row.tokens = st.observed_tokens;
        row.queries_generation = samples.size();
        return row;
      }
    }
    row.tokens = text.size();
    row.quality = pseudo_perplexity(*world_->evaluator, text, prompt);
    return row;
  }

 private:
  const LanguageModel& gen() const { return *world_->generator; }

  DetectionReport detect(std::span<const TokenId> x) const {
    return detect_multi(x, *keys_, table_ ? &*table_ : nullptr);
  }
  void before(ReportRow& row, const DetectionReport& r) const {
    row.score_before = r.value;
    row.verdict_before = r.verdict;
  }
  void after(ReportRow& row, std::span<const TokenId> x) const {
    const DetectionReport r = detect(x);
    row.score_after = r.value;
    row.verdict_after = r.verdict;
  }

  Lexicon lexicon() const {
    Rng rng(derive_seed(c_.seed, kLexiconStream));
    return Lexicon::random(V_, c_.lexicon_size, rng, "flagged");
  }

  void set_thresholds() {
    if (c_.calibration_samples > 0) {
      const NullSampler sampler = [this](std::size_t i) {
        Rng rng(derive_seed(c_.seed, kCalibrationStream + i));
        const TokenSequence p = world_->prompt(rng);
        return generate(gen(), p, c_.length, rng);
      };
      table_ = calibrate_thresholds(*keys_, sampler, c_.target_fpr, c_.calibration_samples);
    } else if (c_.keys > 1) {
      ThresholdTable t;
      t.kind = keys_->kind();
      t.keys = c_.keys;
      t.target_fpr = c_.target_fpr;
      t.analytic_threshold = t.kind == ScoreKind::z_score
                                 ? union_bound_z(c_.target_fpr, c_.keys)
                                 : c_.target_fpr / static_cast<double>(c_.keys);
      t.per_key_threshold = t.analytic_threshold;
      t.warnings.push_back("union bound (no calibration samples)");
      table_ = t;
    }
  }

  const ExperimentConfig& c_;
  const ToyWorld* world_ = nullptr;
  ToyWorld owned_world_;
  std::size_t V_ = 0;
  std::shared_ptr<const KeySet> keys_;
  std::optional<ThresholdTable> table_;
};

}  // namespace

Report run_experiment(const ExperimentConfig& config) {
  config.validate();
  Report report;
  report.experiment = std::string(to_string(config.kind));
  const Runner runner(config);
  report.threshold = config.kind == ExperimentKind::steal ? config.scheme.gamma() + 0.1
                                                           : runner.threshold();
  for (std::size_t t = 0; t < config.trials; ++t) {
    const auto start = std::chrono::steady_clock::now();
    try {
      ReportRow row = runner.trial(t);
      if (config.record_timing) {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
      }
      report.rows.push_back(row);
    } catch (const std::exception& e) {
      report.partial = true;
      report.error = "trial " + std::to_string(t) + ": " + e.what();
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Summaries

Quartiles quartiles(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }),
               values.end());
  Quartiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  auto at = [&](double frac) {
    const double pos = frac * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  return q;
}

Summary summarize(const Report& report) {
  if (report.rows.empty()) throw ParameterError("cannot summarize an empty report");
  Summary s;
  s.trials = report.rows.size();
  std::vector<double> before, after;
  double quality = 0.0;
  std::size_t quality_n = 0, tokens = 0, success = 0, detected = 0, qg = 0, qd = 0;
  for (const auto& r : report.rows) {
    before.push_back(r.score_before);
    after.push_back(r.score_after);
    success += r.success ? 1 : 0;
    detected += r.verdict_after ? 1 : 0;
    if (!std::isnan(r.quality)) {
      quality += r.quality;
      ++quality_n;
    }
    tokens += r.tokens;
    qg += r.queries_generation;
    qd += r.queries_detection;
  }
  const auto n = static_cast<double>(s.trials);
  s.asr = static_cast<double>(success) / n;
  s.detection_rate = static_cast<double>(detected) / n;
  s.before = quartiles(std::move(before));
  s.after = quartiles(std::move(after));
  if (quality_n > 0) s.mean_quality = quality / static_cast<double>(quality_n);
  if (tokens > 0) {
    s.generation_queries_per_token = static_cast<double>(qg) / static_cast<double>(tokens);
    s.detection_queries_per_token = static_cast<double>(qd) / static_cast<double>(tokens);
  }
  return s;
}

namespace {

constexpr const char* kCsvHeader =
    "trial,score_before,verdict_before,score_after,verdict_after,success,queries_generation,"
    "queries_detection,tokens,quality,flagged_fraction,wall_ms";

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("bad number '" + s + "'");
  }
  if (used != s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("bad count '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

bool parse_bool(const std::string& s) {
  if (s == "1") return true;
  if (s == "0") return false;
  throw FormatError("bad flag '" + s + "'");
}

// Splits one RFC 4180 record (fields never contain quotes in this schema,
// but quoted fields are accepted).
std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

void write_report_csv(std::ostream& out, const Report& report) {
  out << kCsvHeader << "\r\n";
  for (const auto& r : report.rows) {
    out << r.trial << ',' << fmt_double(r.score_before) << ',' << (r.verdict_before ? 1 : 0) << ','
        << fmt_double(r.score_after) << ',' << (r.verdict_after ? 1 : 0) << ','
        << (r.success ? 1 : 0) << ',' << r.queries_generation << ',' << r.queries_detection << ','
        << r.tokens << ',' << fmt_double(r.quality) << ',' << fmt_double(r.flagged_fraction) << ','
        << fmt_double(r.wall_ms) << "\r\n";
  }
}

Report read_report_csv(std::istream& in) {
  Report report;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty report");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw FormatError("report header does not match schema version 1");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_record(line);
    if (f.size() != 12) throw FormatError("report row has " + std::to_string(f.size()) + " fields");
    ReportRow r;
    r.trial = parse_size(f[0]);
    r.score_before = parse_double(f[1]);
    r.verdict_before = parse_bool(f[2]);
    r.score_after = parse_double(f[3]);
    r.verdict_after = parse_bool(f[4]);
    r.success = parse_bool(f[5]);
    r.queries_generation = parse_size(f[6]);
    r.queries_detection = parse_size(f[7]);
    r.tokens = parse_size(f[8]);
    r.quality = parse_double(f[9]);
    r.flagged_fraction = parse_double(f[10]);
    r.wall_ms = parse_double(f[11]);
    report.rows.push_back(r);
  }
  return report;
}

namespace {

json quartile_json(const Quartiles& q) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"q1", num(q.q1)}, {"median", num(q.median)}, {"q3", num(q.q3)}};
}

}  // namespace

std::string summary_to_json(const Report& report, const Summary* summary,
                            const ExperimentConfig* config) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["experiment"] = report.experiment;
  j["threshold"] = report.threshold;
  j["partial"] = report.partial;
  if (!report.error.empty()) j["error"] = report.error;
  if (config != nullptr) j["config"] = json::parse(experiment_config_to_json(*config));
  if (summary != nullptr) {
    json s;
    s["trials"] = summary->trials;
    s["asr"] = summary->asr;
    s["detection_rate"] = summary->detection_rate;
    s["score_before"] = quartile_json(summary->before);
    s["score_after"] = quartile_json(summary->after);
    s["mean_quality"] = std::isnan(summary->mean_quality) ? json(nullptr) : json(summary->mean_quality);
    s["generation_queries_per_token"] = summary->generation_queries_per_token;
    s["detection_queries_per_token"] = summary->detection_queries_per_token;
    j["summary"] = std::move(s);
  } else {
    j["summary"] = nullptr;
  }
  return j.dump(2);
}

std::string summary_table(const Report& report, const Summary& s) {
  std::ostringstream out;
  char buf[160];
  auto line = [&](const char* label, double v) {
    std::snprintf(buf, sizeof buf, "%-32s %12.4f\n", label, v);
    out << buf;
  };
  out << "experiment: " << report.experiment << (report.partial ? " (partial)" : "") << '\n';
  std::snprintf(buf, sizeof buf, "%-32s %12zu\n", "trials", s.trials);
  out << buf;
  line("attack success / positive rate", s.asr);
  line("detected after", s.detection_rate);
  line("threshold", report.threshold);
  line("score before (median)", s.before.median);
  line("score after (q1)", s.after.q1);
  line("score after (median)", s.after.median);
  line("score after (q3)", s.after.q3);
  line("pseudo-perplexity (mean)", s.mean_quality);
  line("generation queries / token", s.generation_queries_per_token);
  line("detection queries / token", s.detection_queries_per_token);
  return out.str();
}

}  // namespace wmlab
