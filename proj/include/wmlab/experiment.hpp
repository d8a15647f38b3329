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

#pragma once

/// @file experiment.hpp
/// Trial-based experiment runner behind the CLI. Every experiment is fully
/// determined by its config: trial t uses the rng seed
/// derive_seed(config.seed, t), so reruns produce byte-identical CSV.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "wmlab/keyring.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab {

enum class ExperimentKind {
  detect_power,      // watermarked text; success = detected
  null_fpr,          // unwatermarked text; success = (false) detection
  piggyback_insert,  // success = spoofed text still detected
  piggyback_edit,
  multikey_removal,  // success = no longer detected
  api_removal,
  api_spoof,         // success = detected
  steal,             // score = green-list precision; success = precision > gamma + 0.1
};

std::string_view to_string(ExperimentKind k);
/// Accepts the names above with '-' for '_' (e.g. "api-removal"); throws
/// ParameterError otherwise.
ExperimentKind parse_experiment(std::string_view name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::detect_power;
  SchemeConfig scheme;
  /// Key set size n; keys are WatermarkKey::derive(key_label, i).
  std::size_t keys = 1;
  std::string key_label = "wmlab-experiment";
  std::size_t trials = 100;
  std::size_t length = 200;
  std::uint64_t seed = 1;
  ToyWorldConfig world;

  /// Per-key threshold for multi-key detection: calibrated on this many
  /// null texts when > 0, else the union bound (n > 1) or the scheme
  /// threshold (n = 1).
  std::size_t calibration_samples = 0;
  double target_fpr = 1e-3;

  // Attack knobs.
  std::size_t insert_count = 0;  // 0 = max_insertable at the scheme threshold
  std::size_t lexicon_size = 200;
  std::size_t max_edits = 3;
  std::size_t substitution_rules = 512;
  std::size_t n_queries = 0;  // multikey: 0 = keys
  std::size_t top_l = 5;      // api-removal (api-spoof uses spoof_top_l)
  std::size_t spoof_top_l = 3;
  double removal_beta = 8.0;
  std::size_t steal_tokens = 100000;
  /// Record per-trial wall-clock (makes CSV non-deterministic).
  bool record_timing = false;

  void validate() const;
};

std::string experiment_config_to_json(const ExperimentConfig& c);
/// Missing fields keep their defaults. Throws FormatError / ParameterError.
ExperimentConfig experiment_config_from_json(std::string_view text);

struct ReportRow {
  std::size_t trial = 0;
  double score_before = std::numeric_limits<double>::quiet_NaN();
  bool verdict_before = false;
  double score_after = std::numeric_limits<double>::quiet_NaN();
  bool verdict_after = false;
  bool success = false;
  std::size_t queries_generation = 0;
  std::size_t queries_detection = 0;
  std::size_t tokens = 0;
  double quality = std::numeric_limits<double>::quiet_NaN();
  double flagged_fraction = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr int kReportSchemaVersion = 1;

struct Report {
  std::string experiment;
  double threshold = 0.0;
  std::vector<ReportRow> rows;
  /// A trial threw; rows hold the trials completed before it.
  bool partial = false;
  std::string error;
};

Report run_experiment(const ExperimentConfig& config);

struct Quartiles {
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
};

/// Linear-interpolation quartiles (the inclusive spreadsheet definition);
/// NaN entries ignored.
Quartiles quartiles(std::vector<double> values);

struct Summary {
  std::size_t trials = 0;
  /// Fraction of successful trials (attacker-favourable verdicts).
  double asr = 0.0;
  /// Fraction of trials flagged as watermarked after the experiment.
  double detection_rate = 0.0;
  Quartiles before;
  Quartiles after;
  double mean_quality = std::numeric_limits<double>::quiet_NaN();
  double generation_queries_per_token = 0.0;
  double detection_queries_per_token = 0.0;
};

/// Throws ParameterError for a report without rows.
Summary summarize(const Report& report);

/// RFC 4180 (CRLF, header row). Doubles use 17 significant digits; NaN is an
/// empty field.
void write_report_csv(std::ostream& out, const Report& report);
/// Throws FormatError when the header does not match this schema.
Report read_report_csv(std::istream& in);

std::string summary_to_json(const Report& report, const Summary* summary,
                            const ExperimentConfig* config);
/// Plain-text table for standard output.
std::string summary_table(const Report& report, const Summary& summary);

}  // namespace wmlab
