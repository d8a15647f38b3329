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

/// @file dp_defense.hpp
/// Noised detection: Gaussian noise of scale sigma * sensitivity is added to
/// the detection score, seeded by a keyed PRF of the queried text, so
/// repeating a query returns the same value and averaging gains nothing.

#include <functional>
#include <span>
#include <vector>

#include "wmlab/attacks.hpp"
#include "wmlab/core.hpp"
#include "wmlab/keyring.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab {

enum class DpMode { z_score, log_p_value };

struct DpParams {
  double sigma = 4.0;
  WatermarkKey noise_key;
  DpMode mode = DpMode::z_score;
  /// Tokens whose green membership one edit can flip, minus one: h for KGW,
  /// 0 for Unigram.
  int h = 1;
  double gamma = 0.5;
  /// Fixed sensitivity of the natural-log p-value (log_p_value mode).
  double log_p_sensitivity = 1.0;
  /// Scales the sensitivity to cover multi-token substitutions. No
  /// recommended value; 1 means single replacements.
  double multi_edit_multiplier = 1.0;

  explicit DpParams(WatermarkKey key) : noise_key(std::move(key)) {}
  /// Mode, h and gamma taken from a scheme configuration.
  static DpParams for_scheme(const SchemeConfig& config, WatermarkKey key, double sigma);
  void validate() const;
};

/// (h + 1) / sqrt(gamma (1 - gamma) l). Throws ParameterError for l = 0 or
/// gamma outside (0, 1).
double sensitivity(std::size_t l, int h, double gamma);

struct NoisedReport {
  DetectionReport exact;
  /// z + noise, or exp(log p + noise) clamped to (0, 1].
  double noised_value = 0.0;
  double sensitivity = 0.0;
  /// Standard normal draw behind the noise.
  double noise_draw = 0.0;
  /// verdict_for(kind, noised_value, exact.threshold).
  bool verdict = false;
};

using Detector = std::function<DetectionReport(std::span<const TokenId>)>;

/// Standard normal deterministic in (noise_key, x): Box-Muller on the first
/// two uniforms of prg(prf(noise_key, encode(x))).
double prf_normal(const WatermarkKey& noise_key, std::span<const TokenId> x);

NoisedReport dp_detect(std::span<const TokenId> x, const Detector& detector,
                       const DpParams& params);

/// 99th percentile of |log p(x') - log p(x)| over random single-token
/// replacements x' of the given texts (`edits_per_text` each).
double calibrate_log_p_sensitivity(const Detector& detector, std::span<const TokenSequence> texts,
                                   std::size_t vocab_size, std::size_t edits_per_text, Rng& rng);

/// Oracle a DP-hardened service exposes: the noised score.
DetectionOracle noised_oracle(Detector detector, DpParams params);

struct DpEvalSetup {
  /// Attacker's local model (independent of the watermark keys).
  const LanguageModel* local = nullptr;
  std::vector<TokenSequence> prompts;
  std::size_t length = 200;
  ApiSpoofParams spoof;
  /// Accuracy evaluation set.
  std::vector<TokenSequence> watermarked;
  std::vector<TokenSequence> unwatermarked;
};

struct DpEvalSummary {
  double sigma = 0.0;
  std::size_t trials = 0;
  /// Spoofed texts accepted as watermarked by the noised detector.
  double spoof_asr = 0.0;
  double accuracy = 0.0;
  double detection_queries_per_token = 0.0;
};

DpEvalSummary dp_defense_eval(const DpEvalSetup& setup, const Detector& detector,
                              const DpParams& params);

}  // namespace wmlab
