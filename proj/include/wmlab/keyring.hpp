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

/// @file keyring.hpp
/// Multi-key embedding: each response is watermarked under one key drawn
/// uniformly from a key set, detection reports the most watermark-like
/// score across keys, and per-key thresholds are calibrated so that the
/// max-over-keys false-positive rate stays below a target.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab {

/// n >= 1 pairwise-distinct secrets bound to one scheme configuration. For
/// Exp the xi matrices are expanded from the secrets.
class KeySet {
 public:
  KeySet(SchemeConfig config, std::vector<WatermarkKey> keys, std::size_t vocab_size);

  /// keys[i] = WatermarkKey::derive(label, i).
  static KeySet derive(const SchemeConfig& config, std::string_view label, std::size_t n,
                       std::size_t vocab_size);

  std::size_t size() const { return keys_.size(); }
  std::size_t vocab_size() const { return vocab_size_; }
  const SchemeConfig& config() const { return config_; }
  Scheme scheme() const { return config_.scheme; }
  ScoreKind kind() const { return config_.kind(); }
  const WatermarkKey& key(std::size_t i) const { return keys_.at(i); }
  const Watermark& watermark(std::size_t i) const { return *watermarks_.at(i); }
  std::shared_ptr<const Watermark> watermark_ptr(std::size_t i) const { return watermarks_.at(i); }

  /// The first `n` keys as a new set (nested key sets for sweeps).
  KeySet prefix(std::size_t n) const;

 private:
  SchemeConfig config_;
  std::vector<WatermarkKey> keys_;
  std::size_t vocab_size_;
  std::vector<std::shared_ptr<const Watermark>> watermarks_;
};

struct ThresholdTable {
  ScoreKind kind = ScoreKind::z_score;
  /// Shared by every key of the set.
  double per_key_threshold = kDefaultZThreshold;
  double target_fpr = 1e-3;
  std::size_t calibration_samples = 0;
  std::size_t keys = 1;
  /// Union-bound value: Phi^-1(1 - target/n) for z-scores, target/n for
  /// p-values.
  double analytic_threshold = kDefaultZThreshold;
  /// Null scores at or beyond the chosen threshold in the calibration set.
  std::size_t calibration_exceedances = 0;
  std::vector<std::string> warnings;

  friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

/// Draws a key index uniformly, then generates the whole response under it.
/// Throws ParameterError for an empty set (cannot be constructed) or a
/// vocabulary mismatch.
std::pair<TokenSequence, std::size_t> embed_with_keyset(const LanguageModel& model,
                                                        std::span<const TokenId> prompt,
                                                        const KeySet& keys, std::size_t length,
                                                        Rng& rng,
                                                        Decoding decoding = Decoding::multinomial);

/// Max z (min p) over keys. With one key and no table the single-key report
/// is returned unchanged; otherwise per_key and best_key are filled and the
/// verdict uses the table's threshold when given.
DetectionReport detect_multi(std::span<const TokenId> x, const KeySet& keys,
                             const ThresholdTable* thresholds = nullptr);

/// Returns the i-th null (unwatermarked) text.
using NullSampler = std::function<TokenSequence(std::size_t index)>;

/// Max-over-keys scores for `samples` null texts.
std::vector<double> null_scores(const KeySet& keys, const NullSampler& sampler,
                                std::size_t samples);

/// Threshold from pre-computed max-over-keys null scores.
///
/// Allows k exceedances, where k is the 5% quantile of Binomial(N, target),
/// so the true FPR sits below the target with ~95% confidence rather than
/// merely in expectation. With fewer than 10/target samples the analytic
/// union bound is used instead and a warning recorded.
ThresholdTable calibrate_from_scores(std::vector<double> scores, ScoreKind kind,
                                     std::size_t n_keys, double target_fpr);

ThresholdTable calibrate_thresholds(const KeySet& keys, const NullSampler& sampler,
                                    double target_fpr, std::size_t samples);

/// Phi^-1(1 - target / n).
double union_bound_z(double target_fpr, std::size_t n_keys);

// ---------------------------------------------------------------------------
// Serialization: one JSON document, key material hex-encoded.

inline constexpr int kKeySetFormatVersion = 1;

struct KeyringFile {
  KeySet keys;
  std::optional<ThresholdTable> thresholds;
  /// Detection-service secret for DP noise; never sent over the wire.
  std::optional<WatermarkKey> noise_key;
};

std::string keyring_to_json(const KeySet& keys, const ThresholdTable* thresholds = nullptr,
                            const WatermarkKey* noise_key = nullptr);
KeyringFile keyring_from_json(std::string_view text);

void save_keyring(const std::filesystem::path& path, const KeySet& keys,
                  const ThresholdTable* thresholds = nullptr,
                  const WatermarkKey* noise_key = nullptr);
KeyringFile load_keyring(const std::filesystem::path& path);

}  // namespace wmlab
