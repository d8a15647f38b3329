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

/// @file watermarks.hpp
/// Embedding and detection for three decoding-time watermarks:
///
///  * KGW     - green list re-seeded from the previous h tokens at every
///              position; green logits get +delta; z-score detection.
///  * Unigram - one global green list derived from the key; same biasing
///              and z-score detection.
///  * Exp     - Gumbel-trick sampling argmax_i xi_{k,i}^{1/p_i} against a
///              key sequence xi_1..xi_n with a random starting shift;
///              detection aligns the text against the key sequence with an
///              edit-distance DP and reports a resampling p-value.
///
/// A `Watermark` object binds one secret key to one scheme. Objects are
/// immutable after construction (internal memo tables are synchronized), so
/// they can be shared by concurrent generators and detectors.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/lm.hpp"

namespace wmlab {

enum class Scheme { kgw, unigram, exp };
enum class ScoreKind { z_score, p_value };
enum class Decoding { multinomial, greedy };

std::string_view to_string(Scheme s);
std::string_view to_string(ScoreKind k);
/// Throws ParameterError for names other than kgw / unigram / exp.
Scheme parse_scheme(std::string_view name);

inline constexpr double kDefaultZThreshold = 4.0;
inline constexpr double kDefaultPThreshold = 0.05;

/// z >= T for z-scores, p <= T for p-values.
bool verdict_for(ScoreKind kind, double value, double threshold);
/// True when `a` is at least as watermark-like as `b`.
bool more_extreme(ScoreKind kind, double a, double b);

struct DetectionReport {
  ScoreKind kind = ScoreKind::z_score;
  double value = 0.0;
  double threshold = kDefaultZThreshold;
  bool verdict = false;
  std::optional<std::size_t> green_count;
  /// Number of scored positions (l).
  std::size_t length = 0;
  /// Raw alignment statistic (Exp only).
  std::optional<double> statistic;
  /// Per-key scores and the winning key, filled by multi-key detection.
  std::vector<double> per_key;
  std::optional<std::size_t> best_key;

  friend bool operator==(const DetectionReport&, const DetectionReport&) = default;
};

/// (g - gamma*l) / sqrt(gamma*(1-gamma)*l). Throws InsufficientLengthError
/// for l = 0.
double z_score(std::size_t green, std::size_t length, double gamma);

// ---------------------------------------------------------------------------
// Parameters

struct KgwParams {
  double gamma = 0.5;
  double delta = 2.0;
  int h = 1;
  double threshold = kDefaultZThreshold;
  void validate() const;
};

struct UnigramParams {
  double gamma = 0.5;
  double delta = 2.0;
  double threshold = kDefaultZThreshold;
  void validate() const;
};

struct ExpParams {
  std::size_t key_length = 256;
  std::size_t resamples = 99;
  /// Insertion / deletion cost in the alignment DP.
  double gap_penalty = 1.0;
  /// Alignment restricted to |i - j| <= band; 0 means unrestricted.
  std::size_t band = 10;
  double threshold = kDefaultPThreshold;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Scheme interface

class Watermark {
 public:
  virtual ~Watermark() = default;

  virtual Scheme scheme() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual ScoreKind kind() const = 0;
  virtual double threshold() const = 0;

  /// Distribution a client would see through a top-logprobs API: the biased
  /// distribution for KGW/Unigram, the model's own vector for Exp.
  virtual ProbDist watermarked_dist(const ProbDist& base,
                                    std::span<const TokenId> context) const = 0;

  /// Next token of a response. `context` is prompt + response so far,
  /// `position` the 0-based response index and `shift` the per-response
  /// random shift (Exp only). Exp ignores `decoding` and `rng`.
  virtual TokenId next_token(const ProbDist& base, std::span<const TokenId> context,
                             std::size_t position, std::size_t shift, Decoding decoding,
                             Rng& rng) const = 0;

  virtual DetectionReport detect(std::span<const TokenId> x) const = 0;

  /// Range of the per-response shift; 1 for schemes without one.
  virtual std::size_t shift_period() const { return 1; }

  /// Watermarked continuation of `prompt`. The shift is drawn from `rng`.
  TokenSequence generate(const LanguageModel& model, std::span<const TokenId> prompt,
                         std::size_t length, Rng& rng,
                         Decoding decoding = Decoding::multinomial) const;
  TokenSequence generate_with_shift(const LanguageModel& model, std::span<const TokenId> prompt,
                                    std::size_t length, std::size_t shift, Rng& rng,
                                    Decoding decoding = Decoding::multinomial) const;
};

/// Language-model view of a deployed watermarked model (top-logprobs API).
class WatermarkedModel final : public LanguageModel {
 public:
  WatermarkedModel(std::shared_ptr<const LanguageModel> base,
                   std::shared_ptr<const Watermark> watermark);

  const Vocabulary& vocab() const override { return base_->vocab(); }
  ProbDist next_dist(std::span<const TokenId> context) const override;

 private:
  std::shared_ptr<const LanguageModel> base_;
  std::shared_ptr<const Watermark> watermark_;
};

// ---------------------------------------------------------------------------
// KGW and Unigram

/// softmax(logits + delta * green_mask).
ProbDist bias_green(const Logits& logits, const GreenList& green, double delta);
ProbDist bias_green(const ProbDist& base, const GreenList& green, double delta);

class KgwWatermark final : public Watermark {
 public:
  KgwWatermark(WatermarkKey key, KgwParams params, std::size_t vocab_size);

  Scheme scheme() const override { return Scheme::kgw; }
  std::size_t vocab_size() const override { return vocab_size_; }
  ScoreKind kind() const override { return ScoreKind::z_score; }
  double threshold() const override { return params_.threshold; }

  ProbDist watermarked_dist(const ProbDist& base,
                            std::span<const TokenId> context) const override;
  TokenId next_token(const ProbDist& base, std::span<const TokenId> context,
                     std::size_t position, std::size_t shift, Decoding decoding,
                     Rng& rng) const override;
  /// Scores positions h..|x|-1. Throws InsufficientLengthError when |x| <= h.
  DetectionReport detect(std::span<const TokenId> x) const override;

  /// Green list seeded by prf(key, last h tokens of `context`), left-padded
  /// with kStartOfText.
  const GreenList& green_list(std::span<const TokenId> context) const;
  const KgwParams& params() const { return params_; }
  const WatermarkKey& key() const { return key_; }

 private:
  WatermarkKey key_;
  KgwParams params_;
  std::size_t vocab_size_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, GreenList> cache_;
};

class UnigramWatermark final : public Watermark {
 public:
  UnigramWatermark(WatermarkKey key, UnigramParams params, std::size_t vocab_size);

  Scheme scheme() const override { return Scheme::unigram; }
  std::size_t vocab_size() const override { return green_.vocab_size(); }
  ScoreKind kind() const override { return ScoreKind::z_score; }
  double threshold() const override { return params_.threshold; }

  ProbDist watermarked_dist(const ProbDist& base,
                            std::span<const TokenId> context) const override;
  TokenId next_token(const ProbDist& base, std::span<const TokenId> context,
                     std::size_t position, std::size_t shift, Decoding decoding,
                     Rng& rng) const override;
  /// Scores every token. Throws InsufficientLengthError for empty x.
  DetectionReport detect(std::span<const TokenId> x) const override;

  const GreenList& green_list() const { return green_; }
  const UnigramParams& params() const { return params_; }
  const WatermarkKey& key() const { return key_; }

 private:
  WatermarkKey key_;
  UnigramParams params_;
  GreenList green_;
};

/// Global green-list seed: prf(key, "unigram-global").
Seed unigram_seed(const WatermarkKey& key);

ProbDist kgw_embed_step(const ProbDist& base, std::span<const TokenId> context,
                        const WatermarkKey& key, const KgwParams& params);
ProbDist kgw_embed_step(const Logits& base, std::span<const TokenId> context,
                        const WatermarkKey& key, const KgwParams& params);
DetectionReport kgw_detect(std::span<const TokenId> x, const WatermarkKey& key,
                           const KgwParams& params, std::size_t vocab_size);
ProbDist unigram_embed_step(const ProbDist& base, const WatermarkKey& key,
                            const UnigramParams& params);
ProbDist unigram_embed_step(const Logits& base, const WatermarkKey& key,
                            const UnigramParams& params);
DetectionReport unigram_detect(std::span<const TokenId> x, const WatermarkKey& key,
                               const UnigramParams& params, std::size_t vocab_size);

// ---------------------------------------------------------------------------
// Exp

inline constexpr double kXiClamp = 1e-12;

/// Key sequence xi_1..xi_n, each a vector in (0,1)^|V|; stored row-major.
class ExpKey {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  ExpKey(std::size_t length, std::size_t vocab_size, std::vector<double> xi);

  /// Rows expanded from prg(prf(secret, "exp-xi")), clamped into
  /// [1e-12, 1 - 1e-12].
  static ExpKey from_secret(const WatermarkKey& secret, std::size_t length,
                            std::size_t vocab_size);

  std::size_t length() const { return length_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::span<const double> row(std::size_t k) const {
    return std::span<const double>(xi_).subspan(k * vocab_size_, vocab_size_);
  }
  double at(std::size_t k, TokenId t) const { return xi_[k * vocab_size_ + t]; }

  /// Binary layout: "WMXI", u32 version, u64 n, u64 |V|, n*|V| f64 (all LE).
  void save(const std::filesystem::path& path) const;
  static ExpKey load(const std::filesystem::path& path);

 private:
  std::size_t length_;
  std::size_t vocab_size_;
  std::vector<double> xi_;
};

/// argmax_i xi_i^(1/p_i); zero-probability tokens never win; ties go to the
/// lowest id.
TokenId exp_embed_step(const ProbDist& p, std::span<const double> xi_row);

/// Gumbel-trick continuation with key index (shift + t) mod n for the t-th
/// response token (1-based); the shift is drawn uniformly from [0, n).
TokenSequence exp_generate(const LanguageModel& model, std::span<const TokenId> prompt,
                           const ExpKey& key, std::size_t length, Rng& shift_rng);

/// sum_{t=1..l} -log(1 - xi_{(shift + t) mod n, x_t}).
double exp_statistic(std::span<const TokenId> x, const ExpKey& key, std::size_t shift);

/// Minimum over shifts of the edit-alignment cost between x and the key
/// sequence, with matched cost log(1 - xi_{k, x_i}) and gap penalty per
/// inserted / deleted element. Lower means more watermark-like.
double exp_alignment_statistic(std::span<const TokenId> x, const ExpKey& key,
                               const ExpParams& params);

class ExpWatermark final : public Watermark {
 public:
  ExpWatermark(ExpKey key, ExpParams params);
  /// Key expanded from a secret with params.key_length rows.
  ExpWatermark(const WatermarkKey& secret, ExpParams params, std::size_t vocab_size);

  Scheme scheme() const override { return Scheme::exp; }
  std::size_t vocab_size() const override { return key_.vocab_size(); }
  ScoreKind kind() const override { return ScoreKind::p_value; }
  double threshold() const override { return params_.threshold; }
  std::size_t shift_period() const override { return key_.length(); }

  ProbDist watermarked_dist(const ProbDist& base,
                            std::span<const TokenId> context) const override;
  TokenId next_token(const ProbDist& base, std::span<const TokenId> context,
                     std::size_t position, std::size_t shift, Decoding decoding,
                     Rng& rng) const override;
  /// p = (1 + #{reference statistics <= observed}) / (resamples + 1). The
  /// references use fresh uniform keys expanded from a PRF of x, so the
  /// report is a pure function of x.
  DetectionReport detect(std::span<const TokenId> x) const override;

  const ExpKey& key() const { return key_; }
  const ExpParams& params() const { return params_; }

 private:
  ExpKey key_;
  ExpParams params_;
};

DetectionReport exp_detect(std::span<const TokenId> x, const ExpKey& key,
                           const ExpParams& params);

// ---------------------------------------------------------------------------

/// Scheme parameters bundle used by factories, key sets and config files.
struct SchemeConfig {
  Scheme scheme = Scheme::kgw;
  KgwParams kgw;
  UnigramParams unigram;
  ExpParams exp;

  void validate() const;
  ScoreKind kind() const { return scheme == Scheme::exp ? ScoreKind::p_value : ScoreKind::z_score; }
  double threshold() const;
  /// Green-list fraction; 0 for Exp.
  double gamma() const;
};

/// Watermark for `scheme` bound to `secret`.
std::shared_ptr<const Watermark> make_watermark(const SchemeConfig& config,
                                                const WatermarkKey& secret,
                                                std::size_t vocab_size);

/// Hex key file (one line).
void save_key_hex(const WatermarkKey& key, const std::filesystem::path& path);
WatermarkKey load_key_hex(const std::filesystem::path& path);

}  // namespace wmlab
