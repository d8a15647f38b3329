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

/// @file attacks.hpp
/// Spoofing and removal attacks against decoding-time watermarks:
///
///  * piggyback spoofing - insert flagged tokens into, or apply a few
///    substitutions to, genuinely watermarked text;
///  * multi-key removal  - observe several independently keyed next-token
///    choices and sample from their histogram;
///  * detection-API removal and spoofing - steer token choice with the
///    scores returned by a public detector;
///  * green-list stealing - frequency-ratio estimate of a green list.
///
/// API-guided attackers only ever hold a `DetectionOracle` and a
/// `GenerationApi`; neither exposes key material. Both count invocations.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/keyring.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab {

// ---------------------------------------------------------------------------
// Attack inputs

/// Flagged tokens (stand-in for a toxic word list).
struct Lexicon {
  std::string name;
  std::vector<TokenId> flagged;  // sorted, unique

  Lexicon(std::string name, std::vector<TokenId> tokens, std::size_t vocab_size);

  /// `size` distinct ids drawn uniformly from [0, vocab_size).
  static Lexicon random(std::size_t vocab_size, std::size_t size, Rng& rng,
                        std::string name = "random");
  /// Every token id; models uniform random insertion.
  static Lexicon whole_vocabulary(std::size_t vocab_size);
  /// One surface form per line; blank lines and '#' comments skipped.
  /// Unknown words throw DomainError.
  static Lexicon load(const std::filesystem::path& path, const Vocabulary& vocab);

  bool contains(TokenId t) const;
  /// Fraction of tokens in x that are flagged (toxicity proxy).
  double flagged_fraction(std::span<const TokenId> x) const;
};

/// token -> replacement (replacement != token).
struct SubstitutionTable {
  std::map<TokenId, TokenId> rules;

  explicit SubstitutionTable(std::map<TokenId, TokenId> rules);
  static SubstitutionTable random(std::size_t vocab_size, std::size_t size, Rng& rng);
  /// "from to" per line (whitespace separated surface forms).
  static SubstitutionTable load(const std::filesystem::path& path, const Vocabulary& vocab);
};

// ---------------------------------------------------------------------------
// Oracles seen by API attackers

/// Raw detection score for arbitrary text, with an invocation counter.
/// Propagates InsufficientLengthError for unscorable text; such calls still
/// count.
class DetectionOracle {
 public:
  using ScoreFn = std::function<double(std::span<const TokenId>)>;

  DetectionOracle(ScoreKind kind, ScoreFn fn);
  /// Exact max-over-keys scores of `keys` (shared ownership).
  static DetectionOracle exact(std::shared_ptr<const KeySet> keys);

  double query(std::span<const TokenId> x);
  ScoreKind kind() const { return kind_; }
  std::size_t queries() const { return queries_; }

 private:
  ScoreKind kind_;
  ScoreFn fn_;
  std::size_t queries_ = 0;
};

/// Top-L view of a watermarked service: the biased distribution for
/// KGW/Unigram and the model's own vector for Exp.
class GenerationApi {
 public:
  static constexpr std::size_t kMaxTopL = 5;

  GenerationApi(std::shared_ptr<const LanguageModel> base,
                std::shared_ptr<const Watermark> watermark);

  /// Throws ParameterError when L is 0 or above kMaxTopL.
  TopL top_l(std::span<const TokenId> context, std::size_t L);
  std::size_t queries() const { return queries_; }

 private:
  std::shared_ptr<const LanguageModel> base_;
  std::shared_ptr<const Watermark> watermark_;
  std::size_t queries_ = 0;
};

// ---------------------------------------------------------------------------

struct AttackOutcome {
  TokenSequence text;
  std::optional<DetectionReport> score_before;
  std::optional<DetectionReport> score_after;
  std::size_t queries_generation = 0;
  std::size_t queries_detection = 0;
  /// Pseudo-perplexity of `text`; NaN until evaluated.
  double quality_proxy = std::numeric_limits<double>::quiet_NaN();
  /// Set by piggyback_edit when no rule matched.
  bool noop = false;
};

// ---------------------------------------------------------------------------
// Piggyback spoofing

/// floor(l * (z^2 - T^2) / T^2); 0 when z < T. Throws ParameterError for
/// T <= 0.
std::size_t max_insertable(double z, std::size_t l, double T);

/// Inserts `s` lexicon tokens at uniformly random positions of the output
/// (a uniform s-subset of the l+s slots), keeping x's order. The chosen
/// slots are written to `inserted_at` (ascending) when given.
TokenSequence piggyback_insert(std::span<const TokenId> x, const Lexicon& lexicon, std::size_t s,
                               Rng& rng, std::vector<std::size_t>* inserted_at = nullptr);

/// Replaces up to `max_edits` rule-matching tokens, earliest first.
/// Outcome text has x's length; `noop` is set when nothing matched.
AttackOutcome piggyback_edit(std::span<const TokenId> x, const SubstitutionTable& table,
                             std::size_t max_edits = 3);

// ---------------------------------------------------------------------------
// Multi-key removal

struct MultikeyRemovalParams {
  std::size_t n_queries = 13;
  /// Per-observation decoding; greedy matches the analysed setting.
  Decoding observation = Decoding::greedy;
};

/// At each position the attacker opens n_queries fresh sessions (each with
/// a key drawn uniformly, with replacement, from `keys` and, for Exp, a
/// fresh shift), records each session's next token and samples the next
/// token proportionally to the histogram.
AttackOutcome multikey_removal(const LanguageModel& model, std::span<const TokenId> prompt,
                               const KeySet& keys, const MultikeyRemovalParams& params,
                               std::size_t length, Rng& rng);

// ---------------------------------------------------------------------------
// Detection-API attacks

struct ApiRemovalParams {
  std::size_t L = 5;
  /// z-score schemes: weight_c = p_c * exp(-beta * (z_c - z_min) / step),
  /// step = 1 / sqrt(gamma (1 - gamma) l), the score change of one token.
  double beta = 8.0;
  double gamma = 0.5;
  /// p-value schemes: while the current p-value exceeds exp_skip_pvalue,
  /// candidates with probability below exp_skip_prob are not considered.
  double exp_skip_prob = 0.15;
  double exp_skip_pvalue = 0.1;
};

/// Candidates are queried in descending probability; for z-scores the scan
/// stops at the first candidate that does not raise the current score.
AttackOutcome api_removal(GenerationApi& api, std::span<const TokenId> prompt,
                          DetectionOracle& oracle, const ApiRemovalParams& params,
                          std::size_t length, Rng& rng);

struct ApiSpoofParams {
  std::size_t L = 3;
};

/// Local-model spoofing: each step appends whichever of the local top-L
/// candidates the oracle scores most watermark-like (ties to the more
/// probable candidate). Never touches key material.
AttackOutcome api_spoof(const LanguageModel& local, std::span<const TokenId> prompt,
                        DetectionOracle& oracle, const ApiSpoofParams& params,
                        std::size_t length);

// ---------------------------------------------------------------------------
// Green-list stealing

struct ObservedSample {
  TokenSequence prompt;
  TokenSequence response;
};

struct StealResult {
  /// estimate[t] = token t classified green; exactly floor(gamma |V|) set.
  std::vector<bool> estimate;
  /// (observed + 1) / (expected + 1) per token.
  std::vector<double> scores;
  std::size_t observed_tokens = 0;
  /// Fewer observed tokens than |V|.
  bool low_confidence = false;

  /// |estimate & truth| / |estimate|.
  double precision(const GreenList& truth) const;
};

/// Frequency-ratio estimator: compares each token's observed count with its
/// expected count under the (attacker-known) base distribution along the
/// same contexts and classifies the top floor(gamma |V|) ratios as green.
StealResult steal_greenlist(std::span<const ObservedSample> samples, const LanguageModel& base,
                            double gamma);

/// Best precision of `result` against any key's global green list (Unigram).
double steal_precision(const StealResult& result, const KeySet& keys);

}  // namespace wmlab
