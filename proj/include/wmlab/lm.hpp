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

/// @file lm.hpp
/// Desk-scale token-probability sources: a smoothed n-gram (Markov) model
/// trained from token streams and a keyed synthetic model with tunable
/// entropy. Both are immutable once built and safe to share across threads.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/vocabulary.hpp"

namespace wmlab {

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocab() const = 0;
  /// Distribution of the next token. Valid for every context including the
  /// empty one; throws DomainError for out-of-range ids.
  virtual ProbDist next_dist(std::span<const TokenId> context) const = 0;

  std::size_t vocab_size() const { return vocab().size(); }
};

// ---------------------------------------------------------------------------

/// next_dist(c) = (count(c, t) + alpha) / (total(c) + alpha * |V|) over the
/// last `order` tokens, left-padded with kStartOfText.
class MarkovModel final : public LanguageModel {
 public:
  static constexpr int kFormatVersion = 1;

  struct ContextCounts {
    std::vector<std::pair<TokenId, std::uint32_t>> counts;  // sorted by token
    std::uint64_t total = 0;
  };

  MarkovModel(Vocabulary vocab, int order, double alpha);

  const Vocabulary& vocab() const override { return vocab_; }
  ProbDist next_dist(std::span<const TokenId> context) const override;

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  std::size_t context_count() const { return table_.size(); }

  /// Adds one document; counting starts from an all-start-of-text context.
  void add_document(std::span<const TokenId> tokens);

  void save(const std::filesystem::path& path) const;
  static MarkovModel load(const std::filesystem::path& path);

 private:
  std::string context_key(std::span<const TokenId> context) const;

  Vocabulary vocab_;
  int order_;
  double alpha_;
  std::unordered_map<std::string, ContextCounts> table_;
};

/// Trains on a list of documents. Throws TrainingError when the corpus holds
/// no more than `order` tokens, ParameterError when alpha <= 0 or order < 1.
MarkovModel train_markov(const Vocabulary& vocab, std::span<const TokenSequence> documents,
                         int order, double alpha);

/// Single-stream convenience overload.
MarkovModel train_markov(const Vocabulary& vocab, std::span<const TokenId> corpus, int order,
                         double alpha);

// ---------------------------------------------------------------------------

/// Keyed synthetic model. For each context of the last `context_width`
/// tokens, draws standard Gumbel scores g_i from the PRG seeded with
/// prf(seed, context) and returns softmax(g / concentration). Larger
/// concentration flattens the distribution toward uniform.
class SyntheticModel final : public LanguageModel {
 public:
  SyntheticModel(Vocabulary vocab, WatermarkKey seed, double concentration,
                 int context_width = 1);

  const Vocabulary& vocab() const override { return vocab_; }
  ProbDist next_dist(std::span<const TokenId> context) const override;

  double concentration() const { return concentration_; }
  int context_width() const { return context_width_; }

 private:
  ProbDist compute(std::span<const TokenId> window) const;

  Vocabulary vocab_;
  WatermarkKey seed_;
  double concentration_;
  int context_width_;

  static constexpr std::size_t kCacheLimit = 1 << 14;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, std::shared_ptr<const ProbDist>> cache_;
};

// ---------------------------------------------------------------------------

struct TopEntry {
  TokenId token;
  double prob;
  friend bool operator==(const TopEntry&, const TopEntry&) = default;
};
using TopL = std::vector<TopEntry>;

/// The L most probable tokens, descending; ties broken by lower id.
TopL top_l(const ProbDist& p, std::size_t L);
TopL top_l(const LanguageModel& model, std::span<const TokenId> context, std::size_t L);

TokenId argmax(const ProbDist& p);

/// Multinomial draw from next_dist.
TokenId sample(const LanguageModel& model, std::span<const TokenId> context, Rng& rng);
TokenId sample(const LanguageModel& model, std::span<const TokenId> context,
               std::uint64_t rng_seed);

/// Unwatermarked multinomial continuation of `prompt` (prompt not included).
TokenSequence generate(const LanguageModel& model, std::span<const TokenId> prompt,
                       std::size_t length, Rng& rng);

/// exp(-mean log P(x_i | prompt, x_<i)); +inf when some token has zero
/// probability. Throws ParameterError when x is empty.
double pseudo_perplexity(const LanguageModel& model, std::span<const TokenId> x,
                         std::span<const TokenId> prompt = {});

/// Mean per-position entropy (nats) of the model along x.
double mean_entropy(const LanguageModel& model, std::span<const TokenId> x,
                    std::span<const TokenId> prompt = {});

// ---------------------------------------------------------------------------

/// Settings for the default toy world used by experiments and the service.
struct ToyWorldConfig {
  std::size_t vocab_size = 1024;
  int order = 1;
  double alpha = 0.1;
  double teacher_concentration = 0.7;
  std::size_t documents = 4000;
  std::size_t document_length = 128;
  std::size_t prompt_length = 8;
  std::uint64_t seed = 20240601;

  friend bool operator==(const ToyWorldConfig&, const ToyWorldConfig&) = default;
};

/// A keyed teacher generates two independent corpora; one trains the
/// generator Markov model and the other the held-out evaluator used for
/// pseudo-perplexity.
struct ToyWorld {
  ToyWorldConfig config;
  std::shared_ptr<const SyntheticModel> teacher;
  std::shared_ptr<const MarkovModel> generator;
  std::shared_ptr<const MarkovModel> evaluator;

  const Vocabulary& vocab() const { return generator->vocab(); }
  /// Prompt of config.prompt_length tokens drawn from the teacher.
  TokenSequence prompt(Rng& rng) const;
};

ToyWorld build_toy_world(const ToyWorldConfig& config = {});

/// Process-wide cached default world.
const ToyWorld& default_toy_world();

}  // namespace wmlab
