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

#include "wmlab/watermarks.hpp"

#include <cmath>
#include <fstream>

namespace wmlab {

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::kgw:
      return "kgw";
    case Scheme::unigram:
      return "unigram";
    case Scheme::exp:
      return "exp";
  }
  return "?";
}

std::string_view to_string(ScoreKind k) {
  return k == ScoreKind::z_score ? "z-score" : "p-value";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "kgw") return Scheme::kgw;
  if (name == "unigram") return Scheme::unigram;
  if (name == "exp") return Scheme::exp;
  throw ParameterError("unknown scheme '" + std::string(name) + "'");
}

bool verdict_for(ScoreKind kind, double value, double threshold) {
  return kind == ScoreKind::z_score ? value >= threshold : value <= threshold;
}

bool more_extreme(ScoreKind kind, double a, double b) {
  return kind == ScoreKind::z_score ? a >= b : a <= b;
}

double z_score(std::size_t green, std::size_t length, double gamma) {
  if (length == 0) throw InsufficientLengthError("no scored positions");
  const double l = static_cast<double>(length);
  return (static_cast<double>(green) - gamma * l) / std::sqrt(gamma * (1.0 - gamma) * l);
}

void KgwParams::validate() const {
  validate_gamma(gamma);
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw ParameterError("delta must be >= 0");
  if (h < 1) throw ParameterError("context width h must be >= 1");
}

void UnigramParams::validate() const {
  validate_gamma(gamma);
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw ParameterError("delta must be >= 0");
}

// ---------------------------------------------------------------------------
// Watermark base

TokenSequence Watermark::generate(const LanguageModel& model, std::span<const TokenId> prompt,
                                  std::size_t length, Rng& rng, Decoding decoding) const {
  const std::size_t shift = shift_period() > 1 ? rng.below(shift_period()) : 0;
  return generate_with_shift(model, prompt, length, shift, rng, decoding);
}

TokenSequence Watermark::generate_with_shift(const LanguageModel& model,
                                             std::span<const TokenId> prompt,
                                             std::size_t length, std::size_t shift, Rng& rng,
                                             Decoding decoding) const {
  if (model.vocab_size() != vocab_size()) {
    throw ParameterError("model and watermark vocabulary sizes differ");
  }
  TokenSequence ctx(prompt.begin(), prompt.end());
  TokenSequence out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const TokenId t = next_token(model.next_dist(ctx), ctx, i, shift, decoding, rng);
    ctx.push_back(t);
    out.push_back(t);
  }
  return out;
}

WatermarkedModel::WatermarkedModel(std::shared_ptr<const LanguageModel> base,
                                   std::shared_ptr<const Watermark> watermark)
    : base_(std::move(base)), watermark_(std::move(watermark)) {
  if (base_->vocab_size() != watermark_->vocab_size()) {
    throw ParameterError("model and watermark vocabulary sizes differ");
  }
}

ProbDist WatermarkedModel::next_dist(std::span<const TokenId> context) const {
  return watermark_->watermarked_dist(base_->next_dist(context), context);
}

// ---------------------------------------------------------------------------
// Green-list biasing

ProbDist bias_green(const Logits& logits, const GreenList& green, double delta) {
  if (logits.size() != green.vocab_size()) throw DomainError("logit / vocabulary size mismatch");
  Logits biased = logits;
  if (delta != 0.0) {
    for (std::size_t i = 0; i < biased.size(); ++i) {
      if (green.contains(static_cast<TokenId>(i))) biased[i] += delta;
    }
  }
  return softmax(biased);
}

ProbDist bias_green(const ProbDist& base, const GreenList& green, double delta) {
  return bias_green(Logits::from_probs(base), green, delta);
}

namespace {

TokenId pick(const ProbDist& p, Decoding decoding, Rng& rng) {
  return decoding == Decoding::greedy ? argmax(p) : sample_from(p, rng.uniform());
}

}  // namespace

// ---------------------------------------------------------------------------
// KGW

KgwWatermark::KgwWatermark(WatermarkKey key, KgwParams params, std::size_t vocab_size)
    : key_(std::move(key)), params_(params), vocab_size_(vocab_size) {
  params_.validate();
  if (vocab_size_ < 2) throw ParameterError("vocabulary must have at least two tokens");
}

const GreenList& KgwWatermark::green_list(std::span<const TokenId> context) const {
  const auto h = static_cast<std::size_t>(params_.h);
  std::vector<TokenId> window(h, kStartOfText);
  const std::size_t take = std::min(h, context.size());
  for (std::size_t i = 0; i < take; ++i) window[h - take + i] = context[context.size() - take + i];
  const auto bytes = encode_tokens(window);
  std::string key(bytes.begin(), bytes.end());
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  GreenList g = green_partition(prf(key_, bytes), vocab_size_, params_.gamma);
  std::lock_guard lock(mutex_);
  return cache_.try_emplace(std::move(key), std::move(g)).first->second;
}

ProbDist KgwWatermark::watermarked_dist(const ProbDist& base,
                                        std::span<const TokenId> context) const {
  return bias_green(base, green_list(context), params_.delta);
}

TokenId KgwWatermark::next_token(const ProbDist& base, std::span<const TokenId> context,
                                 std::size_t, std::size_t, Decoding decoding, Rng& rng) const {
  return pick(watermarked_dist(base, context), decoding, rng);
}

DetectionReport KgwWatermark::detect(std::span<const TokenId> x) const {
  const auto h = static_cast<std::size_t>(params_.h);
  if (x.size() <= h) {
    throw InsufficientLengthError("KGW detection needs more than h = " + std::to_string(h) +
                                  " tokens");
  }
  std::size_t green = 0;
  for (std::size_t t = h; t < x.size(); ++t) {
    if (x[t] >= vocab_size_) throw DomainError("token id out of range");
    if (green_list(x.subspan(t - h, h)).contains(x[t])) ++green;
  }
  DetectionReport r;
  r.kind = ScoreKind::z_score;
  r.length = x.size() - h;
  r.green_count = green;
  r.value = z_score(green, r.length, params_.gamma);
  r.threshold = params_.threshold;
  r.verdict = verdict_for(r.kind, r.value, r.threshold);
  return r;
}

ProbDist kgw_embed_step(const ProbDist& base, std::span<const TokenId> context,
                        const WatermarkKey& key, const KgwParams& params) {
  return KgwWatermark(key, params, base.size()).watermarked_dist(base, context);
}

ProbDist kgw_embed_step(const Logits& base, std::span<const TokenId> context,
                        const WatermarkKey& key, const KgwParams& params) {
  const KgwWatermark wm(key, params, base.size());
  return bias_green(base, wm.green_list(context), params.delta);
}

DetectionReport kgw_detect(std::span<const TokenId> x, const WatermarkKey& key,
                           const KgwParams& params, std::size_t vocab_size) {
  return KgwWatermark(key, params, vocab_size).detect(x);
}

// ---------------------------------------------------------------------------
// Unigram

Seed unigram_seed(const WatermarkKey& key) { return prf(key, std::string_view("unigram-global")); }

UnigramWatermark::UnigramWatermark(WatermarkKey key, UnigramParams params, std::size_t vocab_size)
    : key_(std::move(key)),
      params_((params.validate(), params)),
      green_(green_partition(unigram_seed(key_), vocab_size, params.gamma)) {}

ProbDist UnigramWatermark::watermarked_dist(const ProbDist& base,
                                            std::span<const TokenId>) const {
  return bias_green(base, green_, params_.delta);
}

TokenId UnigramWatermark::next_token(const ProbDist& base, std::span<const TokenId> context,
                                     std::size_t, std::size_t, Decoding decoding,
                                     Rng& rng) const {
  return pick(watermarked_dist(base, context), decoding, rng);
}

DetectionReport UnigramWatermark::detect(std::span<const TokenId> x) const {
  if (x.empty()) throw InsufficientLengthError("Unigram detection needs at least one token");
  std::size_t green = 0;
  for (TokenId t : x) {
    if (t >= green_.vocab_size()) throw DomainError("token id out of range");
    if (green_.contains(t)) ++green;
  }
  DetectionReport r;
  r.kind = ScoreKind::z_score;
  r.length = x.size();
  r.green_count = green;
  r.value = z_score(green, r.length, params_.gamma);
  r.threshold = params_.threshold;
  r.verdict = verdict_for(r.kind, r.value, r.threshold);
  return r;
}

ProbDist unigram_embed_step(const ProbDist& base, const WatermarkKey& key,
                            const UnigramParams& params) {
  return UnigramWatermark(key, params, base.size()).watermarked_dist(base, {});
}

ProbDist unigram_embed_step(const Logits& base, const WatermarkKey& key,
                            const UnigramParams& params) {
  const UnigramWatermark wm(key, params, base.size());
  return bias_green(base, wm.green_list(), params.delta);
}

DetectionReport unigram_detect(std::span<const TokenId> x, const WatermarkKey& key,
                               const UnigramParams& params, std::size_t vocab_size) {
  return UnigramWatermark(key, params, vocab_size).detect(x);
}

// ---------------------------------------------------------------------------

void SchemeConfig::validate() const {
  switch (scheme) {
    case Scheme::kgw:
      return kgw.validate();
    case Scheme::unigram:
      return unigram.validate();
    case Scheme::exp:
      return exp.validate();
  }
}

double SchemeConfig::threshold() const {
  switch (scheme) {
    case Scheme::kgw:
      return kgw.threshold;
    case Scheme::unigram:
      return unigram.threshold;
    case Scheme::exp:
      break;
  }
  return exp.threshold;
}

double SchemeConfig::gamma() const {
  switch (scheme) {
    case Scheme::kgw:
      return kgw.gamma;
    case Scheme::unigram:
      return unigram.gamma;
    case Scheme::exp:
      break;
  }
  return 0.0;
}

std::shared_ptr<const Watermark> make_watermark(const SchemeConfig& config,
                                                const WatermarkKey& secret,
                                                std::size_t vocab_size) {
  switch (config.scheme) {
    case Scheme::kgw:
      return std::make_shared<KgwWatermark>(secret, config.kgw, vocab_size);
    case Scheme::unigram:
      return std::make_shared<UnigramWatermark>(secret, config.unigram, vocab_size);
    case Scheme::exp:
      return std::make_shared<ExpWatermark>(secret, config.exp, vocab_size);
  }
  throw ParameterError("unknown scheme");
}

void save_key_hex(const WatermarkKey& key, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << key.to_hex() << '\n';
}

WatermarkKey load_key_hex(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
  return WatermarkKey::from_hex(line);
}

}  // namespace wmlab
