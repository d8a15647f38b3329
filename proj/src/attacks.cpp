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

#include "wmlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wmlab {

namespace {

std::vector<std::string> content_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(line);
  }
  return out;
}

TokenId lookup_known(const Vocabulary& vocab, const std::string& word) {
  const auto id = vocab.lookup(word);
  if (!id || (vocab.unk_id() && *id == *vocab.unk_id() && vocab.surface(*id) != word)) {
    throw DomainError("'" + word + "' is not in the vocabulary");
  }
  return *id;
}

// Draws from weights proportional to `w` (all >= 0, positive sum).
std::size_t draw_weighted(std::span<const double> w, Rng& rng) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Lexicon / SubstitutionTable

Lexicon::Lexicon(std::string name_in, std::vector<TokenId> tokens, std::size_t vocab_size)
    : name(std::move(name_in)), flagged(std::move(tokens)) {
  std::sort(flagged.begin(), flagged.end());
  flagged.erase(std::unique(flagged.begin(), flagged.end()), flagged.end());
  if (flagged.empty()) throw ParameterError("lexicon is empty");
  if (flagged.back() >= vocab_size) throw DomainError("lexicon token id out of range");
}

Lexicon Lexicon::random(std::size_t vocab_size, std::size_t size, Rng& rng, std::string name) {
  if (size < 1 || size > vocab_size) throw ParameterError("lexicon size out of range");
  std::vector<TokenId> ids(vocab_size);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  for (std::size_t i = 0; i < size; ++i) {
    std::swap(ids[i], ids[i + rng.below(vocab_size - i)]);
  }
  ids.resize(size);
  return Lexicon(std::move(name), std::move(ids), vocab_size);
}

Lexicon Lexicon::whole_vocabulary(std::size_t vocab_size) {
  std::vector<TokenId> ids(vocab_size);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  return Lexicon("vocabulary", std::move(ids), vocab_size);
}

Lexicon Lexicon::load(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& line : content_lines(path)) {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    ids.push_back(lookup_known(vocab, word));
  }
  return Lexicon(path.stem().string(), std::move(ids), vocab.size());
}

bool Lexicon::contains(TokenId t) const {
  return std::binary_search(flagged.begin(), flagged.end(), t);
}

double Lexicon::flagged_fraction(std::span<const TokenId> x) const {
  if (x.empty()) return 0.0;
  const auto hits = std::count_if(x.begin(), x.end(), [&](TokenId t) { return contains(t); });
  return static_cast<double>(hits) / static_cast<double>(x.size());
}

SubstitutionTable::SubstitutionTable(std::map<TokenId, TokenId> r) : rules(std::move(r)) {
  for (const auto& [from, to] : rules) {
    if (from == to) throw ParameterError("substitution must change the token");
  }
}

SubstitutionTable SubstitutionTable::random(std::size_t vocab_size, std::size_t size, Rng& rng) {
  if (vocab_size < 2) throw ParameterError("vocabulary too small");
  std::map<TokenId, TokenId> rules;
  while (rules.size() < std::min(size, vocab_size)) {
    const auto from = static_cast<TokenId>(rng.below(vocab_size));
    auto to = static_cast<TokenId>(rng.below(vocab_size - 1));
    if (to >= from) ++to;
    rules.try_emplace(from, to);
  }
  return SubstitutionTable(std::move(rules));
}

SubstitutionTable SubstitutionTable::load(const std::filesystem::path& path,
                                          const Vocabulary& vocab) {
  std::map<TokenId, TokenId> rules;
  for (const auto& line : content_lines(path)) {
    std::istringstream ss(line);
    std::string a, b;
    if (!(ss >> a >> b)) throw FormatError("substitution rule needs two words: '" + line + "'");
    rules[lookup_known(vocab, a)] = lookup_known(vocab, b);
  }
  return SubstitutionTable(std::move(rules));
}

// ---------------------------------------------------------------------------
// Oracles

DetectionOracle::DetectionOracle(ScoreKind kind, ScoreFn fn) : kind_(kind), fn_(std::move(fn)) {
  if (!fn_) throw ParameterError("detection oracle needs a scoring function");
}

DetectionOracle DetectionOracle::exact(std::shared_ptr<const KeySet> keys) {
  const ScoreKind kind = keys->kind();
  return DetectionOracle(kind, [keys = std::move(keys)](std::span<const TokenId> x) {
    return detect_multi(x, *keys).value;
  });
}

double DetectionOracle::query(std::span<const TokenId> x) {
  ++queries_;
  return fn_(x);
}

GenerationApi::GenerationApi(std::shared_ptr<const LanguageModel> base,
                             std::shared_ptr<const Watermark> watermark)
    : base_(std::move(base)), watermark_(std::move(watermark)) {
  if (base_->vocab_size() != watermark_->vocab_size()) {
    throw ParameterError("model and watermark vocabulary sizes differ");
  }
}

TopL GenerationApi::top_l(std::span<const TokenId> context, std::size_t L) {
  if (L < 1 || L > kMaxTopL) throw ParameterError("top-L must be in [1, 5]");
  ++queries_;
  return wmlab::top_l(watermark_->watermarked_dist(base_->next_dist(context), context), L);
}

// ---------------------------------------------------------------------------
// Piggyback spoofing

std::size_t max_insertable(double z, std::size_t l, double T) {
  if (!(T > 0.0)) throw ParameterError("threshold must be positive");
  if (z < T) return 0;
  const double s = static_cast<double>(l) * (z * z - T * T) / (T * T);
  return static_cast<std::size_t>(std::floor(s + 1e-9));
}

TokenSequence piggyback_insert(std::span<const TokenId> x, const Lexicon& lexicon, std::size_t s,
                               Rng& rng, std::vector<std::size_t>* inserted_at) {
  const std::size_t total = x.size() + s;
  // Uniform s-subset of output slots by selection sampling.
  std::vector<bool> slot(total, false);
  std::size_t need = s;
  for (std::size_t i = 0; i < total && need > 0; ++i) {
    if (rng.below(total - i) < need) {
      slot[i] = true;
      --need;
    }
  }
  TokenSequence out;
  out.reserve(total);
  if (inserted_at != nullptr) inserted_at->clear();
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    if (slot[i]) {
      out.push_back(lexicon.flagged[rng.below(lexicon.flagged.size())]);
      if (inserted_at != nullptr) inserted_at->push_back(i);
    } else {
      out.push_back(x[src++]);
    }
  }
  return out;
}

AttackOutcome piggyback_edit(std::span<const TokenId> x, const SubstitutionTable& table,
                             std::size_t max_edits) {
  if (max_edits < 1) throw ParameterError("max_edits must be >= 1");
  AttackOutcome out;
  out.text.assign(x.begin(), x.end());
  std::size_t edits = 0;
  for (std::size_t i = 0; i < out.text.size() && edits < max_edits; ++i) {
    if (auto it = table.rules.find(out.text[i]); it != table.rules.end()) {
      out.text[i] = it->second;
      ++edits;
    }
  }
  out.noop = edits == 0;
  return out;
}

// ---------------------------------------------------------------------------
// Multi-key removal

AttackOutcome multikey_removal(const LanguageModel& model, std::span<const TokenId> prompt,
                               const KeySet& keys, const MultikeyRemovalParams& params,
                               std::size_t length, Rng& rng) {
  if (params.n_queries < 1) throw ParameterError("n_queries must be >= 1");
  if (model.vocab_size() != keys.vocab_size()) {
    throw ParameterError("model and key set vocabulary sizes differ");
  }
  AttackOutcome out;
  TokenSequence ctx(prompt.begin(), prompt.end());
  std::vector<TokenId> seen;
  std::vector<double> counts;
  for (std::size_t pos = 0; pos < length; ++pos) {
    const ProbDist base = model.next_dist(ctx);
    seen.clear();
    counts.clear();
    for (std::size_t q = 0; q < params.n_queries; ++q) {
      const Watermark& wm = keys.watermark(keys.size() == 1 ? 0 : rng.below(keys.size()));
      // A fresh session: the response so far is fed back as the prompt, so
      // an Exp session starts a new random shift here.
      const std::size_t shift = wm.shift_period() > 1 ? rng.below(wm.shift_period()) : 0;
      const TokenId t = wm.next_token(base, ctx, 0, shift, params.observation, rng);
      ++out.queries_generation;
      const auto it = std::find(seen.begin(), seen.end(), t);
      if (it == seen.end()) {
        seen.push_back(t);
        counts.push_back(1.0);
      } else {
        counts[static_cast<std::size_t>(it - seen.begin())] += 1.0;
      }
    }
    const TokenId next = seen[draw_weighted(counts, rng)];
    ctx.push_back(next);
    out.text.push_back(next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection-API attacks

namespace {

std::optional<double> try_query(DetectionOracle& oracle, std::span<const TokenId> x) {
  try {
    return oracle.query(x);
  } catch (const InsufficientLengthError&) {
    return std::nullopt;
  }
}

}  // namespace

AttackOutcome api_removal(GenerationApi& api, std::span<const TokenId> prompt,
                          DetectionOracle& oracle, const ApiRemovalParams& params,
                          std::size_t length, Rng& rng) {
  if (params.L < 1 || params.L > GenerationApi::kMaxTopL) {
    throw ParameterError("top-L must be in [1, 5]");
  }
  validate_gamma(params.gamma);
  const std::size_t gen0 = api.queries();
  const std::size_t det0 = oracle.queries();
  AttackOutcome out;
  TokenSequence ctx(prompt.begin(), prompt.end());
  TokenSequence trial;
  std::optional<double> current;
  const bool z_kind = oracle.kind() == ScoreKind::z_score;
  for (std::size_t pos = 0; pos < length; ++pos) {
    const TopL cands = api.top_l(ctx, params.L);
    TokenId pick = cands.front().token;
    std::optional<double> pick_score;
    if (cands.size() > 1) {
      trial = out.text;
      trial.push_back(0);
      std::vector<std::pair<std::size_t, double>> scored;  // candidate index, score
      bool unscorable = false;
      const bool skip_unlikely = !z_kind && current.value_or(1.0) > params.exp_skip_pvalue;
      for (std::size_t c = 0; c < cands.size(); ++c) {
        if (skip_unlikely && c > 0 && cands[c].prob < params.exp_skip_prob) continue;
        trial.back() = cands[c].token;
        const auto s = try_query(oracle, trial);
        if (!s) {
          unscorable = true;
          break;
        }
        scored.emplace_back(c, *s);
        if (z_kind && current && *s <= *current) break;
      }
      if (unscorable) {
        // Too short to score: follow the service's distribution.
        std::vector<double> w;
        for (const auto& e : cands) w.push_back(e.prob);
        pick = cands[draw_weighted(w, rng)].token;
      } else if (z_kind) {
        const double l = static_cast<double>(out.text.size() + 1);
        const double step = 1.0 / std::sqrt(params.gamma * (1.0 - params.gamma) * l);
        double zmin = scored.front().second;
        for (const auto& [c, s] : scored) zmin = std::min(zmin, s);
        std::vector<double> w;
        for (const auto& [c, s] : scored) {
          w.push_back(cands[c].prob * std::exp(-params.beta * (s - zmin) / step));
        }
        const auto& chosen = scored[draw_weighted(w, rng)];
        pick = cands[chosen.first].token;
        pick_score = chosen.second;
      } else {
        // Largest p-value; ties to the more probable candidate.
        const auto* best = &scored.front();
        for (const auto& e : scored) {
          if (e.second > best->second) best = &e;
        }
        pick = cands[best->first].token;
        pick_score = best->second;
      }
    }
    current = pick_score;
    ctx.push_back(pick);
    out.text.push_back(pick);
  }
  out.queries_generation = api.queries() - gen0;
  out.queries_detection = oracle.queries() - det0;
  return out;
}

AttackOutcome api_spoof(const LanguageModel& local, std::span<const TokenId> prompt,
                        DetectionOracle& oracle, const ApiSpoofParams& params,
                        std::size_t length) {
  if (params.L < 1) throw ParameterError("top-L must be >= 1");
  const std::size_t det0 = oracle.queries();
  AttackOutcome out;
  TokenSequence ctx(prompt.begin(), prompt.end());
  TokenSequence trial;
  for (std::size_t pos = 0; pos < length; ++pos) {
    const TopL cands = top_l(local, ctx, params.L);
    ++out.queries_generation;
    TokenId pick = cands.front().token;
    if (cands.size() > 1) {
      trial = out.text;
      trial.push_back(0);
      std::optional<double> best;
      for (const auto& cand : cands) {
        trial.back() = cand.token;
        const auto s = try_query(oracle, trial);
        if (!s) break;  // unscorable prefix: keep the local argmax
        if (!best || (*s != *best && more_extreme(oracle.kind(), *s, *best))) {
          best = s;
          pick = cand.token;
        }
      }
    }
    ctx.push_back(pick);
    out.text.push_back(pick);
  }
  out.queries_detection = oracle.queries() - det0;
  return out;
}

// ---------------------------------------------------------------------------
// Stealing

double StealResult::precision(const GreenList& truth) const {
  if (truth.vocab_size() != estimate.size()) throw DomainError("vocabulary size mismatch");
  std::size_t picked = 0, hit = 0;
  for (std::size_t t = 0; t < estimate.size(); ++t) {
    if (!estimate[t]) continue;
    ++picked;
    if (truth.contains(static_cast<TokenId>(t))) ++hit;
  }
  return picked == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(picked);
}

StealResult steal_greenlist(std::span<const ObservedSample> samples, const LanguageModel& base,
                            double gamma) {
  validate_gamma(gamma);
  const std::size_t V = base.vocab_size();
  std::vector<double> observed(V, 0.0), expected(V, 0.0);
  StealResult r;
  TokenSequence ctx;
  for (const auto& s : samples) {
    ctx.assign(s.prompt.begin(), s.prompt.end());
    for (TokenId t : s.response) {
      if (t >= V) throw DomainError("token id out of range");
      const ProbDist p = base.next_dist(ctx);
      for (std::size_t i = 0; i < V; ++i) expected[i] += p[i];
      observed[t] += 1.0;
      ctx.push_back(t);
      ++r.observed_tokens;
    }
  }
  r.scores.resize(V);
  for (std::size_t i = 0; i < V; ++i) r.scores[i] = (observed[i] + 1.0) / (expected[i] + 1.0);
  std::vector<TokenId> order(V);
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return r.scores[a] > r.scores[b]; });
  r.estimate.assign(V, false);
  const std::size_t k = green_list_size(V, gamma);
  for (std::size_t i = 0; i < k; ++i) r.estimate[order[i]] = true;
  r.low_confidence = r.observed_tokens < V;
  return r;
}

double steal_precision(const StealResult& result, const KeySet& keys) {
  if (keys.scheme() != Scheme::unigram) {
    throw ParameterError("precision against a global green list needs the unigram scheme");
  }
  double best = 0.0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& wm = dynamic_cast<const UnigramWatermark&>(keys.watermark(i));
    best = std::max(best, result.precision(wm.green_list()));
  }
  return best;
}

}  // namespace wmlab
