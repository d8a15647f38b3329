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

#include "wmlab/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include "json.hpp"

namespace wmlab {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// MarkovModel

MarkovModel::MarkovModel(Vocabulary vocab, int order, double alpha)
    : vocab_(std::move(vocab)), order_(order), alpha_(alpha) {
  if (order_ < 1) throw ParameterError("Markov order must be >= 1");
  if (!(alpha_ > 0.0) || !std::isfinite(alpha_)) throw ParameterError("alpha must be > 0");
}

std::string MarkovModel::context_key(std::span<const TokenId> context) const {
  std::string key(static_cast<std::size_t>(order_) * 4, '\0');
  for (int i = 0; i < order_; ++i) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(context.size()) - order_ + i;
    const TokenId t = src >= 0 ? context[static_cast<std::size_t>(src)] : kStartOfText;
    for (int b = 0; b < 4; ++b) key[4 * i + b] = static_cast<char>((t >> (8 * b)) & 0xFF);
  }
  return key;
}

ProbDist MarkovModel::next_dist(std::span<const TokenId> context) const {
  vocab_.validate(context);
  const double v = static_cast<double>(vocab_.size());
  auto it = table_.find(context_key(context));
  if (it == table_.end()) return ProbDist::uniform(vocab_.size());
  const auto& cc = it->second;
  const double denom = static_cast<double>(cc.total) + alpha_ * v;
  std::vector<double> p(vocab_.size(), alpha_ / denom);
  for (const auto& [tok, n] : cc.counts) p[tok] = (static_cast<double>(n) + alpha_) / denom;
  return ProbDist::normalized(std::move(p));
}

void MarkovModel::add_document(std::span<const TokenId> tokens) {
  vocab_.validate(tokens);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto& cc = table_[context_key(tokens.first(i))];
    auto pos = std::lower_bound(cc.counts.begin(), cc.counts.end(), tokens[i],
                                [](const auto& e, TokenId t) { return e.first < t; });
    if (pos != cc.counts.end() && pos->first == tokens[i]) {
      ++pos->second;
    } else {
      cc.counts.insert(pos, {tokens[i], 1u});
    }
    ++cc.total;
  }
}

void MarkovModel::save(const std::filesystem::path& path) const {
  json doc;
  doc["format"] = "wmlab-markov";
  doc["format_version"] = kFormatVersion;
  doc["order"] = order_;
  doc["alpha"] = alpha_;
  doc["vocab"] = std::vector<std::string>(vocab_.surfaces().begin(), vocab_.surfaces().end());
  if (vocab_.unk_id()) doc["unk_id"] = *vocab_.unk_id();
  // Sorted for byte-stable output.
  std::map<std::string, const ContextCounts*> ordered;
  for (const auto& [k, v] : table_) ordered.emplace(k, &v);
  json contexts = json::array();
  for (const auto& [k, cc] : ordered) {
    json ctx = json::array();
    for (int i = 0; i < order_; ++i) {
      TokenId t = 0;
      for (int b = 0; b < 4; ++b) {
        t |= static_cast<TokenId>(static_cast<unsigned char>(k[4 * i + b])) << (8 * b);
      }
      ctx.push_back(t == kStartOfText ? json(nullptr) : json(t));
    }
    json counts = json::array();
    for (const auto& [tok, n] : cc->counts) counts.push_back({tok, n});
    contexts.push_back({{"context", ctx}, {"counts", counts}});
  }
  doc["contexts"] = std::move(contexts);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump() << '\n';
}

MarkovModel MarkovModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  if (doc.value("format", "") != "wmlab-markov") throw FormatError("not a wmlab Markov model");
  if (doc.value("format_version", -1) != kFormatVersion) {
    throw FormatError("unsupported Markov model format version");
  }
  try {
    std::optional<TokenId> unk;
    if (doc.contains("unk_id")) unk = doc["unk_id"].get<TokenId>();
    MarkovModel m(Vocabulary(doc["vocab"].get<std::vector<std::string>>(), unk),
                  doc["order"].get<int>(), doc["alpha"].get<double>());
    for (const auto& c : doc["contexts"]) {
      std::vector<TokenId> ctx;
      for (const auto& t : c["context"]) ctx.push_back(t.is_null() ? kStartOfText : t.get<TokenId>());
      if (ctx.size() != static_cast<std::size_t>(m.order_)) throw FormatError("context width mismatch");
      std::string key(ctx.size() * 4, '\0');
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        for (int b = 0; b < 4; ++b) key[4 * i + b] = static_cast<char>((ctx[i] >> (8 * b)) & 0xFF);
      }
      ContextCounts cc;
      for (const auto& e : c["counts"]) {
        const auto tok = e[0].get<TokenId>();
        if (!m.vocab_.valid(tok)) throw FormatError("count for out-of-range token");
        cc.counts.emplace_back(tok, e[1].get<std::uint32_t>());
        cc.total += cc.counts.back().second;
      }
      std::sort(cc.counts.begin(), cc.counts.end());
      m.table_.emplace(std::move(key), std::move(cc));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed Markov model: ") + e.what());
  }
}

MarkovModel train_markov(const Vocabulary& vocab, std::span<const TokenSequence> documents,
                         int order, double alpha) {
  MarkovModel model(vocab, order, alpha);
  std::size_t total = 0;
  for (const auto& d : documents) total += d.size();
  if (total == 0) throw TrainingError("training corpus is empty");
  if (total <= static_cast<std::size_t>(order)) {
    throw TrainingError("training corpus must be longer than the model order");
  }
  for (const auto& d : documents) model.add_document(d);
  return model;
}

MarkovModel train_markov(const Vocabulary& vocab, std::span<const TokenId> corpus, int order,
                         double alpha) {
  const TokenSequence doc(corpus.begin(), corpus.end());
  return train_markov(vocab, std::span<const TokenSequence>(&doc, 1), order, alpha);
}

// ---------------------------------------------------------------------------
// SyntheticModel

SyntheticModel::SyntheticModel(Vocabulary vocab, WatermarkKey seed, double concentration,
                               int context_width)
    : vocab_(std::move(vocab)),
      seed_(std::move(seed)),
      concentration_(concentration),
      context_width_(context_width) {
  if (!(concentration_ > 0.0) || !std::isfinite(concentration_)) {
    throw ParameterError("concentration must be > 0");
  }
  if (context_width_ < 0) throw ParameterError("context width must be >= 0");
}

ProbDist SyntheticModel::compute(std::span<const TokenId> window) const {
  PrgStream prg(prf(seed_, encode_tokens(window)));
  std::vector<double> logits(vocab_.size());
  for (double& l : logits) {
    // 1 - u lies in (0,1]; a zero draw yields -inf, an impossible token.
    const double u = 1.0 - prg.next();
    l = -std::log(-std::log(u)) / concentration_;
  }
  return softmax(Logits(std::move(logits)));
}

ProbDist SyntheticModel::next_dist(std::span<const TokenId> context) const {
  vocab_.validate(context);
  std::vector<TokenId> window(static_cast<std::size_t>(context_width_), kStartOfText);
  const std::size_t take = std::min(window.size(), context.size());
  std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(),
            window.end() - static_cast<std::ptrdiff_t>(take));
  const auto bytes = encode_tokens(window);
  std::string key(bytes.begin(), bytes.end());
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return *it->second;
  }
  auto dist = std::make_shared<const ProbDist>(compute(window));
  std::lock_guard lock(cache_mutex_);
  if (cache_.size() < kCacheLimit) cache_.emplace(std::move(key), dist);
  return *dist;
}

// ---------------------------------------------------------------------------
// Queries

TopL top_l(const ProbDist& p, std::size_t L) {
  if (L < 1 || L > p.size()) throw ParameterError("L must lie in [1, |V|]");
  std::vector<TokenId> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<TokenId>(i);
  auto better = [&p](TokenId a, TokenId b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(L), idx.end(), better);
  TopL out;
  out.reserve(L);
  for (std::size_t i = 0; i < L; ++i) out.push_back({idx[i], p[idx[i]]});
  return out;
}

TopL top_l(const LanguageModel& model, std::span<const TokenId> context, std::size_t L) {
  return top_l(model.next_dist(context), L);
}

TokenId argmax(const ProbDist& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId sample(const LanguageModel& model, std::span<const TokenId> context, Rng& rng) {
  return sample_from(model.next_dist(context), rng.uniform());
}

TokenId sample(const LanguageModel& model, std::span<const TokenId> context,
               std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return sample(model, context, rng);
}

TokenSequence generate(const LanguageModel& model, std::span<const TokenId> prompt,
                       std::size_t length, Rng& rng) {
  TokenSequence ctx(prompt.begin(), prompt.end());
  TokenSequence out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const TokenId t = sample(model, ctx, rng);
    ctx.push_back(t);
    out.push_back(t);
  }
  return out;
}

double pseudo_perplexity(const LanguageModel& model, std::span<const TokenId> x,
                         std::span<const TokenId> prompt) {
  if (x.empty()) throw ParameterError("perplexity of an empty sequence is undefined");
  TokenSequence ctx(prompt.begin(), prompt.end());
  double nll = 0.0;
  for (TokenId t : x) {
    const ProbDist p = model.next_dist(ctx);
    if (t >= p.size()) throw DomainError("token out of range");
    if (p[t] <= 0.0) return std::numeric_limits<double>::infinity();
    nll -= std::log(p[t]);
    ctx.push_back(t);
  }
  return std::exp(nll / static_cast<double>(x.size()));
}

double mean_entropy(const LanguageModel& model, std::span<const TokenId> x,
                    std::span<const TokenId> prompt) {
  if (x.empty()) return 0.0;
  TokenSequence ctx(prompt.begin(), prompt.end());
  double h = 0.0;
  for (TokenId t : x) {
    h += model.next_dist(ctx).entropy();
    ctx.push_back(t);
  }
  return h / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Toy world

TokenSequence ToyWorld::prompt(Rng& rng) const { return generate(*teacher, {}, config.prompt_length, rng); }

ToyWorld build_toy_world(const ToyWorldConfig& config) {
  ToyWorld w;
  w.config = config;
  Vocabulary vocab = Vocabulary::synthetic(config.vocab_size);
  w.teacher = std::make_shared<SyntheticModel>(
      vocab, WatermarkKey::derive("toy-teacher", config.seed), config.teacher_concentration, 1);
  auto corpus = [&](std::uint64_t stream) {
    Rng rng(derive_seed(config.seed, stream));
    std::vector<TokenSequence> docs;
    docs.reserve(config.documents);
    for (std::size_t d = 0; d < config.documents; ++d) {
      docs.push_back(generate(*w.teacher, {}, config.document_length, rng));
    }
    return docs;
  };
  const auto train_docs = corpus(1);
  const auto heldout_docs = corpus(2);
  w.generator = std::make_shared<MarkovModel>(
      train_markov(vocab, train_docs, config.order, config.alpha));
  w.evaluator = std::make_shared<MarkovModel>(
      train_markov(vocab, heldout_docs, config.order, config.alpha));
  return w;
}

const ToyWorld& default_toy_world() {
  static const ToyWorld world = build_toy_world();
  return world;
}

}  // namespace wmlab
