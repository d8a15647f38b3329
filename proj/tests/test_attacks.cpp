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


#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "wmlab/attacks.hpp"

using namespace wmlab;

namespace {

// Context-free model: token 0 is the base argmax, 1..3 are close competitors
// that a green bias of 2 promotes above it, the rest share a sliver of mass.
class CompetitorModel final : public LanguageModel {
 public:
  CompetitorModel() : vocab_(Vocabulary::synthetic(64)) {
    std::vector<double> p(64, 0.03 / 60);
    p[0] = 0.25;
    p[1] = p[2] = p[3] = 0.24;
    dist_ = ProbDist::normalized(std::move(p));
  }
  const Vocabulary& vocab() const override { return vocab_; }
  ProbDist next_dist(std::span<const TokenId>) const override { return dist_; }

 private:
  Vocabulary vocab_;
  ProbDist dist_;
};

SchemeConfig scheme(Scheme s) {
  SchemeConfig c;
  c.scheme = s;
  return c;
}

}  // namespace

TEST_CASE("insertion budget follows the expected-z law") {
  // s_max = floor(l (z^2 - T^2) / T^2), 0 below the threshold.
  CHECK(max_insertable(8.0, 200, 4.0) == 600);
  CHECK(max_insertable(5.0, 100, 4.0) == 56);
  CHECK(max_insertable(4.0, 100, 4.0) == 0);
  CHECK(max_insertable(3.0, 100, 4.0) == 0);
  CHECK_THROWS_AS(max_insertable(3.0, 100, 0.0), ParameterError);
}

TEST_CASE("random insertion keeps the original text as a subsequence") {
  Rng rng(1);
  const Lexicon lex("toxic", {900, 901, 902}, 1024);
  TokenSequence x(40);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<TokenId>(i);
  std::vector<std::size_t> at;
  const TokenSequence y = piggyback_insert(x, lex, 15, rng, &at);
  REQUIRE(y.size() == 55);
  REQUIRE(at.size() == 15);
  TokenSequence rest;
  for (std::size_t i = 0, k = 0; i < y.size(); ++i) {
    if (k < at.size() && at[k] == i) {
      CHECK(lex.contains(y[i]));
      ++k;
    } else {
      rest.push_back(y[i]);
    }
  }
  CHECK(rest == x);
  CHECK(lex.flagged_fraction(y) == doctest::Approx(15.0 / 55));
  CHECK(piggyback_insert(x, lex, 0, rng) == x);
}

TEST_CASE("insertion slots are uniform") {
  Rng rng(2);
  const Lexicon lex("l", {5}, 16);
  const TokenSequence x(4, 1);
  std::vector<std::size_t> hits(6);
  std::vector<std::size_t> at;
  for (int t = 0; t < 30000; ++t) {
    piggyback_insert(x, lex, 2, rng, &at);
    for (auto i : at) ++hits[i];
  }
  // Each of 6 slots is chosen with probability 2/6.
  for (auto h : hits) CHECK(std::abs(h / 30000.0 - 1.0 / 3) < 0.015);
}

TEST_CASE("substitution edits the earliest matches") {
  const SubstitutionTable table({{3, 30}, {5, 50}});
  const TokenSequence x = {1, 3, 5, 3, 5, 3};
  const AttackOutcome o = piggyback_edit(x, table, 3);
  CHECK(o.text == TokenSequence{1, 30, 50, 30, 5, 3});
  CHECK(!o.noop);
  const AttackOutcome none = piggyback_edit(TokenSequence{1, 2}, table);
  CHECK(none.noop);
  CHECK(none.text == TokenSequence{1, 2});
  CHECK_THROWS_AS(piggyback_edit(x, table, 0), ParameterError);
}

TEST_CASE("substitution spoofing keeps most kgw texts detected") {
  const ToyWorld& w = default_toy_world();
  const auto wm = make_watermark(scheme(Scheme::kgw), WatermarkKey::derive("edit"),
                                 w.vocab().size());
  Rng rng(3);
  const auto table = SubstitutionTable::random(w.vocab().size(), 512, rng);
  std::size_t kept = 0, trials = 60;
  for (std::size_t t = 0; t < trials; ++t) {
    const TokenSequence p = w.prompt(rng);
    const TokenSequence x = wm->generate(*w.generator, p, 200, rng);
    kept += wm->detect(piggyback_edit(x, table, 3).text).value >= 4.0 ? 1 : 0;
  }
  CHECK(kept >= 54);
}

TEST_CASE("oracles count queries") {
  const KeySet ks = KeySet::derive(scheme(Scheme::unigram), "q", 1, 64);
  DetectionOracle o = DetectionOracle::exact(std::make_shared<const KeySet>(ks));
  CHECK(o.queries() == 0);
  o.query(TokenSequence{1, 2, 3});
  o.query(TokenSequence{1});
  CHECK(o.queries() == 2);
  GenerationApi api(std::make_shared<CompetitorModel>(), ks.watermark_ptr(0));
  const TopL t = api.top_l(TokenSequence{1}, 5);
  CHECK(t.size() == 5);
  CHECK(api.queries() == 1);
  CHECK_THROWS_AS(api.top_l(TokenSequence{1}, 6), ParameterError);
}

TEST_CASE("histogram sampling recovers the argmax at the single-observation rate") {
  // Each output is a uniformly chosen observation, so P(argmax) equals the
  // chance one greedy watermarked pick is token 0: token 0 green, or all of
  // tokens 0..3 red. With a 32-of-64 green list the latter is hypergeometric.
  const double all_red = (32.0 / 64) * (31.0 / 63) * (30.0 / 62) * (29.0 / 61);
  const double expected = 0.5 + all_red;
  const CompetitorModel model;
  Rng rng(9);
  const std::size_t trials = 3000;
  std::size_t recovered = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const KeySet ks = KeySet::derive(scheme(Scheme::kgw), "competitor-" + std::to_string(t), 13, 64);
    MultikeyRemovalParams p;
    p.n_queries = 13;
    const AttackOutcome o = multikey_removal(model, TokenSequence{7}, ks, p, 1, rng);
    recovered += o.text[0] == 0 ? 1 : 0;
    CHECK(o.queries_generation == 13);
  }
  CHECK(std::abs(static_cast<double>(recovered) / trials - expected) < 0.03);
}

TEST_CASE("multikey removal with one key behaves like watermarked greedy decoding") {
  const ToyWorld& w = default_toy_world();
  const KeySet ks = KeySet::derive(scheme(Scheme::kgw), "mk1", 1, w.vocab().size());
  Rng a(4), b(4);
  const TokenSequence p = {1, 2, 3};
  MultikeyRemovalParams params;
  params.n_queries = 1;
  const AttackOutcome o = multikey_removal(*w.generator, p, ks, params, 60, a);
  const TokenSequence g = ks.watermark(0).generate(*w.generator, p, 60, b, Decoding::greedy);
  CHECK(o.text == g);
  CHECK(o.queries_generation == 60);
}

TEST_CASE("multikey removal defeats a large key set") {
  const ToyWorld& w = default_toy_world();
  const KeySet ks = KeySet::derive(scheme(Scheme::kgw), "mk13", 13, w.vocab().size());
  ThresholdTable t;
  t.keys = 13;
  t.per_key_threshold = union_bound_z(1e-3, 13);
  Rng rng(5);
  std::size_t removed = 0;
  for (int i = 0; i < 8; ++i) {
    const TokenSequence p = w.prompt(rng);
    const AttackOutcome o = multikey_removal(*w.generator, p, ks, {}, 200, rng);
    removed += detect_multi(o.text, ks, &t).verdict ? 0 : 1;
  }
  CHECK(removed >= 6);
}

TEST_CASE("api attacks succeed on kgw with few queries") {
  const ToyWorld& w = default_toy_world();
  const auto ks = std::make_shared<const KeySet>(
      KeySet::derive(scheme(Scheme::kgw), "api", 1, w.vocab().size()));
  Rng rng(6);
  std::size_t removed = 0, spoofed = 0, q_removal = 0, q_spoof = 0;
  const int trials = 6;
  for (int i = 0; i < trials; ++i) {
    const TokenSequence p = w.prompt(rng);
    GenerationApi api(w.generator, ks->watermark_ptr(0));
    DetectionOracle o1 = DetectionOracle::exact(ks);
    const AttackOutcome r = api_removal(api, p, o1, {}, 200, rng);
    CHECK(r.text.size() == 200);
    removed += detect_multi(r.text, *ks).verdict ? 0 : 1;
    q_removal += r.queries_detection;
    DetectionOracle o2 = DetectionOracle::exact(ks);
    const AttackOutcome s = api_spoof(*w.evaluator, p, o2, {}, 200);
    spoofed += detect_multi(s.text, *ks).verdict ? 1 : 0;
    q_spoof += s.queries_detection;
    CHECK(s.queries_detection == o2.queries());
  }
  CHECK(removed == trials);
  CHECK(spoofed == trials);
  CHECK(q_removal <= 4u * 200 * trials);
  CHECK(q_spoof <= 4u * 200 * trials);
}

TEST_CASE("stealing recovers a single global green list") {
  const ToyWorld& w = default_toy_world();
  const KeySet ks = KeySet::derive(scheme(Scheme::unigram), "steal", 1, w.vocab().size());
  Rng rng(7);
  std::vector<ObservedSample> obs;
  std::size_t tokens = 0;
  while (tokens < 100000) {
    TokenSequence p = w.prompt(rng);
    TokenSequence r = ks.watermark(0).generate(*w.generator, p, 200, rng);
    tokens += r.size();
    obs.push_back({std::move(p), std::move(r)});
  }
  const StealResult st = steal_greenlist(obs, *w.generator, 0.5);
  CHECK(st.observed_tokens == tokens);
  CHECK(!st.low_confidence);
  CHECK(steal_precision(st, ks) >= 0.9);
  const KeySet kgw = KeySet::derive(scheme(Scheme::kgw), "steal", 1, w.vocab().size());
  CHECK_THROWS_AS(steal_precision(st, kgw), ParameterError);
}

TEST_CASE("lexicons and substitution tables load from word lists") {
  const Vocabulary v = Vocabulary::from_corpus("alpha beta gamma delta");
  const auto dir = std::filesystem::temp_directory_path();
  {
    std::ofstream f(dir / "wmlab_lex.txt");
    f << "beta\n# comment\ndelta\n";
    std::ofstream g(dir / "wmlab_subs.txt");
    g << "alpha beta\n";
  }
  const Lexicon lex = Lexicon::load(dir / "wmlab_lex.txt", v);
  CHECK(lex.contains(*v.lookup("beta")));
  CHECK(lex.contains(*v.lookup("delta")));
  CHECK(!lex.contains(*v.lookup("alpha")));
  const SubstitutionTable t = SubstitutionTable::load(dir / "wmlab_subs.txt", v);
  CHECK(t.rules.at(*v.lookup("alpha")) == *v.lookup("beta"));
  std::filesystem::remove(dir / "wmlab_lex.txt");
  std::filesystem::remove(dir / "wmlab_subs.txt");
}
