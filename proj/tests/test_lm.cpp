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


#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "wmlab/lm.hpp"

using namespace wmlab;

namespace {

struct AbModel {
  Vocabulary vocab = Vocabulary::from_corpus("a b a b a b");
  TokenSequence corpus = vocab.encode("a b a b a b");
  MarkovModel model(double alpha) const { return train_markov(vocab, corpus, 1, alpha); }
};

}  // namespace

TEST_CASE("vocabulary from corpus ranks by frequency and keeps an unknown token") {
  const Vocabulary v = Vocabulary::from_corpus("b a a c");
  CHECK(v.size() == 4);
  CHECK(v.surface(0) == "a");
  CHECK(v.surface(1) == "b");
  CHECK(v.surface(2) == "c");
  CHECK(v.encode("a zebra") == TokenSequence{0, *v.unk_id()});
  CHECK(v.decode(v.encode("c b a")) == "c b a");
  CHECK_THROWS(v.surface(99));
  const Vocabulary s = Vocabulary::synthetic(16);
  CHECK(s.size() == 16);
  CHECK(s.decode(s.encode("w3 w15")) == "w3 w15");
}

TEST_CASE("markov counts give the smoothed ratios computed by hand") {
  AbModel ab;
  const double alpha = 0.1;
  const MarkovModel m = ab.model(alpha);
  const TokenId a = *ab.vocab.lookup("a"), b = *ab.vocab.lookup("b");
  const double V = 3.0;  // a, b, <unk>
  // Transitions: start->a once, a->b three times, b->a twice.
  const TokenSequence ctx_a = {a};
  const ProbDist pa = m.next_dist(ctx_a);
  CHECK(pa[b] == doctest::Approx((3 + alpha) / (3 + alpha * V)));
  CHECK(pa[a] == doctest::Approx(alpha / (3 + alpha * V)));
  const TokenSequence ctx_b = {b};
  CHECK(m.next_dist(ctx_b)[a] == doctest::Approx((2 + alpha) / (2 + alpha * V)));
  CHECK(argmax(pa) == b);
  // alpha -> 0+ makes P(b | a) -> 1.
  CHECK(ab.model(1e-9).next_dist(ctx_a)[b] > 1.0 - 1e-8);
}

TEST_CASE("pseudo-perplexity equals a hand-rolled likelihood") {
  AbModel ab;
  const double alpha = 0.5, V = 3.0;
  const MarkovModel m = ab.model(alpha);
  const TokenSequence x = ab.vocab.encode("a b a b");
  const double p_start_a = (1 + alpha) / (1 + alpha * V);
  const double p_ab = (3 + alpha) / (3 + alpha * V);
  const double p_ba = (2 + alpha) / (2 + alpha * V);
  const double nll = -(std::log(p_start_a) + 2 * std::log(p_ab) + std::log(p_ba));
  CHECK(pseudo_perplexity(m, x) == doctest::Approx(std::exp(nll / 4)));
  CHECK_THROWS_AS(pseudo_perplexity(m, TokenSequence{}), ParameterError);
}

TEST_CASE("markov training rejects bad input") {
  AbModel ab;
  CHECK_THROWS_AS(train_markov(ab.vocab, ab.corpus, 0, 0.1), ParameterError);
  CHECK_THROWS_AS(train_markov(ab.vocab, ab.corpus, 1, 0.0), ParameterError);
  CHECK_THROWS_AS(train_markov(ab.vocab, TokenSequence{}, 1, 0.1), TrainingError);
  const TokenSequence bad = {0, 7};
  CHECK_THROWS(train_markov(ab.vocab, bad, 1, 0.1));
}

TEST_CASE("unseen contexts fall back to uniform") {
  AbModel ab;
  const MarkovModel m = ab.model(0.1);
  const TokenSequence unk = {*ab.vocab.unk_id()};
  const ProbDist p = m.next_dist(unk);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("markov model save and load round trip") {
  AbModel ab;
  const MarkovModel m = ab.model(0.2);
  const auto path = std::filesystem::temp_directory_path() / "wmlab_test_model.json";
  m.save(path);
  const MarkovModel back = MarkovModel::load(path);
  CHECK(back.order() == 1);
  CHECK(back.alpha() == 0.2);
  CHECK(back.vocab().size() == m.vocab().size());
  for (TokenId t = 0; t < 3; ++t) {
    const TokenSequence ctx = {t};
    const ProbDist p = m.next_dist(ctx), q = back.next_dist(ctx);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == q[i]);
  }
  std::filesystem::remove(path);
  CHECK_THROWS(MarkovModel::load(path));
}

TEST_CASE("top-l ordering and ties") {
  const ProbDist p({0.1, 0.3, 0.3, 0.2, 0.1});
  const TopL t = top_l(p, 3);
  REQUIRE(t.size() == 3);
  CHECK(t[0].token == 1);
  CHECK(t[1].token == 2);
  CHECK(t[2].token == 3);
  CHECK_THROWS_AS(top_l(p, 0), ParameterError);
  CHECK_THROWS_AS(top_l(p, 6), ParameterError);
}

TEST_CASE("generation is deterministic under a seed") {
  const ToyWorld& w = default_toy_world();
  Rng r1(3), r2(3);
  const TokenSequence p = w.prompt(r1);
  CHECK(p == w.prompt(r2));
  CHECK(p.size() == w.config.prompt_length);
  const TokenSequence a = generate(*w.generator, p, 50, r1);
  const TokenSequence b = generate(*w.generator, p, 50, r2);
  CHECK(a == b);
  CHECK(a.size() == 50);
}

TEST_CASE("toy world models are informative but not degenerate") {
  const ToyWorld& w = default_toy_world();
  Rng rng(11);
  double ppl = 0.0, ent = 0.0;
  for (int i = 0; i < 10; ++i) {
    const TokenSequence p = w.prompt(rng);
    const TokenSequence x = generate(*w.generator, p, 200, rng);
    ppl += pseudo_perplexity(*w.evaluator, x, p);
    ent += mean_entropy(*w.generator, x, p);
  }
  const double uniform = std::log(static_cast<double>(w.vocab().size()));
  CHECK(ent / 10 < uniform - 1.0);
  CHECK(ent / 10 > 1.0);
  CHECK(ppl / 10 < w.vocab().size() / 4.0);
}

TEST_CASE("synthetic model is keyed and validated") {
  const Vocabulary v = Vocabulary::synthetic(32);
  const SyntheticModel a(v, WatermarkKey::derive("s", 0), 0.7);
  const SyntheticModel b(v, WatermarkKey::derive("s", 1), 0.7);
  const TokenSequence ctx = {3};
  const ProbDist pa = a.next_dist(ctx), pb = b.next_dist(ctx);
  double diff = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) diff += std::abs(pa[i] - pb[i]);
  CHECK(diff > 0.1);
  CHECK_THROWS_AS(SyntheticModel(v, WatermarkKey::derive("s"), 0.0), ParameterError);
}
