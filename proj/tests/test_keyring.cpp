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
#include "wmlab/keyring.hpp"

using namespace wmlab;

namespace {

constexpr std::size_t kV = 1024;

SchemeConfig scheme(Scheme s) {
  SchemeConfig c;
  c.scheme = s;
  return c;
}

}  // namespace

TEST_CASE("key sets reject duplicates and mismatched vocabularies") {
  const auto a = WatermarkKey::derive("ks", 0);
  CHECK_THROWS_AS(KeySet(scheme(Scheme::kgw), {a, a}, kV), InvalidKeyError);
  CHECK_THROWS_AS(KeySet(scheme(Scheme::kgw), {}, kV), ParameterError);
  const KeySet ks = KeySet::derive(scheme(Scheme::kgw), "ks", 5, kV);
  CHECK(ks.size() == 5);
  CHECK(ks.key(3) == WatermarkKey::derive("ks", 3));
  const KeySet p = ks.prefix(3);
  CHECK(p.size() == 3);
  CHECK(p.key(2) == ks.key(2));
  CHECK_THROWS(ks.prefix(0));
  CHECK_THROWS(ks.prefix(6));
}

TEST_CASE("normal quantile thresholds") {
  // Independent values from scipy.stats.norm.ppf.
  CHECK(union_bound_z(1e-3, 1) == doctest::Approx(3.090232306167813).epsilon(1e-9));
  CHECK(union_bound_z(1e-3, 7) == doctest::Approx(3.6279195210718687).epsilon(1e-9));
  CHECK(union_bound_z(1e-3, 7) == doctest::Approx(3.63).epsilon(1e-3));
}

TEST_CASE("calibration allows the binomial number of exceedances") {
  // N = 10^4, target 1e-3: the largest k with BinomCDF(k) <= 0.05 is 4
  // (scipy.stats.binom).
  std::vector<double> scores(10000);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i);
  const ThresholdTable t = calibrate_from_scores(scores, ScoreKind::z_score, 3, 1e-3);
  CHECK(t.per_key_threshold == doctest::Approx(9995.5));
  CHECK(t.warnings.empty());
  std::size_t exceed = 0;
  for (double s : scores) exceed += s >= t.per_key_threshold ? 1 : 0;
  CHECK(exceed == 4);

  // p-values: small is extreme.
  std::vector<double> ps(10000);
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i] = (i + 1) / 10001.0;
  const ThresholdTable tp = calibrate_from_scores(ps, ScoreKind::p_value, 3, 1e-3);
  std::size_t pexceed = 0;
  for (double s : ps) pexceed += s <= tp.per_key_threshold ? 1 : 0;
  CHECK(pexceed == 4);

  // Too few samples: union bound with a warning.
  const ThresholdTable small = calibrate_from_scores({1.0, 2.0}, ScoreKind::z_score, 7, 1e-3);
  CHECK(small.per_key_threshold == doctest::Approx(union_bound_z(1e-3, 7)));
  CHECK(!small.warnings.empty());
  const ThresholdTable smallp = calibrate_from_scores({0.5}, ScoreKind::p_value, 4, 1e-3);
  CHECK(smallp.per_key_threshold == doctest::Approx(2.5e-4));
}

TEST_CASE("multi-key detection") {
  const KeySet one = KeySet::derive(scheme(Scheme::unigram), "dm", 1, kV);
  TokenSequence x(50);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<TokenId>(i * 7);
  CHECK(detect_multi(x, one) == one.watermark(0).detect(x));

  const KeySet three = KeySet::derive(scheme(Scheme::unigram), "dm", 3, kV);
  ThresholdTable t;
  t.per_key_threshold = 1.5;
  t.keys = 3;
  const DetectionReport r = detect_multi(x, three, &t);
  REQUIRE(r.per_key.size() == 3);
  std::size_t best = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.per_key[i] == three.watermark(i).detect(x).value);
    if (r.per_key[i] > r.per_key[best]) best = i;
  }
  CHECK(r.best_key == best);
  CHECK(r.value == r.per_key[best]);
  CHECK(r.threshold == 1.5);
  CHECK(r.verdict == (r.value >= 1.5));

  // A token green under keys 0 and 1 gives equal scores; the lower index wins.
  const auto& g0 = dynamic_cast<const UnigramWatermark&>(three.watermark(0)).green_list();
  const auto& g1 = dynamic_cast<const UnigramWatermark&>(three.watermark(1)).green_list();
  TokenId both = 0;
  while (!(g0.contains(both) && g1.contains(both))) ++both;
  const TokenSequence y(30, both);
  const DetectionReport rt = detect_multi(y, three);
  CHECK(rt.per_key[0] == rt.per_key[1]);
  CHECK(rt.best_key == 0);
}

TEST_CASE("responses pick keys uniformly") {
  const KeySet ks = KeySet::derive(scheme(Scheme::kgw), "uni", 7, kV);
  const ToyWorld& w = default_toy_world();
  Rng rng(4);
  std::vector<std::size_t> used(7);
  const TokenSequence prompt = {1, 2};
  for (int i = 0; i < 10000; ++i) ++used[embed_with_keyset(*w.generator, prompt, ks, 1, rng).second];
  for (auto u : used) CHECK(std::abs(u / 1e4 - 1.0 / 7) < 0.02);
}

TEST_CASE("keyring json round trip") {
  const KeySet ks = KeySet::derive(scheme(Scheme::exp), "json", 2, 64);
  ThresholdTable t;
  t.kind = ScoreKind::p_value;
  t.per_key_threshold = 0.01;
  t.keys = 2;
  t.warnings = {"w"};
  const auto noise = WatermarkKey::derive("noise");
  const KeyringFile f = keyring_from_json(keyring_to_json(ks, &t, &noise));
  CHECK(f.keys.size() == 2);
  CHECK(f.keys.key(1) == ks.key(1));
  CHECK(f.keys.config().scheme == Scheme::exp);
  CHECK(f.keys.config().exp.key_length == ks.config().exp.key_length);
  REQUIRE(f.thresholds);
  CHECK(*f.thresholds == t);
  CHECK(f.noise_key == noise);

  const auto path = std::filesystem::temp_directory_path() / "wmlab_test_keyring.json";
  save_keyring(path, ks);
  const KeyringFile g = load_keyring(path);
  CHECK(!g.thresholds);
  CHECK(!g.noise_key);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(keyring_from_json("{"), FormatError);
  CHECK_THROWS_AS(keyring_from_json(R"({"format":"other"})"), FormatError);
  ThresholdTable wrong;
  const std::string mismatched = keyring_to_json(ks, &wrong);
  CHECK_THROWS_AS(keyring_from_json(mismatched), FormatError);
}

TEST_CASE("calibrated thresholds control the false positive rate on held-out nulls") {
  const ToyWorld& w = default_toy_world();
  const KeySet ks = KeySet::derive(scheme(Scheme::unigram), "cal", 3, w.vocab().size());
  const auto sampler = [&](std::size_t offset) {
    return [&w, offset](std::size_t i) {
      Rng rng(derive_seed(offset, i));
      const TokenSequence p = w.prompt(rng);
      return generate(*w.generator, p, 50, rng);
    };
  };
  const ThresholdTable t = calibrate_thresholds(ks, sampler(1), 1e-2, 2000);
  CHECK(t.warnings.empty());
  CHECK(t.calibration_exceedances <= 20);
  std::size_t fp = 0;
  const auto holdout = sampler(2);
  for (std::size_t i = 0; i < 2000; ++i) fp += detect_multi(holdout(i), ks, &t).verdict ? 1 : 0;
  // Target 1e-2 on 2000 draws: mean 20, allow sampling noise.
  CHECK(fp <= 35);
}
