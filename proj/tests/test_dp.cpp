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

#include <boost/math/distributions/normal.hpp>

#include "doctest.h"
#include "wmlab/dp_defense.hpp"

using namespace wmlab;

namespace {

SchemeConfig kgw_config() { return SchemeConfig{}; }

}  // namespace

TEST_CASE("sensitivity formula") {
  CHECK(sensitivity(200, 1, 0.5) == doctest::Approx(2.0 / std::sqrt(50.0)));
  CHECK(sensitivity(100, 0, 0.25) == doctest::Approx(1.0 / std::sqrt(18.75)));
  CHECK_THROWS_AS(sensitivity(0, 1, 0.5), ParameterError);
  CHECK_THROWS_AS(sensitivity(10, 1, 1.0), ParameterError);
}

TEST_CASE("one substitution moves the kgw score by at most the sensitivity") {
  // Exhaustive over every position and every replacement token.
  const std::size_t V = 1024;
  const KgwWatermark wm(WatermarkKey::derive("sens"), {}, V);
  Rng rng(1);
  TokenSequence x(100);
  for (auto& t : x) t = static_cast<TokenId>(rng.below(V));
  const DetectionReport base = wm.detect(x);
  const double bound = sensitivity(base.length, 1, 0.5);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    TokenSequence y = x;
    for (TokenId t = 0; t < V; ++t) {
      y[i] = t;
      worst = std::max(worst, std::abs(wm.detect(y).value - base.value));
    }
  }
  CHECK(worst <= bound + 1e-12);
  // The bound is attained: two memberships flip together somewhere.
  CHECK(worst == doctest::Approx(bound));
}

TEST_CASE("zero noise leaves the exact score") {
  const KeySet ks = KeySet::derive(kgw_config(), "dp0", 1, 256);
  const Detector d = [&](std::span<const TokenId> x) { return detect_multi(x, ks); };
  DpParams p = DpParams::for_scheme(kgw_config(), WatermarkKey::derive("noise"), 0.0);
  const TokenSequence x = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const NoisedReport r = dp_detect(x, d, p);
  CHECK(r.noised_value == r.exact.value);
  CHECK(r.verdict == r.exact.verdict);
  p.sigma = -1.0;
  CHECK_THROWS_AS(dp_detect(x, d, p), ParameterError);
}

TEST_CASE("repeated noised queries are identical") {
  const KeySet ks = KeySet::derive(kgw_config(), "dp-rep", 1, 256);
  const Detector d = [&](std::span<const TokenId> x) { return detect_multi(x, ks); };
  const DpParams p = DpParams::for_scheme(kgw_config(), WatermarkKey::derive("noise"), 4.0);
  TokenSequence x(80);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<TokenId>((i * 37) % 256);
  const double first = dp_detect(x, d, p).noised_value;
  for (int i = 0; i < 1000; ++i) REQUIRE(dp_detect(x, d, p).noised_value == first);
  DpParams other = p;
  other.noise_key = WatermarkKey::derive("other-noise");
  CHECK(dp_detect(x, d, other).noised_value != first);
}

TEST_CASE("noise is gaussian with the calibrated scale") {
  const std::size_t V = 1024;
  const KeySet ks = KeySet::derive(kgw_config(), "dp-dist", 1, V);
  const Detector d = [&](std::span<const TokenId> x) { return detect_multi(x, ks); };
  const double sigma = 2.0;
  const DpParams p = DpParams::for_scheme(kgw_config(), WatermarkKey::derive("noise"), sigma);
  Rng rng(2);
  const std::size_t N = 10000;
  std::vector<double> diffs;
  double expected_sd = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    TokenSequence x(60);
    for (auto& t : x) t = static_cast<TokenId>(rng.below(V));
    const NoisedReport r = dp_detect(x, d, p);
    expected_sd = sigma * r.sensitivity;
    diffs.push_back((r.noised_value - r.exact.value) / expected_sd);
  }
  double s = 0, s2 = 0;
  for (double v : diffs) {
    s += v;
    s2 += v * v;
  }
  const double mean = s / N, sd = std::sqrt(s2 / N - mean * mean);
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sd - 1.0) < 0.05);
  // Kolmogorov-Smirnov against N(0,1); 1.63/sqrt(N) is the 1% critical value.
  std::sort(diffs.begin(), diffs.end());
  const boost::math::normal_distribution<double> nd;
  double ks_stat = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double F = boost::math::cdf(nd, diffs[i]);
    ks_stat = std::max({ks_stat, std::abs(F - static_cast<double>(i) / N),
                        std::abs(F - static_cast<double>(i + 1) / N)});
  }
  CHECK(ks_stat < 1.63 / std::sqrt(static_cast<double>(N)));
}

TEST_CASE("log p-value mode clamps to one") {
  const std::size_t V = 64;
  SchemeConfig cfg;
  cfg.scheme = Scheme::exp;
  cfg.exp.key_length = 16;
  cfg.exp.resamples = 19;
  const KeySet ks(cfg, {WatermarkKey::derive("exp-dp")}, V);
  const Detector d = [&](std::span<const TokenId> x) { return detect_multi(x, ks); };
  DpParams p = DpParams::for_scheme(cfg, WatermarkKey::derive("noise"), 4.0);
  CHECK(p.mode == DpMode::log_p_value);
  p.log_p_sensitivity = 0.5;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    TokenSequence x(20);
    for (auto& t : x) t = static_cast<TokenId>(rng.below(V));
    const NoisedReport r = dp_detect(x, d, p);
    CHECK(r.noised_value > 0.0);
    CHECK(r.noised_value <= 1.0);
    const double expect = std::min(1.0, r.exact.value * std::exp(4.0 * 0.5 * r.noise_draw));
    CHECK(r.noised_value == doctest::Approx(expect));
  }
  std::vector<TokenSequence> texts;
  for (int i = 0; i < 5; ++i) {
    TokenSequence x(20);
    for (auto& t : x) t = static_cast<TokenId>(rng.below(V));
    texts.push_back(x);
  }
  const double sens = calibrate_log_p_sensitivity(d, texts, V, 4, rng);
  CHECK(sens >= 0.0);
  CHECK(std::isfinite(sens));
}

TEST_CASE("noise suppresses spoofing while keeping accuracy") {
  const ToyWorld& w = default_toy_world();
  const KeySet ks = KeySet::derive(kgw_config(), "dp-eval", 1, w.vocab().size());
  const Detector d = [&](std::span<const TokenId> x) { return detect_multi(x, ks); };
  DpEvalSetup setup;
  setup.local = w.evaluator.get();
  setup.length = 200;
  Rng rng(4);
  for (int i = 0; i < 40; ++i) {
    TokenSequence p = w.prompt(rng);
    setup.watermarked.push_back(ks.watermark(0).generate(*w.generator, p, 200, rng));
    setup.unwatermarked.push_back(generate(*w.generator, p, 200, rng));
    if (i < 10) setup.prompts.push_back(std::move(p));
  }
  double last_accuracy = 1.0;
  for (double sigma : {0.0, 1.0, 2.0, 4.0, 8.0}) {
    const DpEvalSummary s = dp_defense_eval(
        setup, d, DpParams::for_scheme(kgw_config(), WatermarkKey::derive("noise"), sigma));
    CHECK(s.accuracy <= last_accuracy);
    last_accuracy = s.accuracy;
    if (sigma == 0.0) CHECK(s.spoof_asr >= 0.9);
    if (sigma == 4.0) {
      CHECK(s.spoof_asr < 0.2);
      CHECK(s.accuracy >= 0.95);
    }
  }
}
