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

// Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when any
// criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "httplib.h"
#include "json.hpp"
#include "wmlab/attacks.hpp"
#include "wmlab/dp_defense.hpp"
#include "wmlab/experiment.hpp"
#include "wmlab/keyring.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/oracles.hpp"
#include "wmlab/service.hpp"

namespace {

using namespace wmlab;
using nlohmann::json;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int g_failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

SchemeConfig scheme(Scheme s) {
  SchemeConfig c;
  c.scheme = s;
  return c;
}

double median(std::vector<double> v) { return quartiles(std::move(v)).median; }

const ToyWorld& world() { return default_toy_world(); }
std::size_t vocab() { return world().vocab().size(); }

// Null texts shared by the calibration criteria.
std::vector<TokenSequence> null_texts(std::uint64_t stream, std::size_t count, std::size_t length) {
  std::vector<TokenSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(stream, i));
    const TokenSequence p = world().prompt(rng);
    out.push_back(generate(*world().generator, p, length, rng));
  }
  return out;
}

// Per-key null z-scores under the shared 13-key KGW deployment, computed once:
// scores[k][i] is text i under key k.
using ScoreMatrix = std::vector<std::vector<double>>;

const KeySet& tradeoff_keys() {
  static const KeySet keys = KeySet::derive(scheme(Scheme::kgw), "tradeoff", 13, vocab());
  return keys;
}

ScoreMatrix per_key_scores(const KeySet& keys, const std::vector<TokenSequence>& texts) {
  ScoreMatrix m(keys.size(), std::vector<double>(texts.size()));
  for (std::size_t k = 0; k < keys.size(); ++k) {
    for (std::size_t i = 0; i < texts.size(); ++i) m[k][i] = keys.watermark(k).detect(texts[i]).value;
  }
  return m;
}

std::vector<double> max_over_prefix(const ScoreMatrix& m, std::size_t n) {
  std::vector<double> out(m[0].size(), -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], m[k][i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

void criterion1() {
  const Timer t;
  const double cf = thm2_prob(13, 0.5, 3);
  Rng rng(1);
  const double mc = thm2_monte_carlo(13, 0.5, 3, 100000, rng);
  const double secs = t.seconds();
  const bool pass = cf >= 0.70 && cf <= 0.72 && std::abs(mc - cf) <= 0.02 && secs < 10.0;
  report(1, pass, fmt("closed form %.6f, Monte Carlo %.4f (1e5 trials), %.2fs", cf, mc, secs));
}

void criterion2() {
  const Timer t;
  double worst = 0.0;
  for (int n = 1; n <= 16; ++n) {
    for (int i = 1; i <= 9; ++i) {
      const double p = i / 10.0;
      double brute = 0.0;
      for (unsigned m = 0; m < (1u << n); ++m) {
        const int k = std::popcount(m);
        if (k > n / 2) brute += std::pow(p, k) * std::pow(1.0 - p, n - k);
      }
      worst = std::max(worst, std::abs(thm3_prob(n, p) - brute));
    }
  }
  const double secs = t.seconds();
  report(2, worst <= 1e-12 && secs < 30.0,
         fmt("max |closed form - enumeration| = %.3g over n <= 16, %.2fs", worst, secs));
}

void criterion3() {
  const Timer t;
  Thm1ValidationConfig cfg;
  cfg.trials = 500;
  cfg.length = 200;
  cfg.seed = 3;
  bool law_ok = true;
  std::string detail;
  for (std::size_t s : {20, 50, 100}) {
    cfg.fixed_s = s;
    const Thm1Validation v = thm1_empirical_validation(world(), cfg);
    const double diff = std::abs(v.mean_z_after - v.mean_z_predicted);
    law_ok = law_ok && diff <= 0.15;
    detail += fmt("s=%zu z'=%.3f pred=%.3f; ", s, v.mean_z_after, v.mean_z_predicted);
  }
  cfg.fixed_s.reset();
  const Thm1Validation at_max = thm1_empirical_validation(world(), cfg);
  const bool frac_ok = at_max.fraction >= 0.7 && at_max.fraction <= 0.95;
  const double secs = t.seconds();
  detail += fmt("s_max (mean %.1f): still detected %.3f of %zu; %.1fs [z law %s, fraction %s]",
                at_max.mean_s, at_max.fraction, at_max.eligible, secs, law_ok ? "ok" : "off",
                frac_ok ? "ok" : "off");
  report(3, law_ok && frac_ok && secs < 120.0, detail);
}

void criterion4(const ScoreMatrix& calib, const ScoreMatrix& holdout_scores,
                const std::vector<TokenSequence>& holdout) {
  const Timer t;
  std::string detail;
  bool pass = true;
  // Single-key nulls: each text scored under a fresh key.
  for (Scheme s : {Scheme::kgw, Scheme::unigram}) {
    double sum = 0, sum2 = 0;
    const std::size_t N = 1000;
    for (std::size_t i = 0; i < N; ++i) {
      const auto wm = make_watermark(scheme(s), WatermarkKey::derive("null-calibration", i), vocab());
      const double z = wm->detect(holdout[i]).value;
      sum += z;
      sum2 += z * z;
    }
    const double mean = sum / N, sd = std::sqrt(sum2 / N - mean * mean);
    pass = pass && std::abs(mean) < 0.1 && sd >= 0.9 && sd <= 1.1;
    detail += fmt("%s z mean %.3f sd %.3f; ", std::string(to_string(s)).c_str(), mean, sd);
  }
  {
    double sum = 0;
    const std::size_t N = 1000;
    for (std::size_t i = 0; i < N; ++i) {
      const auto wm =
          make_watermark(scheme(Scheme::exp), WatermarkKey::derive("null-calibration", i), vocab());
      const TokenSequence x(holdout[i].begin(), holdout[i].begin() + 70);
      sum += wm->detect(x).value;
    }
    const double mean = sum / N;
    pass = pass && mean >= 0.45 && mean <= 0.55;
    detail += fmt("exp p mean %.3f; ", mean);
  }
  // Multi-key calibration, held-out false positive rate.
  const ThresholdTable table =
      calibrate_from_scores(max_over_prefix(calib, 7), ScoreKind::z_score, 7, 1e-3);
  std::size_t fp = 0;
  for (double z : max_over_prefix(holdout_scores, 7)) fp += verdict_for(ScoreKind::z_score, z, table.per_key_threshold) ? 1 : 0;
  const double fpr = static_cast<double>(fp) / static_cast<double>(holdout.size());
  pass = pass && fpr <= 1e-3;
  detail += fmt("n=7 calibrated z*=%.3f, held-out FPR %.1e (%zu/%zu); %.1fs",
                table.per_key_threshold, fpr, fp, holdout.size(), t.seconds());
  report(4, pass, detail);
}

void criterion5() {
  const Timer t;
  std::string detail;
  bool pass = true;
  for (Scheme s : {Scheme::kgw, Scheme::unigram}) {
    const auto wm = make_watermark(scheme(s), WatermarkKey::derive("power", 0), vocab());
    Rng rng(5);
    std::vector<double> z;
    std::size_t hits = 0;
    for (int i = 0; i < 200; ++i) {
      const TokenSequence p = world().prompt(rng);
      const DetectionReport r = wm->detect(wm->generate(*world().generator, p, 200, rng));
      z.push_back(r.value);
      hits += r.verdict ? 1 : 0;
    }
    const double rate = hits / 200.0;
    pass = pass && median(z) >= 4.0 && rate >= 0.95;
    detail += fmt("%s median z %.2f rate %.3f; ", std::string(to_string(s)).c_str(), median(z), rate);
  }
  const auto wm = make_watermark(scheme(Scheme::exp), WatermarkKey::derive("power", 0), vocab());
  Rng rng(6);
  std::size_t hits = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    const TokenSequence p = world().prompt(rng);
    hits += wm->detect(wm->generate(*world().generator, p, 70, rng)).value <= 0.05 ? 1 : 0;
  }
  const double rate = static_cast<double>(hits) / trials;
  pass = pass && rate >= 0.9;
  detail += fmt("exp p<=0.05 in %.3f; %.1fs", rate, t.seconds());
  report(5, pass, detail);
}

void criterion6() {
  const Timer t;
  const std::size_t V = 16;
  const Vocabulary v = Vocabulary::synthetic(V);
  const SyntheticModel base(v, WatermarkKey::derive("distortion"), 0.7, 0);
  const ProbDist p = base.next_dist(TokenSequence{});
  // Single step: chi-square goodness of fit.
  Rng rng(7);
  std::vector<double> counts(V), xi(V);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    for (double& u : xi) u = rng.uniform();
    counts[exp_embed_step(p, xi)] += 1.0;
  }
  double chi2 = 0.0;
  for (std::size_t i = 0; i < V; ++i) {
    const double e = draws * p[i];
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  const boost::math::chi_squared_distribution<double> dist(static_cast<double>(V - 1));
  const double critical = boost::math::quantile(boost::math::complement(dist, 0.01));
  // Generation marginals over many keys and shifts.
  std::vector<double> freq(V);
  const int keys = 2000, len = 20;
  for (int k = 0; k < keys; ++k) {
    const ExpKey key = ExpKey::from_secret(WatermarkKey::derive("distortion-key", k), 32, V);
    for (TokenId tok : exp_generate(base, TokenSequence{}, key, len, rng)) freq[tok] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < V; ++i) tv += std::abs(freq[i] / (keys * len) - p[i]);
  tv /= 2;
  report(6, chi2 <= critical && tv <= 0.05,
         fmt("chi2 %.2f (critical %.2f, df 15), marginal TV %.4f; %.1fs", chi2, critical, tv,
             t.seconds()));
}

void criterion7(const ScoreMatrix& calib) {
  const Timer t;
  const std::vector<std::size_t> sizes = {1, 3, 7, 13};
  const KeySet& all_kgw = tradeoff_keys();
  const KeySet all_uni = KeySet::derive(scheme(Scheme::unigram), "tradeoff", 13, vocab());
  const std::size_t trials = 100;
  std::vector<double> asr, precision;
  double removal_ppl = 0.0, plain_ppl = 0.0;
  std::string detail;
  for (std::size_t n : sizes) {
    const KeySet keys = all_kgw.prefix(n);
    const ThresholdTable table =
        calibrate_from_scores(max_over_prefix(calib, n), ScoreKind::z_score, n, 1e-3);
    std::size_t removed = 0;
    double ppl = 0.0, ppl0 = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
      Rng rng(derive_seed(70 + n, i));
      const TokenSequence p = world().prompt(rng);
      MultikeyRemovalParams mp;
      mp.n_queries = 13;
      const AttackOutcome o = multikey_removal(*world().generator, p, keys, mp, 200, rng);
      removed += detect_multi(o.text, keys, &table).verdict ? 0 : 1;
      ppl += pseudo_perplexity(*world().evaluator, o.text, p);
      ppl0 += pseudo_perplexity(*world().evaluator, generate(*world().generator, p, 200, rng), p);
    }
    asr.push_back(static_cast<double>(removed) / trials);
    if (n == 13) {
      removal_ppl = ppl / trials;
      plain_ppl = ppl0 / trials;
    }
    // Stealing: 1e5 observed tokens from a Unigram deployment with n keys.
    const KeySet ukeys = all_uni.prefix(n);
    std::vector<ObservedSample> obs;
    std::size_t tokens = 0;
    Rng srng(derive_seed(700 + n, 0));
    while (tokens < 100000) {
      TokenSequence p = world().prompt(srng);
      TokenSequence r = embed_with_keyset(*world().generator, p, ukeys, 200, srng).first;
      tokens += r.size();
      obs.push_back({std::move(p), std::move(r)});
    }
    precision.push_back(steal_precision(steal_greenlist(obs, *world().generator, 0.5), ukeys));
    detail += fmt("n=%zu ASR %.2f steal %.3f; ", n, asr.back(), precision.back());
  }
  const bool asr_ok = std::is_sorted(asr.begin(), asr.end()) && asr.back() >= 0.9;
  const bool prec_mono = std::is_sorted(precision.rbegin(), precision.rend());
  const bool prec_chance = precision[2] <= 0.6 && precision[3] <= 0.6;
  const bool ppl_ok = removal_ppl <= 1.10 * plain_ppl;
  const double secs = t.seconds();
  detail += fmt("PPL removal %.2f vs plain %.2f; %.1fs [asr %s, steal trend %s, steal near chance %s, "
                "ppl %s]",
                removal_ppl, plain_ppl, secs, asr_ok ? "ok" : "off", prec_mono ? "ok" : "off",
                prec_chance ? "ok" : "off", ppl_ok ? "ok" : "off");
  report(7, asr_ok && prec_mono && prec_chance && ppl_ok && secs < 600.0, detail);
}

void criterion8() {
  const Timer t;
  std::string detail;
  bool pass = true;
  for (Scheme s : {Scheme::kgw, Scheme::unigram}) {
    const auto keys = std::make_shared<const KeySet>(KeySet::derive(scheme(s), "api", 1, vocab()));
    const std::size_t trials = 100, len = 200;
    std::size_t removed = 0, spoofed = 0, q_rem = 0, q_spoof = 0;
    for (std::size_t i = 0; i < trials; ++i) {
      Rng rng(derive_seed(8, i));
      const TokenSequence p = world().prompt(rng);
      GenerationApi api(world().generator, keys->watermark_ptr(0));
      DetectionOracle o1 = DetectionOracle::exact(keys);
      ApiRemovalParams rp;
      rp.gamma = scheme(s).gamma();
      const AttackOutcome r = api_removal(api, p, o1, rp, len, rng);
      removed += detect_multi(r.text, *keys).verdict ? 0 : 1;
      q_rem += r.queries_detection;
      DetectionOracle o2 = DetectionOracle::exact(keys);
      const AttackOutcome sp = api_spoof(*world().evaluator, p, o2, {}, len);
      spoofed += detect_multi(sp.text, *keys).verdict ? 1 : 0;
      q_spoof += sp.queries_detection;
    }
    const double ra = static_cast<double>(removed) / trials, sa = static_cast<double>(spoofed) / trials;
    const double rq = static_cast<double>(q_rem) / (trials * len);
    const double sq = static_cast<double>(q_spoof) / (trials * len);
    pass = pass && ra >= 0.9 && rq <= 4.0 && sa >= 0.9 && sq <= 4.0;
    detail += fmt("%s removal %.2f @ %.2f q/tok, spoof %.2f @ %.2f q/tok; ",
                  std::string(to_string(s)).c_str(), ra, rq, sa, sq);
  }
  detail += fmt("%.1fs", t.seconds());
  report(8, pass, detail);
}

void criterion9() {
  const Timer t;
  const KeySet keys = KeySet::derive(scheme(Scheme::kgw), "dp-defense", 1, vocab());
  const Detector detector = [&](std::span<const TokenId> x) { return detect_multi(x, keys); };
  DpEvalSetup setup;
  setup.local = world().evaluator.get();
  setup.length = 200;
  for (std::size_t i = 0; i < 100; ++i) {
    Rng rng(derive_seed(9, i));
    TokenSequence p = world().prompt(rng);
    setup.watermarked.push_back(keys.watermark(0).generate(*world().generator, p, 200, rng));
    setup.unwatermarked.push_back(generate(*world().generator, p, 200, rng));
    setup.prompts.push_back(std::move(p));
  }
  const WatermarkKey noise = WatermarkKey::derive("dp-defense-noise");
  const DpEvalSummary base =
      dp_defense_eval(setup, detector, DpParams::for_scheme(scheme(Scheme::kgw), noise, 0.0));
  const DpParams p4 = DpParams::for_scheme(scheme(Scheme::kgw), noise, 4.0);
  const DpEvalSummary noised = dp_defense_eval(setup, detector, p4);
  const double first = dp_detect(setup.watermarked[0], detector, p4).noised_value;
  double max_dev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    max_dev = std::max(max_dev, std::abs(dp_detect(setup.watermarked[0], detector, p4).noised_value - first));
  }
  const double drop = base.accuracy - noised.accuracy;
  report(9, noised.spoof_asr < 0.1 && drop <= 0.05 && max_dev == 0.0,
         fmt("sigma 0: ASR %.2f acc %.3f; sigma 4: ASR %.2f acc %.3f; repeat deviation %g; %.1fs",
             base.spoof_asr, base.accuracy, noised.spoof_asr, noised.accuracy, max_dev,
             t.seconds()));
}

void criterion10() {
  const Timer t;
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.rate_capacity = 1e9;
  cfg.rate_refill_per_second = 1e9;
  std::map<Scheme, DetectionService::SchemeState> schemes;
  schemes[Scheme::kgw] = {std::make_shared<const KeySet>(
                              KeySet::derive(scheme(Scheme::kgw), "service", 1, vocab())),
                          std::nullopt, WatermarkKey::derive("service-noise")};
  DetectionService svc(world().generator, schemes, cfg);
  const int port = svc.bind_any_port();
  std::thread th([&] { svc.listen_after_bind(); });
  httplib::Client cli("127.0.0.1", port);
  Rng rng(10);
  std::size_t exact = 0;
  for (int i = 0; i < 200; ++i) {
    TokenSequence x(2 + rng.below(400));
    for (auto& v : x) v = static_cast<TokenId>(rng.below(vocab()));
    const std::string text = world().vocab().decode(x);
    const auto res = cli.Post("/v1/detect", json{{"text", text}}.dump(), "application/json");
    if (res && res->status == 200 &&
        json::parse(res->body)["score"].get<double>() ==
            svc.detect_tokens(world().vocab().encode(text), Scheme::kgw, false).exact.value) {
      ++exact;
    }
  }
  std::size_t flagged = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    Rng prng(derive_seed(10, i));
    const std::string prompt = world().vocab().decode(world().prompt(prng));
    const auto g = cli.Post("/v1/generate",
                            json{{"prompt", prompt}, {"max_tokens", 200}, {"seed", i}}.dump(),
                            "application/json");
    if (!g || g->status != 200) continue;
    const auto d = cli.Post("/v1/detect", json{{"text", json::parse(g->body)["text"]}}.dump(),
                            "application/json");
    if (d && d->status == 200 && json::parse(d->body)["watermarked"].get<bool>()) ++flagged;
  }
  svc.stop();
  th.join();
  // Rate limiter over HTTP: a fresh service with capacity C and negligible
  // refill answers C requests and denies the next one.
  ServiceConfig limited = cfg;
  limited.rate_capacity = 60;
  limited.rate_refill_per_second = 1e-6;
  DetectionService svc2(world().generator, schemes, limited);
  const int port2 = svc2.bind_any_port();
  std::thread th2([&] { svc2.listen_after_bind(); });
  httplib::Client cli2("127.0.0.1", port2);
  const std::string body = json{{"text", "w1 w2 w3 w4 w5 w6 w7 w8"}}.dump();
  std::size_t allowed = 0;
  int last_status = 0;
  for (int i = 0; i < 61; ++i) {
    const auto res = cli2.Post("/v1/detect", httplib::Headers{{"X-Client-Id", "burst"}}, body,
                               "application/json");
    last_status = res ? res->status : -1;
    allowed += last_status == 200 ? 1 : 0;
  }
  svc2.stop();
  th2.join();
  const bool last_denied = allowed == 60 && last_status == 429;
  const double rt = static_cast<double>(flagged) / trials;
  report(10, exact == 200 && rt >= 0.95 && last_denied,
         fmt("bit-exact %zu/200, round trip flagged %.2f, limiter allowed %zu of 61; %.1fs", exact,
             rt, allowed, t.seconds()));
}

}  // namespace

int main() {
  const Timer total;
  criterion1();
  criterion2();
  criterion6();
  world();  // build the toy world once
  criterion3();
  const std::vector<TokenSequence> calib = null_texts(41, 10000, 200);
  const std::vector<TokenSequence> holdout = null_texts(42, 10000, 200);
  const ScoreMatrix calib_scores = per_key_scores(tradeoff_keys(), calib);
  const ScoreMatrix holdout_scores = per_key_scores(tradeoff_keys(), holdout);
  criterion4(calib_scores, holdout_scores, holdout);
  criterion5();
  criterion7(calib_scores);
  criterion8();
  criterion9();
  criterion10();
  std::printf("acceptance: %d failing criteria, %.1fs total\n", g_failures, total.seconds());
  return g_failures == 0 ? 0 : 1;
}
