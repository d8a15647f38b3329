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

#include "wmlab/dp_defense.hpp"

#include <algorithm>
#include <cmath>

namespace wmlab {

DpParams DpParams::for_scheme(const SchemeConfig& config, WatermarkKey key, double sigma) {
  DpParams p(std::move(key));
  p.sigma = sigma;
  switch (config.scheme) {
    case Scheme::kgw:
      p.h = config.kgw.h;
      p.gamma = config.kgw.gamma;
      break;
    case Scheme::unigram:
      p.h = 0;
      p.gamma = config.unigram.gamma;
      break;
    case Scheme::exp:
      p.mode = DpMode::log_p_value;
      break;
  }
  return p;
}

void DpParams::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be >= 0");
  if (h < 0) throw ParameterError("h must be >= 0");
  if (mode == DpMode::z_score) validate_gamma(gamma);
  if (!(log_p_sensitivity >= 0.0)) throw ParameterError("sensitivity must be >= 0");
  if (!(multi_edit_multiplier >= 1.0)) throw ParameterError("multi-edit multiplier must be >= 1");
}

double sensitivity(std::size_t l, int h, double gamma) {
  validate_gamma(gamma);
  if (l == 0) throw ParameterError("sensitivity needs l >= 1");
  if (h < 0) throw ParameterError("h must be >= 0");
  return static_cast<double>(h + 1) / std::sqrt(gamma * (1.0 - gamma) * static_cast<double>(l));
}

double prf_normal(const WatermarkKey& noise_key, std::span<const TokenId> x) {
  const auto u = prg_uniform(prf(noise_key, encode_tokens(x)), 2);
  return box_muller(u[0], u[1]);
}

NoisedReport dp_detect(std::span<const TokenId> x, const Detector& detector,
                       const DpParams& params) {
  params.validate();
  NoisedReport r;
  r.exact = detector(x);
  if (params.mode == DpMode::z_score) {
    r.sensitivity = sensitivity(r.exact.length, params.h, params.gamma);
  } else {
    r.sensitivity = params.log_p_sensitivity;
  }
  r.sensitivity *= params.multi_edit_multiplier;
  if (params.sigma == 0.0) {
    r.noised_value = r.exact.value;
  } else {
    r.noise_draw = prf_normal(params.noise_key, x);
    const double noise = params.sigma * r.sensitivity * r.noise_draw;
    if (params.mode == DpMode::z_score) {
      r.noised_value = r.exact.value + noise;
    } else {
      r.noised_value = std::min(1.0, std::exp(std::log(r.exact.value) + noise));
    }
  }
  r.verdict = verdict_for(r.exact.kind, r.noised_value, r.exact.threshold);
  return r;
}

double calibrate_log_p_sensitivity(const Detector& detector, std::span<const TokenSequence> texts,
                                   std::size_t vocab_size, std::size_t edits_per_text, Rng& rng) {
  if (vocab_size < 2) throw ParameterError("vocabulary too small");
  std::vector<double> deltas;
  for (const auto& x : texts) {
    if (x.empty()) continue;
    const double base = std::log(detector(x).value);
    for (std::size_t e = 0; e < edits_per_text; ++e) {
      TokenSequence y = x;
      const std::size_t pos = rng.below(y.size());
      auto t = static_cast<TokenId>(rng.below(vocab_size - 1));
      if (t >= y[pos]) ++t;
      y[pos] = t;
      deltas.push_back(std::abs(std::log(detector(y).value) - base));
    }
  }
  if (deltas.empty()) throw ParameterError("no calibration edits");
  std::sort(deltas.begin(), deltas.end());
  const auto idx = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(deltas.size()))) - 1;
  return deltas[std::min(idx, deltas.size() - 1)];
}

DetectionOracle noised_oracle(Detector detector, DpParams params) {
  params.validate();
  const ScoreKind kind =
      params.mode == DpMode::z_score ? ScoreKind::z_score : ScoreKind::p_value;
  return DetectionOracle(kind, [detector = std::move(detector),
                                params = std::move(params)](std::span<const TokenId> x) {
    return dp_detect(x, detector, params).noised_value;
  });
}

DpEvalSummary dp_defense_eval(const DpEvalSetup& setup, const Detector& detector,
                              const DpParams& params) {
  if (setup.local == nullptr) throw ParameterError("DP evaluation needs a local model");
  DpEvalSummary s;
  s.sigma = params.sigma;
  s.trials = setup.prompts.size();
  DetectionOracle oracle = noised_oracle(detector, params);
  std::size_t accepted = 0;
  std::size_t tokens = 0;
  for (const auto& prompt : setup.prompts) {
    const AttackOutcome o = api_spoof(*setup.local, prompt, oracle, setup.spoof, setup.length);
    tokens += o.text.size();
    if (dp_detect(o.text, detector, params).verdict) ++accepted;
  }
  s.detection_queries_per_token =
      tokens == 0 ? 0.0 : static_cast<double>(oracle.queries()) / static_cast<double>(tokens);
  s.spoof_asr = s.trials == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(s.trials);
  std::size_t correct = 0;
  for (const auto& x : setup.watermarked) correct += dp_detect(x, detector, params).verdict ? 1 : 0;
  for (const auto& x : setup.unwatermarked) correct += dp_detect(x, detector, params).verdict ? 0 : 1;
  const std::size_t total = setup.watermarked.size() + setup.unwatermarked.size();
  s.accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  return s;
}

}  // namespace wmlab
