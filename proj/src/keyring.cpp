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

#include "wmlab/keyring.hpp"

#include <algorithm>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <set>

#include "json_io.hpp"

namespace wmlab {

using detail::json;

KeySet::KeySet(SchemeConfig config, std::vector<WatermarkKey> keys, std::size_t vocab_size)
    : config_(std::move(config)), keys_(std::move(keys)), vocab_size_(vocab_size) {
  config_.validate();
  if (keys_.empty()) throw ParameterError("a key set needs at least one key");
  std::set<std::vector<std::uint8_t>> seen;
  for (const auto& k : keys_) {
    if (!seen.emplace(k.bytes().begin(), k.bytes().end()).second) {
      throw InvalidKeyError("duplicate key in key set");
    }
  }
  watermarks_.reserve(keys_.size());
  for (const auto& k : keys_) watermarks_.push_back(make_watermark(config_, k, vocab_size_));
}

KeySet KeySet::derive(const SchemeConfig& config, std::string_view label, std::size_t n,
                      std::size_t vocab_size) {
  std::vector<WatermarkKey> keys;
  keys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) keys.push_back(WatermarkKey::derive(label, i));
  return KeySet(config, std::move(keys), vocab_size);
}

KeySet KeySet::prefix(std::size_t n) const {
  if (n < 1 || n > keys_.size()) throw ParameterError("prefix size out of range");
  KeySet out = *this;
  out.keys_.erase(out.keys_.begin() + static_cast<std::ptrdiff_t>(n), out.keys_.end());
  out.watermarks_.resize(n);
  return out;
}

std::pair<TokenSequence, std::size_t> embed_with_keyset(const LanguageModel& model,
                                                        std::span<const TokenId> prompt,
                                                        const KeySet& keys, std::size_t length,
                                                        Rng& rng, Decoding decoding) {
  const std::size_t idx = keys.size() == 1 ? 0 : rng.below(keys.size());
  return {keys.watermark(idx).generate(model, prompt, length, rng, decoding), idx};
}

DetectionReport detect_multi(std::span<const TokenId> x, const KeySet& keys,
                             const ThresholdTable* thresholds) {
  if (keys.size() == 1 && thresholds == nullptr) return keys.watermark(0).detect(x);
  DetectionReport best;
  std::vector<double> per_key;
  per_key.reserve(keys.size());
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    DetectionReport r = keys.watermark(i).detect(x);
    per_key.push_back(r.value);
    // Strictly more extreme wins so ties go to the lowest key index.
    if (i == 0 || (r.value != best.value && more_extreme(r.kind, r.value, best.value))) {
      best = std::move(r);
      best_idx = i;
    }
  }
  if (thresholds != nullptr) {
    if (thresholds->kind != best.kind) throw ParameterError("threshold table kind mismatch");
    best.threshold = thresholds->per_key_threshold;
  }
  best.verdict = verdict_for(best.kind, best.value, best.threshold);
  best.per_key = std::move(per_key);
  best.best_key = best_idx;
  return best;
}

std::vector<double> null_scores(const KeySet& keys, const NullSampler& sampler,
                                std::size_t samples) {
  std::vector<double> out;
  out.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const TokenSequence x = sampler(i);
    double v = 0.0;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      const double s = keys.watermark(k).detect(x).value;
      if (k == 0 || more_extreme(keys.kind(), s, v)) v = s;
    }
    out.push_back(v);
  }
  return out;
}

double union_bound_z(double target_fpr, std::size_t n_keys) {
  if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw ParameterError("target FPR in (0,1)");
  if (n_keys < 1) throw ParameterError("need at least one key");
  const boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(boost::math::complement(
      std_normal, target_fpr / static_cast<double>(n_keys)));
}

ThresholdTable calibrate_from_scores(std::vector<double> scores, ScoreKind kind,
                                     std::size_t n_keys, double target_fpr) {
  ThresholdTable t;
  t.kind = kind;
  t.target_fpr = target_fpr;
  t.keys = n_keys;
  t.calibration_samples = scores.size();
  t.analytic_threshold = kind == ScoreKind::z_score
                             ? union_bound_z(target_fpr, n_keys)
                             : target_fpr / static_cast<double>(n_keys);
  const double n = static_cast<double>(scores.size());
  if (n < 10.0 / target_fpr) {
    t.warnings.push_back("only " + std::to_string(scores.size()) +
                         " calibration samples (recommended >= 10/target); using the union bound");
    t.per_key_threshold = t.analytic_threshold;
  } else {
    // Largest k with P(Binomial(N, target) <= k) <= 0.05.
    const boost::math::binomial_distribution<double> bin(n, target_fpr);
    std::size_t k = 0;
    while (k + 1 < scores.size() && boost::math::cdf(bin, static_cast<double>(k + 1)) <= 0.05) {
      ++k;
    }
    if (boost::math::cdf(bin, 0.0) > 0.05) k = 0;
    // Order from most to least watermark-like; pick a threshold strictly
    // between the k-th and (k+1)-th order statistics.
    if (kind == ScoreKind::z_score) {
      std::sort(scores.begin(), scores.end(), std::greater<>());
    } else {
      std::sort(scores.begin(), scores.end());
    }
    const double at = scores[k];
    std::size_t j = k;
    while (j > 0 && scores[j - 1] == at) --j;
    if (j > 0) {
      t.per_key_threshold = 0.5 * (at + scores[j - 1]);
    } else if (kind == ScoreKind::z_score) {
      t.per_key_threshold = at + 1e-9 * std::max(1.0, std::abs(at));
    } else {
      t.per_key_threshold = 0.5 * at;
    }
  }
  t.calibration_exceedances = static_cast<std::size_t>(std::count_if(
      scores.begin(), scores.end(),
      [&](double v) { return verdict_for(kind, v, t.per_key_threshold); }));
  return t;
}

ThresholdTable calibrate_thresholds(const KeySet& keys, const NullSampler& sampler,
                                    double target_fpr, std::size_t samples) {
  return calibrate_from_scores(null_scores(keys, sampler, samples), keys.kind(), keys.size(),
                               target_fpr);
}

// ---------------------------------------------------------------------------

std::string keyring_to_json(const KeySet& keys, const ThresholdTable* thresholds,
                            const WatermarkKey* noise_key) {
  json j;
  j["format"] = "wmlab-keyset";
  j["format_version"] = kKeySetFormatVersion;
  j["vocab_size"] = keys.vocab_size();
  j["params"] = detail::to_json(keys.config());
  json arr = json::array();
  for (std::size_t i = 0; i < keys.size(); ++i) arr.push_back(keys.key(i).to_hex());
  j["keys"] = std::move(arr);
  if (thresholds != nullptr) {
    json t;
    t["score_kind"] = std::string(to_string(thresholds->kind));
    t["per_key_threshold"] = thresholds->per_key_threshold;
    t["target_fpr"] = thresholds->target_fpr;
    t["calibration_samples"] = thresholds->calibration_samples;
    t["keys"] = thresholds->keys;
    t["analytic_threshold"] = thresholds->analytic_threshold;
    t["calibration_exceedances"] = thresholds->calibration_exceedances;
    t["warnings"] = thresholds->warnings;
    j["thresholds"] = std::move(t);
  }
  if (noise_key != nullptr) j["noise_key"] = noise_key->to_hex();
  return j.dump(2);
}

KeyringFile keyring_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("keyset: ") + e.what());
  }
  try {
    if (j.value("format", "") != "wmlab-keyset") throw FormatError("not a wmlab keyset");
    if (j.at("format_version").get<int>() != kKeySetFormatVersion) {
      throw FormatError("unsupported keyset format version");
    }
    std::vector<WatermarkKey> keys;
    for (const auto& h : j.at("keys")) keys.push_back(WatermarkKey::from_hex(h.get<std::string>()));
    KeyringFile out{KeySet(detail::scheme_config_from_json(j.at("params")), std::move(keys),
                           j.at("vocab_size").get<std::size_t>()),
                    std::nullopt, std::nullopt};
    if (j.contains("thresholds")) {
      const json& t = j["thresholds"];
      ThresholdTable tt;
      tt.kind = t.at("score_kind").get<std::string>() == "p-value" ? ScoreKind::p_value
                                                                   : ScoreKind::z_score;
      tt.per_key_threshold = t.at("per_key_threshold").get<double>();
      tt.target_fpr = t.at("target_fpr").get<double>();
      tt.calibration_samples = t.at("calibration_samples").get<std::size_t>();
      tt.keys = t.at("keys").get<std::size_t>();
      tt.analytic_threshold = t.at("analytic_threshold").get<double>();
      tt.calibration_exceedances = t.value("calibration_exceedances", std::size_t{0});
      tt.warnings = t.value("warnings", std::vector<std::string>{});
      if (tt.kind != out.keys.kind()) throw FormatError("threshold kind does not match scheme");
      out.thresholds = std::move(tt);
    }
    if (j.contains("noise_key")) {
      out.noise_key = WatermarkKey::from_hex(j["noise_key"].get<std::string>());
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("keyset: ") + e.what());
  }
}

void save_keyring(const std::filesystem::path& path, const KeySet& keys,
                  const ThresholdTable* thresholds, const WatermarkKey* noise_key) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << keyring_to_json(keys, thresholds, noise_key) << '\n';
}

KeyringFile load_keyring(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return keyring_from_json(text);
}

}  // namespace wmlab
