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

// Exp (Gumbel-trick) watermark: key expansion, embedding, the basic
// statistic and the edit-alignment detector.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <bit>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "wmlab/watermarks.hpp"

namespace wmlab {

namespace {

constexpr char kMagic[4] = {'W', 'M', 'X', 'I'};
constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp_xi(double u) { return std::clamp(u, kXiClamp, 1.0 - kXiClamp); }

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("truncated key file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

// costs is l x n row-major: costs[i * n + k] = log(1 - xi_{k, x_i}).
double min_alignment(const std::vector<double>& costs, std::size_t l, std::size_t n,
                     const ExpParams& params) {
  const std::size_t m = l;
  const double gap = params.gap_penalty;
  const std::size_t band = params.band == 0 ? std::max(l, m) : params.band;
  std::vector<double> prev(m + 1), cur(m + 1);
  double best = kInf;
  for (std::size_t shift = 0; shift < n; ++shift) {
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j <= band ? static_cast<double>(j) * gap : kInf;
    for (std::size_t i = 1; i <= l; ++i) {
      const std::size_t lo = i > band ? i - band : 0;
      const std::size_t hi = std::min(m, i + band);
      // Only the cells the band reads next row need resetting.
      if (lo > 0) cur[lo - 1] = kInf;
      if (hi < m) cur[hi + 1] = kInf;
      cur[0] = lo == 0 ? static_cast<double>(i) * gap : kInf;
      const double* row = &costs[(i - 1) * n];
      const std::size_t first = std::max<std::size_t>(lo, 1);
      std::size_t k = (shift + first) % n;  // key position j (1-based) -> index shift + j
      for (std::size_t j = first; j <= hi; ++j, k = k + 1 == n ? 0 : k + 1) {
        double v = prev[j - 1] + row[k];
        v = std::min(v, prev[j] + gap);
        v = std::min(v, cur[j - 1] + gap);
        cur[j] = v;
      }
      std::swap(prev, cur);
    }
    best = std::min(best, prev[m]);
  }
  return best;
}

}  // namespace

void ExpParams::validate() const {
  if (key_length < 1) throw ParameterError("Exp key length must be >= 1");
  if (resamples < 1) throw ParameterError("Exp detection needs at least one resample");
  if (!(gap_penalty >= 0.0)) throw ParameterError("gap penalty must be >= 0");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ParameterError("p-value threshold in (0,1]");
}

// ---------------------------------------------------------------------------
// ExpKey

ExpKey::ExpKey(std::size_t length, std::size_t vocab_size, std::vector<double> xi)
    : length_(length), vocab_size_(vocab_size), xi_(std::move(xi)) {
  if (length_ < 1 || vocab_size_ < 2) throw ParameterError("Exp key shape must be n >= 1, |V| >= 2");
  if (xi_.size() != length_ * vocab_size_) throw ParameterError("Exp key size mismatch");
  for (double& v : xi_) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("Exp key entries must lie in [0,1]");
    v = clamp_xi(v);
  }
}

ExpKey ExpKey::from_secret(const WatermarkKey& secret, std::size_t length,
                           std::size_t vocab_size) {
  return ExpKey(length, vocab_size,
                prg_uniform(prf(secret, std::string_view("exp-xi")), length * vocab_size));
}

void ExpKey::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kFormatVersion);
  write_le<std::uint64_t>(out, length_);
  write_le<std::uint64_t>(out, vocab_size_);
  for (double v : xi_) write_le<double>(out, v);
}

ExpKey ExpKey::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a wmlab Exp key file");
  }
  if (read_le<std::uint32_t>(in) != kFormatVersion) throw FormatError("unsupported Exp key version");
  const auto n = read_le<std::uint64_t>(in);
  const auto v = read_le<std::uint64_t>(in);
  if (n == 0 || v < 2 || n > (1u << 24) || v > (1u << 24)) throw FormatError("bad Exp key header");
  std::vector<double> xi(n * v);
  for (double& d : xi) d = read_le<double>(in);
  return ExpKey(n, v, std::move(xi));
}

// ---------------------------------------------------------------------------
// Embedding

TokenId exp_embed_step(const ProbDist& p, std::span<const double> xi_row) {
  if (p.size() != xi_row.size()) throw DomainError("key row / distribution size mismatch");
  // Maximizing xi^(1/p) is maximizing log(xi)/p.
  TokenId best = 0;
  double best_score = -kInf;
  bool found = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    const double score = std::log(clamp_xi(xi_row[i])) / p[i];
    if (!found || score > best_score) {
      best = static_cast<TokenId>(i);
      best_score = score;
      found = true;
    }
  }
  return best;
}

TokenSequence exp_generate(const LanguageModel& model, std::span<const TokenId> prompt,
                           const ExpKey& key, std::size_t length, Rng& shift_rng) {
  if (length < 1) throw ParameterError("generation length must be >= 1");
  ExpParams params;
  params.key_length = key.length();
  const ExpWatermark wm(key, params);
  return wm.generate(model, prompt, length, shift_rng);
}

double exp_statistic(std::span<const TokenId> x, const ExpKey& key, std::size_t shift) {
  if (x.empty()) throw InsufficientLengthError("Exp statistic needs at least one token");
  double phi = 0.0;
  for (std::size_t t = 1; t <= x.size(); ++t) {
    const TokenId tok = x[t - 1];
    if (tok >= key.vocab_size()) throw DomainError("token id out of range");
    phi -= std::log(1.0 - key.at((shift + t) % key.length(), tok));
  }
  return phi;
}

double exp_alignment_statistic(std::span<const TokenId> x, const ExpKey& key,
                               const ExpParams& params) {
  if (x.empty()) throw InsufficientLengthError("Exp detection needs at least one token");
  const std::size_t n = key.length();
  std::vector<double> costs(x.size() * n);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= key.vocab_size()) throw DomainError("token id out of range");
    for (std::size_t k = 0; k < n; ++k) costs[i * n + k] = std::log(1.0 - key.at(k, x[i]));
  }
  return min_alignment(costs, x.size(), n, params);
}

// ---------------------------------------------------------------------------
// ExpWatermark

ExpWatermark::ExpWatermark(ExpKey key, ExpParams params)
    : key_(std::move(key)), params_(params) {
  params_.validate();
  params_.key_length = key_.length();
}

ExpWatermark::ExpWatermark(const WatermarkKey& secret, ExpParams params, std::size_t vocab_size)
    : ExpWatermark((params.validate(), ExpKey::from_secret(secret, params.key_length, vocab_size)),
                   params) {}

ProbDist ExpWatermark::watermarked_dist(const ProbDist& base, std::span<const TokenId>) const {
  return base;
}

TokenId ExpWatermark::next_token(const ProbDist& base, std::span<const TokenId>,
                                 std::size_t position, std::size_t shift, Decoding,
                                 Rng&) const {
  return exp_embed_step(base, key_.row((shift + position + 1) % key_.length()));
}

DetectionReport ExpWatermark::detect(std::span<const TokenId> x) const {
  if (x.empty()) throw InsufficientLengthError("Exp detection needs at least one token");
  const std::size_t l = x.size();
  const std::size_t n = key_.length();
  const double observed = exp_alignment_statistic(x, key_, params_);

  // Reference keys only matter at the tokens present in x, so each resample
  // draws one fresh uniform per (distinct token, key row).
  std::unordered_map<TokenId, std::size_t> slot;
  std::vector<std::size_t> slot_of(l);
  for (std::size_t i = 0; i < l; ++i) {
    slot_of[i] = slot.try_emplace(x[i], slot.size()).first->second;
  }
  static const WatermarkKey kResampleKey = WatermarkKey::derive("exp-reference-keys");
  auto message = encode_tokens(x);
  message.resize(message.size() + 8);
  std::vector<double> fresh(slot.size() * n);
  std::vector<double> costs(l * n);
  std::size_t as_extreme = 0;
  for (std::size_t r = 0; r < params_.resamples; ++r) {
    for (int b = 0; b < 8; ++b) {
      message[message.size() - 8 + b] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(r) >> (8 * b));
    }
    PrgStream prg(prf(kResampleKey, message));
    for (double& u : fresh) u = std::log(1.0 - clamp_xi(prg.next()));
    for (std::size_t i = 0; i < l; ++i) {
      std::copy_n(&fresh[slot_of[i] * n], n, &costs[i * n]);
    }
    if (min_alignment(costs, l, n, params_) <= observed) ++as_extreme;
  }
  DetectionReport rep;
  rep.kind = ScoreKind::p_value;
  rep.length = l;
  rep.statistic = observed;
  rep.value = static_cast<double>(1 + as_extreme) / static_cast<double>(params_.resamples + 1);
  rep.threshold = params_.threshold;
  rep.verdict = verdict_for(rep.kind, rep.value, rep.threshold);
  return rep;
}

DetectionReport exp_detect(std::span<const TokenId> x, const ExpKey& key,
                           const ExpParams& params) {
  return ExpWatermark(key, params).detect(x);
}

}  // namespace wmlab
