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

#include "wmlab/core.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace wmlab {

namespace {

constexpr double kSumTolerance = 1e-9;

double to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace

// ---------------------------------------------------------------------------
// ProbDist / Logits

ProbDist::ProbDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw DomainError("probability vector is empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw DomainError("probability entries must be finite and non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw DomainError("probabilities sum to " + std::to_string(sum));
  }
}

ProbDist ProbDist::normalized(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw DomainError("weights must be finite and non-negative");
    }
    sum += w;
  }
  if (!(sum > 0.0)) throw DomainError("weights sum to zero");
  for (double& w : weights) w /= sum;
  return ProbDist(std::move(weights));
}

ProbDist ProbDist::uniform(std::size_t size) {
  if (size == 0) throw DomainError("empty vocabulary");
  return ProbDist(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

ProbDist ProbDist::one_hot(std::size_t size, TokenId hot) {
  if (hot >= size) throw DomainError("one-hot index out of range");
  std::vector<double> p(size, 0.0);
  p[hot] = 1.0;
  return ProbDist(std::move(p));
}

double ProbDist::entropy() const {
  double h = 0.0;
  for (double p : probs_) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Logits::Logits(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw DomainError("logits must be finite or -inf");
    }
  }
}

Logits Logits::from_probs(const ProbDist& p) {
  std::vector<double> v(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = p[i] > 0.0 ? std::log(p[i]) : -std::numeric_limits<double>::infinity();
  }
  return Logits(std::move(v));
}

ProbDist softmax(const Logits& logits) {
  if (logits.size() == 0) throw DomainError("empty logits");
  const auto vals = logits.values();
  const double mx = *std::max_element(vals.begin(), vals.end());
  if (!std::isfinite(mx)) throw DomainError("all logits are -inf");
  std::vector<double> out(vals.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    out[i] = std::exp(vals[i] - mx);
    sum += out[i];
  }
  for (double& o : out) o /= sum;
  return ProbDist(std::move(out));
}

// ---------------------------------------------------------------------------
// Keys, PRF, PRG

WatermarkKey::WatermarkKey(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
  if (bytes_.empty()) throw InvalidKeyError("watermark key is empty");
  if (bytes_.size() < kMinKeyBytes) {
    throw InvalidKeyError("watermark key must be at least 16 bytes");
  }
}

WatermarkKey WatermarkKey::from_hex(std::string_view hex) {
  return WatermarkKey(wmlab::from_hex(hex));
}

WatermarkKey WatermarkKey::derive(std::string_view label, std::uint64_t index) {
  static constexpr std::uint8_t kRoot[16] = {'w', 'm', 'l', 'a', 'b', '-', 'k', 'e',
                                             'y', '-', 'd', 'e', 'r', 'i', 'v', 'e'};
  std::vector<std::uint8_t> msg(label.begin(), label.end());
  for (int i = 0; i < 8; ++i) msg.push_back(static_cast<std::uint8_t>(index >> (8 * i)));
  const Seed s = prf(std::span<const std::uint8_t>(kRoot), msg);
  return WatermarkKey(std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::string WatermarkKey::to_hex() const { return wmlab::to_hex(bytes_); }

Seed prf(std::span<const std::uint8_t> key, std::span<const std::uint8_t> message) {
  if (key.empty()) throw InvalidKeyError("PRF key is empty");
  Seed out{};
  unsigned int len = 0;
  const unsigned char* ok = HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
                                 message.data(), message.size(), out.data(), &len);
  if (ok == nullptr || len != out.size()) throw Error("HMAC-SHA256 failed");
  return out;
}

Seed prf(const WatermarkKey& key, std::span<const std::uint8_t> message) {
  return prf(key.bytes(), message);
}

Seed prf(const WatermarkKey& key, std::string_view message) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(message.data());
  return prf(key.bytes(), std::span<const std::uint8_t>(p, message.size()));
}

std::vector<std::uint8_t> encode_tokens(std::span<const TokenId> tokens) {
  std::vector<std::uint8_t> out;
  out.reserve(tokens.size() * 4);
  for (TokenId t : tokens) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(t >> (8 * i)));
  }
  return out;
}

namespace {

std::mt19937_64 engine_from_seed(const Seed& seed) {
  std::array<std::uint32_t, 8> words{};
  for (std::size_t i = 0; i < words.size(); ++i) {
    words[i] = static_cast<std::uint32_t>(seed[4 * i]) |
               (static_cast<std::uint32_t>(seed[4 * i + 1]) << 8) |
               (static_cast<std::uint32_t>(seed[4 * i + 2]) << 16) |
               (static_cast<std::uint32_t>(seed[4 * i + 3]) << 24);
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

PrgStream::PrgStream(const Seed& seed) : engine_(engine_from_seed(seed)) {}

double PrgStream::next() { return to_unit(engine_()); }

std::vector<double> prg_uniform(const Seed& seed, std::size_t count) {
  PrgStream prg(seed);
  std::vector<double> out(count);
  for (double& u : out) u = prg.next();
  return out;
}

// ---------------------------------------------------------------------------
// Green lists

void validate_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("gamma must lie in (0,1)");
}

std::size_t green_list_size(std::size_t vocab_size, double gamma) {
  validate_gamma(gamma);
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return static_cast<std::size_t>(std::floor(gamma * static_cast<double>(vocab_size) + 1e-9));
}

GreenList::GreenList(std::vector<std::uint8_t> mask, double gamma)
    : mask_(std::move(mask)),
      gamma_(gamma),
      count_(static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}))) {}

std::vector<TokenId> GreenList::members() const {
  std::vector<TokenId> out;
  out.reserve(count_);
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    if (mask_[i]) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

GreenList green_partition(const Seed& seed, std::size_t vocab_size, double gamma) {
  const std::size_t green = green_list_size(vocab_size, gamma);
  if (vocab_size < 2) throw ParameterError("vocabulary must have at least two tokens");
  std::vector<TokenId> perm(vocab_size);
  std::iota(perm.begin(), perm.end(), TokenId{0});
  PrgStream prg(seed);
  for (std::size_t i = vocab_size - 1; i > 0; --i) {
    auto j = static_cast<std::size_t>(prg.next() * static_cast<double>(i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }
  std::vector<std::uint8_t> mask(vocab_size, 0);
  for (std::size_t i = 0; i < green; ++i) mask[perm[i]] = 1;
  return GreenList(std::move(mask), gamma);
}

// ---------------------------------------------------------------------------
// Experiment randomness

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(mix64(master) ^ mix64(stream + 0x632BE59BD9B4E019ull));
}

double Rng::uniform() { return to_unit(engine_()); }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ParameterError("Rng::below requires n > 0");
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return box_muller(u1, u2);
}

double box_muller(double u1, double u2) {
  // 1 - u1 lies in (0,1], keeping the logarithm finite.
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

TokenId sample_from(const ProbDist& p, double u) {
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last_positive = i;
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // Rounding left u above the accumulated mass.
  return static_cast<TokenId>(last_positive);
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw FormatError("hex string has odd length");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError("invalid hex digit");
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
  }
  return out;
}

}  // namespace wmlab
