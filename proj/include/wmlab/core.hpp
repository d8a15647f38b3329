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

#pragma once

/// @file core.hpp
/// Foundational types shared by every wmlab module: token ids, probability
/// vectors, watermark keys, the keyed PRF, the seeded PRG and the green-list
/// partition of the vocabulary.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wmlab {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

/// Context placeholder used when fewer than h tokens precede a position.
inline constexpr TokenId kStartOfText = 0xFFFFFFFFu;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidKeyError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the vocabulary, or a malformed distribution.
class DomainError : public Error {
 public:
  using Error::Error;
};

class InsufficientLengthError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Malformed or version-mismatched file / wire document.
class FormatError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Probability vector over the vocabulary. Construction validates that the
/// entries are non-negative and sum to one within 1e-9.
class ProbDist {
 public:
  ProbDist() = default;
  explicit ProbDist(std::vector<double> probs);

  /// Scales non-negative weights to sum to one.
  static ProbDist normalized(std::vector<double> weights);
  static ProbDist uniform(std::size_t size);
  static ProbDist one_hot(std::size_t size, TokenId hot);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const { return probs_; }

  /// Shannon entropy in nats.
  double entropy() const;

 private:
  std::vector<double> probs_;
};

/// Unnormalized log-scores over the vocabulary. Entries must be finite,
/// except that -inf marks an impossible token.
class Logits {
 public:
  Logits() = default;
  explicit Logits(std::vector<double> values);

  /// log(p); zero-probability tokens map to -inf.
  static Logits from_probs(const ProbDist& p);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::span<const double> values() const { return values_; }

 private:
  std::vector<double> values_;
};

ProbDist softmax(const Logits& logits);

// ---------------------------------------------------------------------------
// Keys and keyed pseudorandomness
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMinKeyBytes = 16;

/// Secret byte string. At least 16 bytes.
class WatermarkKey {
 public:
  explicit WatermarkKey(std::vector<std::uint8_t> bytes);

  static WatermarkKey from_hex(std::string_view hex);
  /// Deterministic key derived from a label, for experiments and tests.
  static WatermarkKey derive(std::string_view label, std::uint64_t index = 0);

  std::span<const std::uint8_t> bytes() const { return bytes_; }
  std::string to_hex() const;

  friend bool operator==(const WatermarkKey&, const WatermarkKey&) = default;

 private:
  std::vector<std::uint8_t> bytes_;
};

using Seed = std::array<std::uint8_t, 32>;

/// HMAC-SHA256 of `message` under `key`.
Seed prf(std::span<const std::uint8_t> key, std::span<const std::uint8_t> message);
Seed prf(const WatermarkKey& key, std::span<const std::uint8_t> message);
Seed prf(const WatermarkKey& key, std::string_view message);

/// Little-endian 4-byte encoding of each token id; the PRF message format
/// for token contexts.
std::vector<std::uint8_t> encode_tokens(std::span<const TokenId> tokens);

/// Deterministic stream of uniforms in [0,1) expanded from a seed.
///
/// The generator is std::mt19937_64 keyed through std::seed_seq with the
/// eight 32-bit little-endian words of the seed; each output keeps the top
/// 53 bits. Both are fully specified by the standard, so streams are
/// identical across platforms.
class PrgStream {
 public:
  explicit PrgStream(const Seed& seed);
  double next();
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

std::vector<double> prg_uniform(const Seed& seed, std::size_t count);

// ---------------------------------------------------------------------------
// Green lists
// ---------------------------------------------------------------------------

/// Number of green tokens for a vocabulary of `vocab_size`: floor(gamma*|V|).
std::size_t green_list_size(std::size_t vocab_size, double gamma);

/// Membership mask over the vocabulary with exactly floor(gamma*|V|) set.
class GreenList {
 public:
  GreenList(std::vector<std::uint8_t> mask, double gamma);

  bool contains(TokenId t) const { return t < mask_.size() && mask_[t] != 0; }
  std::size_t vocab_size() const { return mask_.size(); }
  std::size_t count() const { return count_; }
  double gamma() const { return gamma_; }
  std::span<const std::uint8_t> mask() const { return mask_; }
  std::vector<TokenId> members() const;

 private:
  std::vector<std::uint8_t> mask_;
  double gamma_;
  std::size_t count_;
};

/// Seeded Fisher-Yates permutation of 0..|V|-1; the first floor(gamma*|V|)
/// permuted ids are green.
GreenList green_partition(const Seed& seed, std::size_t vocab_size, double gamma);

void validate_gamma(double gamma);

// ---------------------------------------------------------------------------
// General-purpose experiment randomness
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer; used to derive independent per-trial seeds from a
/// master seed and a counter.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Portable RNG for sampling and trials (no implementation-defined
/// std::*_distribution).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Inverse-CDF draw from a distribution given one uniform in [0,1).
TokenId sample_from(const ProbDist& p, double u);

/// Box-Muller with two uniforms in [0,1); deterministic.
double box_muller(double u1, double u2);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

}  // namespace wmlab
