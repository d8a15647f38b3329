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

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wmlab/core.hpp"

namespace wmlab {

inline constexpr std::size_t kDefaultMaxTypes = 8192;
inline constexpr std::string_view kUnknownSurface = "<unk>";

/// Dense token ids 0..|V|-1 with their display strings. Text is tokenized by
/// whitespace splitting after ASCII lowercasing; words outside the vocabulary
/// map to the unknown id when the vocabulary has one.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> surfaces,
                      std::optional<TokenId> unk_id = std::nullopt);

  /// "<unk>" at id 0 followed by "w1" .. "w{size-1}".
  static Vocabulary synthetic(std::size_t size);

  /// The `max_types` most frequent lowercased words (ties by first
  /// occurrence) plus a trailing unknown id.
  static Vocabulary from_corpus(std::string_view text, std::size_t max_types = kDefaultMaxTypes);

  std::size_t size() const { return surfaces_.size(); }
  const std::string& surface(TokenId id) const;
  std::optional<TokenId> lookup(std::string_view word) const;
  std::optional<TokenId> unk_id() const { return unk_; }
  std::span<const std::string> surfaces() const { return surfaces_; }

  bool valid(TokenId id) const { return id < surfaces_.size(); }
  /// Throws DomainError on the first invalid id.
  void validate(std::span<const TokenId> tokens) const;

  /// Throws DomainError for an unknown word when there is no unknown id.
  TokenSequence encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> index_;
  std::optional<TokenId> unk_;
};

/// Lowercased whitespace-separated words.
std::vector<std::string> split_words(std::string_view text);

}  // namespace wmlab
