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

#include "wmlab/vocabulary.hpp"

#include <algorithm>
#include <cctype>

namespace wmlab {

Vocabulary::Vocabulary(std::vector<std::string> surfaces, std::optional<TokenId> unk_id)
    : surfaces_(std::move(surfaces)), unk_(unk_id) {
  if (surfaces_.size() < 2) throw ParameterError("vocabulary needs at least two tokens");
  if (unk_ && *unk_ >= surfaces_.size()) throw ParameterError("unknown id out of range");
  index_.reserve(surfaces_.size());
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    if (!index_.emplace(surfaces_[i], static_cast<TokenId>(i)).second) {
      throw ParameterError("duplicate surface form '" + surfaces_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::synthetic(std::size_t size) {
  if (size < 2) throw ParameterError("vocabulary needs at least two tokens");
  std::vector<std::string> s;
  s.reserve(size);
  s.emplace_back(kUnknownSurface);
  for (std::size_t i = 1; i < size; ++i) s.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(s), TokenId{0});
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary Vocabulary::from_corpus(std::string_view text, std::size_t max_types) {
  if (max_types < 1) throw ParameterError("max_types must be positive");
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::size_t pos = 0;
  for (auto& w : split_words(text)) {
    auto [it, inserted] = counts.try_emplace(std::move(w));
    if (inserted) it->second.first = pos;
    ++it->second.count;
    ++pos;
  }
  if (counts.empty()) throw TrainingError("corpus is empty");
  std::vector<std::pair<std::string, Entry>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first < b.second.first;
  });
  if (ranked.size() > max_types) ranked.resize(max_types);
  std::vector<std::string> s;
  s.reserve(ranked.size() + 1);
  for (auto& [w, e] : ranked) {
    if (w != kUnknownSurface) s.push_back(w);
  }
  s.emplace_back(kUnknownSurface);
  const auto unk = static_cast<TokenId>(s.size() - 1);
  return Vocabulary(std::move(s), unk);
}

const std::string& Vocabulary::surface(TokenId id) const {
  if (!valid(id)) throw DomainError("token id " + std::to_string(id) + " out of range");
  return surfaces_[id];
}

std::optional<TokenId> Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::validate(std::span<const TokenId> tokens) const {
  for (TokenId t : tokens) {
    if (!valid(t)) {
      throw DomainError("token id " + std::to_string(t) + " out of range for |V| = " +
                        std::to_string(size()));
    }
  }
}

TokenSequence Vocabulary::encode(std::string_view text) const {
  TokenSequence out;
  for (const auto& w : split_words(text)) {
    if (auto id = lookup(w)) {
      out.push_back(*id);
    } else if (unk_) {
      out.push_back(*unk_);
    } else {
      throw DomainError("word '" + w + "' is not in the vocabulary");
    }
  }
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += surface(tokens[i]);
  }
  return out;
}

}  // namespace wmlab
