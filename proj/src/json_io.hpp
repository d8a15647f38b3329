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

// Internal JSON helpers shared by the library sources. Not installed.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab::detail {

using nlohmann::json;

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Reads `key` from `j` when present; wraps type errors in FormatError.
template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("field '") + key + "': " + e.what());
  }
}

inline json to_json(const SchemeConfig& c) {
  json j;
  j["scheme"] = std::string(to_string(c.scheme));
  switch (c.scheme) {
    case Scheme::kgw:
      j["gamma"] = c.kgw.gamma;
      j["delta"] = c.kgw.delta;
      j["h"] = c.kgw.h;
      j["threshold"] = c.kgw.threshold;
      break;
    case Scheme::unigram:
      j["gamma"] = c.unigram.gamma;
      j["delta"] = c.unigram.delta;
      j["threshold"] = c.unigram.threshold;
      break;
    case Scheme::exp:
      j["key_length"] = c.exp.key_length;
      j["resamples"] = c.exp.resamples;
      j["gap_penalty"] = c.exp.gap_penalty;
      j["band"] = c.exp.band;
      j["threshold"] = c.exp.threshold;
      break;
  }
  return j;
}

inline SchemeConfig scheme_config_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("scheme parameters must be a JSON object");
  SchemeConfig c;
  std::string name = "kgw";
  read_opt(j, "scheme", name);
  c.scheme = parse_scheme(name);
  read_opt(j, "gamma", c.kgw.gamma);
  read_opt(j, "delta", c.kgw.delta);
  read_opt(j, "h", c.kgw.h);
  read_opt(j, "threshold", c.kgw.threshold);
  c.unigram.gamma = c.kgw.gamma;
  c.unigram.delta = c.kgw.delta;
  c.unigram.threshold = c.kgw.threshold;
  if (c.scheme == Scheme::exp) c.exp.threshold = kDefaultPThreshold;
  read_opt(j, "key_length", c.exp.key_length);
  read_opt(j, "resamples", c.exp.resamples);
  read_opt(j, "gap_penalty", c.exp.gap_penalty);
  read_opt(j, "band", c.exp.band);
  if (c.scheme == Scheme::exp) read_opt(j, "threshold", c.exp.threshold);
  c.validate();
  return c;
}

inline json to_json(const DetectionReport& r) {
  json j;
  j["score_kind"] = std::string(to_string(r.kind));
  j["score"] = r.value;
  j["threshold"] = r.threshold;
  j["watermarked"] = r.verdict;
  j["length"] = r.length;
  if (r.green_count) j["green_count"] = *r.green_count;
  if (r.statistic) j["statistic"] = *r.statistic;
  return j;
}

}  // namespace wmlab::detail
