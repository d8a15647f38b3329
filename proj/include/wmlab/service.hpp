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

/// @file service.hpp
/// JSON-over-HTTP detection and generation service.
///
///   POST /v1/detect    {"text", "scheme"?, "dp"?}
///   POST /v1/generate  {"prompt", "max_tokens"?, "top_logprobs"?, "scheme"?, "seed"?}
///   GET  /v1/health
///
/// Handlers are plain functions of (body, client id) so they can be called
/// in-process; `serve` binds them to an HTTP listener. Clients are
/// identified by the X-Client-Id header and rate limited per id with a
/// token bucket. Responses never carry key bytes, per-key scores or noise
/// seeds.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "wmlab/dp_defense.hpp"
#include "wmlab/keyring.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab {

/// Seconds on a monotone clock.
using Clock = std::function<double()>;
Clock steady_clock_seconds();

class TokenBucket {
 public:
  struct Decision {
    bool allowed = false;
    /// Seconds until one token is available (0 when allowed).
    double retry_after = 0.0;
  };

  /// Throws ParameterError unless capacity >= 1 and refill_per_second > 0.
  TokenBucket(double capacity, double refill_per_second, double now);

  Decision try_acquire(double now);
  double available(double now) const;

 private:
  double capacity_;
  double rate_;
  double tokens_;
  double last_;
};

/// Independent bucket per client id; thread safe.
class RateLimiter {
 public:
  RateLimiter(double capacity, double refill_per_second, Clock clock = steady_clock_seconds());

  TokenBucket::Decision check(const std::string& client);
  double capacity() const { return capacity_; }
  double refill_per_second() const { return rate_; }

 private:
  double capacity_;
  double rate_;
  Clock clock_;
  std::mutex mutex_;
  std::unordered_map<std::string, TokenBucket> buckets_;
};

enum class DpPolicy { off, client, always };

struct ServiceConfig {
  static constexpr int kFormatVersion = 1;

  /// Markov model file; the toy world generator when empty.
  std::filesystem::path model_path;
  ToyWorldConfig world;
  std::map<Scheme, std::filesystem::path> keyrings;
  DpPolicy dp_policy = DpPolicy::client;
  double dp_sigma = 4.0;
  /// log p-value sensitivity for Exp under DP.
  double dp_log_p_sensitivity = 1.0;
  double rate_capacity = 60.0;
  double rate_refill_per_second = 1.0;
  std::size_t max_text_tokens = 2048;
  std::size_t max_generate_tokens = 512;
  /// Hardening mode: detection returns only the boolean verdict.
  bool verdict_only = false;
  std::filesystem::path audit_log;
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Parses a config document; relative paths resolve against `base_dir`.
/// Throws FormatError / ParameterError on invalid content.
ServiceConfig parse_service_config(std::string_view json_text,
                                   const std::filesystem::path& base_dir = {});
ServiceConfig load_service_config(const std::filesystem::path& path);
/// WMLAB_CONFIG when set, else `fallback`.
std::filesystem::path resolve_config_path(const std::filesystem::path& fallback);

struct HttpResult {
  int status = 200;
  std::string body;  // JSON
  std::optional<double> retry_after;
};

class DetectionService {
 public:
  struct SchemeState {
    std::shared_ptr<const KeySet> keys;
    std::optional<ThresholdTable> thresholds;
    std::optional<WatermarkKey> noise_key;
  };

  DetectionService(std::shared_ptr<const LanguageModel> model,
                   std::map<Scheme, SchemeState> schemes, ServiceConfig config,
                   Clock clock = steady_clock_seconds());

  /// Loads the model (or builds the toy world) and every key ring.
  static std::unique_ptr<DetectionService> from_config(const ServiceConfig& config);

  HttpResult handle_detect(const std::string& body, const std::string& client);
  HttpResult handle_generate(const std::string& body, const std::string& client);
  HttpResult handle_health() const;

  /// In-process equivalent of /v1/detect: the exact or noised report the
  /// wire response is projected from.
  NoisedReport detect_tokens(std::span<const TokenId> x, Scheme scheme, bool dp) const;

  const Vocabulary& vocab() const { return model_->vocab(); }
  const ServiceConfig& config() const { return config_; }
  RateLimiter& limiter() { return limiter_; }

  /// Blocks serving HTTP on config().host:port until stop() is called.
  void serve();
  /// Binds to an ephemeral port; returns it. Used by tests.
  int bind_any_port();
  void listen_after_bind();
  void stop();

 private:
  struct Impl;
  const SchemeState& scheme_state(Scheme s) const;
  Scheme default_scheme() const;
  void audit(const std::string& client, const char* endpoint, int status);

  std::shared_ptr<const LanguageModel> model_;
  std::map<Scheme, SchemeState> schemes_;
  ServiceConfig config_;
  RateLimiter limiter_;
  std::atomic<std::uint64_t> generation_counter_{0};
  std::mutex audit_mutex_;
  std::ofstream audit_;
  std::shared_ptr<Impl> impl_;
};

}  // namespace wmlab
