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

#include "wmlab/service.hpp"

#include <cmath>
#include <cstdlib>
#include <random>

#include "httplib.h"
#include "json_io.hpp"

namespace wmlab {

using detail::json;

Clock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

// ---------------------------------------------------------------------------
// Rate limiting

TokenBucket::TokenBucket(double capacity, double refill_per_second, double now)
    : capacity_(capacity), rate_(refill_per_second), tokens_(capacity), last_(now) {
  if (!(capacity >= 1.0)) throw ParameterError("bucket capacity must be >= 1");
  if (!(refill_per_second > 0.0)) throw ParameterError("refill rate must be positive");
}

double TokenBucket::available(double now) const {
  return std::min(capacity_, tokens_ + std::max(0.0, now - last_) * rate_);
}

TokenBucket::Decision TokenBucket::try_acquire(double now) {
  tokens_ = available(now);
  last_ = std::max(last_, now);
  if (tokens_ >= 1.0) {
    tokens_ -= 1.0;
    return {true, 0.0};
  }
  return {false, (1.0 - tokens_) / rate_};
}

RateLimiter::RateLimiter(double capacity, double refill_per_second, Clock clock)
    : capacity_(capacity), rate_(refill_per_second), clock_(std::move(clock)) {
  TokenBucket probe(capacity, refill_per_second, 0.0);  // validates
  (void)probe;
}

TokenBucket::Decision RateLimiter::check(const std::string& client) {
  const double now = clock_();
  std::lock_guard lock(mutex_);
  auto it = buckets_.find(client);
  if (it == buckets_.end()) it = buckets_.emplace(client, TokenBucket(capacity_, rate_, now)).first;
  return it->second.try_acquire(now);
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ServiceConfig parse_service_config(std::string_view json_text, const std::filesystem::path& base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("service config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("service config must be a JSON object");
  ServiceConfig c;
  int version = ServiceConfig::kFormatVersion;
  detail::read_opt(j, "format_version", version);
  if (version != ServiceConfig::kFormatVersion) throw FormatError("unsupported config version");
  if (j.contains("model")) {
    const json& m = j["model"];
    std::string path;
    detail::read_opt(m, "path", path);
    c.model_path = resolve(base, path);
    if (m.contains("toy")) {
      const json& t = m["toy"];
      detail::read_opt(t, "vocab_size", c.world.vocab_size);
      detail::read_opt(t, "order", c.world.order);
      detail::read_opt(t, "alpha", c.world.alpha);
      detail::read_opt(t, "teacher_concentration", c.world.teacher_concentration);
      detail::read_opt(t, "documents", c.world.documents);
      detail::read_opt(t, "document_length", c.world.document_length);
      detail::read_opt(t, "seed", c.world.seed);
    }
  }
  if (j.contains("schemes")) {
    if (!j["schemes"].is_object()) throw FormatError("'schemes' must map scheme names to files");
    for (const auto& [name, path] : j["schemes"].items()) {
      if (!path.is_string()) throw FormatError("key ring path must be a string");
      c.keyrings[parse_scheme(name)] = resolve(base, path.get<std::string>());
    }
  }
  if (j.contains("dp")) {
    const json& d = j["dp"];
    std::string policy = "client";
    detail::read_opt(d, "policy", policy);
    if (policy == "off") {
      c.dp_policy = DpPolicy::off;
    } else if (policy == "client") {
      c.dp_policy = DpPolicy::client;
    } else if (policy == "always") {
      c.dp_policy = DpPolicy::always;
    } else {
      throw ParameterError("dp.policy must be off, client or always");
    }
    detail::read_opt(d, "sigma", c.dp_sigma);
    detail::read_opt(d, "log_p_sensitivity", c.dp_log_p_sensitivity);
  }
  if (j.contains("rate_limit")) {
    detail::read_opt(j["rate_limit"], "capacity", c.rate_capacity);
    detail::read_opt(j["rate_limit"], "refill_per_second", c.rate_refill_per_second);
  }
  if (j.contains("limits")) {
    detail::read_opt(j["limits"], "max_text_tokens", c.max_text_tokens);
    detail::read_opt(j["limits"], "max_generate_tokens", c.max_generate_tokens);
  }
  detail::read_opt(j, "verdict_only", c.verdict_only);
  std::string audit;
  detail::read_opt(j, "audit_log", audit);
  c.audit_log = resolve(base, audit);
  detail::read_opt(j, "host", c.host);
  detail::read_opt(j, "port", c.port);
  if (!(c.dp_sigma >= 0.0)) throw ParameterError("dp.sigma must be >= 0");
  if (c.port < 0 || c.port > 65535) throw ParameterError("port out of range");
  if (c.max_text_tokens < 1 || c.max_generate_tokens < 1) throw ParameterError("limits must be >= 1");
  TokenBucket(c.rate_capacity, c.rate_refill_per_second, 0.0);  // validates
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_service_config(text, path.parent_path());
}

std::filesystem::path resolve_config_path(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("WMLAB_CONFIG"); env != nullptr && *env != '\0') return env;
  return fallback;
}

// ---------------------------------------------------------------------------
// Service

struct DetectionService::Impl {
  httplib::Server server;
};

DetectionService::DetectionService(std::shared_ptr<const LanguageModel> model,
                                   std::map<Scheme, SchemeState> schemes, ServiceConfig config,
                                   Clock clock)
    : model_(std::move(model)),
      schemes_(std::move(schemes)),
      config_(std::move(config)),
      limiter_(config_.rate_capacity, config_.rate_refill_per_second, std::move(clock)),
      impl_(std::make_shared<Impl>()) {
  if (schemes_.empty()) throw ParameterError("service needs at least one scheme");
  for (const auto& [scheme, st] : schemes_) {
    if (!st.keys || st.keys->scheme() != scheme) throw ParameterError("scheme / key ring mismatch");
    if (st.keys->vocab_size() != model_->vocab_size()) {
      throw ParameterError("key ring vocabulary does not match the model");
    }
    if (config_.dp_policy != DpPolicy::off && !st.noise_key) {
      throw ParameterError("DP enabled but key ring for " + std::string(to_string(scheme)) +
                           " has no noise_key");
    }
  }
  if (!config_.audit_log.empty()) {
    audit_.open(config_.audit_log, std::ios::app);
    if (!audit_) throw Error("cannot open audit log " + config_.audit_log.string());
  }
}

std::unique_ptr<DetectionService> DetectionService::from_config(const ServiceConfig& config) {
  std::shared_ptr<const LanguageModel> model;
  if (!config.model_path.empty()) {
    model = std::make_shared<MarkovModel>(MarkovModel::load(config.model_path));
  } else {
    model = build_toy_world(config.world).generator;
  }
  std::map<Scheme, SchemeState> schemes;
  for (const auto& [scheme, path] : config.keyrings) {
    KeyringFile f = load_keyring(path);
    if (f.keys.scheme() != scheme) {
      throw ParameterError(path.string() + " holds " + std::string(to_string(f.keys.scheme())) +
                           " keys");
    }
    schemes.emplace(scheme, SchemeState{std::make_shared<const KeySet>(std::move(f.keys)),
                                        std::move(f.thresholds), std::move(f.noise_key)});
  }
  return std::make_unique<DetectionService>(std::move(model), std::move(schemes), config);
}

const DetectionService::SchemeState& DetectionService::scheme_state(Scheme s) const {
  const auto it = schemes_.find(s);
  if (it == schemes_.end()) {
    throw ParameterError("scheme '" + std::string(to_string(s)) + "' is not served");
  }
  return it->second;
}

Scheme DetectionService::default_scheme() const { return schemes_.begin()->first; }

NoisedReport DetectionService::detect_tokens(std::span<const TokenId> x, Scheme scheme,
                                             bool dp) const {
  const SchemeState& st = scheme_state(scheme);
  const ThresholdTable* table = st.thresholds ? &*st.thresholds : nullptr;
  const Detector detector = [&](std::span<const TokenId> t) {
    return detect_multi(t, *st.keys, table);
  };
  const bool use_dp = config_.dp_policy == DpPolicy::always ||
                      (config_.dp_policy == DpPolicy::client && dp);
  if (!use_dp) {
    NoisedReport r;
    r.exact = detector(x);
    r.noised_value = r.exact.value;
    r.verdict = r.exact.verdict;
    return r;
  }
  DpParams p = DpParams::for_scheme(st.keys->config(), *st.noise_key, config_.dp_sigma);
  p.log_p_sensitivity = config_.dp_log_p_sensitivity;
  return dp_detect(x, detector, p);
}

namespace {

HttpResult error_result(int status, const std::string& message) {
  json j;
  j["error"] = message;
  return {status, j.dump(), std::nullopt};
}

HttpResult rate_limited(double retry_after) {
  json j;
  j["error"] = "rate limited";
  j["retry_after"] = retry_after;
  return {429, j.dump(), retry_after};
}

json parse_body(const std::string& body) {
  json j = json::parse(body);  // json::parse_error handled by callers
  if (!j.is_object()) throw ParameterError("request body must be a JSON object");
  return j;
}

}  // namespace

void DetectionService::audit(const std::string& client, const char* endpoint, int status) {
  if (!audit_.is_open()) return;
  std::lock_guard lock(audit_mutex_);
  audit_ << std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count()
         << '\t' << client << '\t' << endpoint << '\t' << status << '\n';
  audit_.flush();
}

HttpResult DetectionService::handle_detect(const std::string& body, const std::string& client) {
  HttpResult out;
  if (const auto d = limiter_.check(client); !d.allowed) {
    out = rate_limited(d.retry_after);
  } else {
    try {
      const json req = parse_body(body);
      if (!req.contains("text") || !req["text"].is_string()) {
        throw ParameterError("'text' (string) is required");
      }
      Scheme scheme = default_scheme();
      if (req.contains("scheme")) scheme = parse_scheme(req["scheme"].get<std::string>());
      const bool dp = req.value("dp", false);
      const TokenSequence x = vocab().encode(req["text"].get<std::string>());
      if (x.size() > config_.max_text_tokens) {
        out = error_result(413, "text exceeds " + std::to_string(config_.max_text_tokens) +
                                    " tokens");
      } else {
        const NoisedReport r = detect_tokens(x, scheme, dp);
        json j;
        if (!config_.verdict_only) {
          j["score_kind"] = std::string(to_string(r.exact.kind));
          j["score"] = r.noised_value;
          j["threshold"] = r.exact.threshold;
        }
        j["watermarked"] = r.verdict;
        out = {200, j.dump(), std::nullopt};
      }
    } catch (const json::exception& e) {
      out = error_result(400, std::string("invalid JSON: ") + e.what());
    } catch (const Error& e) {
      out = error_result(400, e.what());
    }
  }
  audit(client, "/v1/detect", out.status);
  return out;
}

HttpResult DetectionService::handle_generate(const std::string& body, const std::string& client) {
  HttpResult out;
  if (const auto d = limiter_.check(client); !d.allowed) {
    out = rate_limited(d.retry_after);
  } else {
    try {
      const json req = parse_body(body);
      Scheme scheme = default_scheme();
      if (req.contains("scheme")) scheme = parse_scheme(req["scheme"].get<std::string>());
      const std::string prompt_text = req.value("prompt", std::string());
      const auto max_tokens = req.value("max_tokens", std::int64_t{200});
      const auto top = req.value("top_logprobs", std::int64_t{0});
      if (max_tokens < 1) throw ParameterError("max_tokens must be >= 1");
      if (top < 0 || top > 5) throw ParameterError("top_logprobs must be in [0, 5]");
      if (static_cast<std::uint64_t>(max_tokens) > config_.max_generate_tokens) {
        throw ParameterError("max_tokens exceeds " + std::to_string(config_.max_generate_tokens));
      }
      const TokenSequence prompt = vocab().encode(prompt_text);
      if (prompt.size() > config_.max_text_tokens) {
        out = error_result(413, "prompt too long");
      } else {
        const std::uint64_t seed =
            req.contains("seed") ? req["seed"].get<std::uint64_t>()
                                 : derive_seed(std::random_device{}(), generation_counter_++);
        Rng rng(seed);
        const KeySet& keys = *scheme_state(scheme).keys;
        const Watermark& wm = keys.watermark(keys.size() == 1 ? 0 : rng.below(keys.size()));
        const std::size_t shift = wm.shift_period() > 1 ? rng.below(wm.shift_period()) : 0;
        TokenSequence ctx = prompt;
        json tokens = json::array();
        json lists = json::array();
        TokenSequence response;
        for (std::int64_t i = 0; i < max_tokens; ++i) {
          const ProbDist base = model_->next_dist(ctx);
          const TokenId t = wm.next_token(base, ctx, static_cast<std::size_t>(i), shift,
                                          Decoding::multinomial, rng);
          if (top > 0) {
            json entries = json::array();
            for (const auto& e : top_l(wm.watermarked_dist(base, ctx), static_cast<std::size_t>(top))) {
              entries.push_back({{"token", vocab().surface(e.token)},
                                 {"prob", e.prob},
                                 {"logprob", std::log(e.prob)}});
            }
            lists.push_back(std::move(entries));
          }
          ctx.push_back(t);
          response.push_back(t);
          tokens.push_back(vocab().surface(t));
        }
        json j;
        j["text"] = vocab().decode(response);
        j["tokens"] = std::move(tokens);
        if (top > 0) j["top_logprobs"] = std::move(lists);
        out = {200, j.dump(), std::nullopt};
      }
    } catch (const json::exception& e) {
      out = error_result(400, std::string("invalid request: ") + e.what());
    } catch (const Error& e) {
      out = error_result(400, e.what());
    }
  }
  audit(client, "/v1/generate", out.status);
  return out;
}

HttpResult DetectionService::handle_health() const {
  json j;
  j["status"] = "ok";
  json names = json::array();
  for (const auto& [s, st] : schemes_) names.push_back(std::string(to_string(s)));
  j["schemes"] = std::move(names);
  j["vocab_size"] = model_->vocab_size();
  return {200, j.dump(), std::nullopt};
}

namespace {

void reply(httplib::Response& res, const HttpResult& r) {
  res.status = r.status;
  if (r.retry_after) {
    res.set_header("Retry-After", std::to_string(static_cast<long long>(std::ceil(*r.retry_after))));
  }
  res.set_content(r.body, "application/json");
}

std::string client_of(const httplib::Request& req) {
  const std::string id = req.get_header_value("X-Client-Id");
  return id.empty() ? "anonymous" : id;
}

}  // namespace

int DetectionService::bind_any_port() {
  auto& srv = impl_->server;
  srv.Post("/v1/detect", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_detect(req.body, client_of(req)));
  });
  srv.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_generate(req.body, client_of(req)));
  });
  srv.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_health());
  });
  if (config_.port == 0) return srv.bind_to_any_port(config_.host);
  if (!srv.bind_to_port(config_.host, config_.port)) {
    throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  return config_.port;
}

void DetectionService::listen_after_bind() { impl_->server.listen_after_bind(); }

void DetectionService::serve() {
  bind_any_port();
  listen_after_bind();
}

void DetectionService::stop() { impl_->server.stop(); }

}  // namespace wmlab
