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

#include "wmlab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "wmlab/attacks.hpp"

namespace wmlab {

namespace {

void check_trials(std::size_t trials) {
  if (trials == 0) throw ParameterError("trials must be positive");
}

bool bernoulli(Rng& rng, double p) { return rng.uniform() < p; }

std::size_t binomial_draw(Rng& rng, std::size_t n, double p) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) k += bernoulli(rng, p) ? 1 : 0;
  return k;
}

// C(n,k) a^k (1-a)^(n-k), evaluated in log space.
double binomial_term(std::size_t n, std::size_t k, double a) {
  if (a <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (a >= 1.0) return k == n ? 1.0 : 0.0;
  return std::exp(log_binomial(n, k) + static_cast<double>(k) * std::log(a) +
                  static_cast<double>(n - k) * std::log1p(-a));
}

}  // namespace

BoundCheckResult make_bound_check(std::string name, double closed_form, double monte_carlo,
                                  std::size_t trials, double tolerance) {
  check_trials(trials);
  BoundCheckResult r;
  r.name = std::move(name);
  r.closed_form = closed_form;
  r.monte_carlo = monte_carlo;
  r.trials = trials;
  r.abs_diff = std::abs(closed_form - monte_carlo);
  r.tolerance = tolerance;
  r.pass = r.abs_diff <= tolerance;
  return r;
}

void write_bound_checks_csv(std::ostream& out, const std::vector<BoundCheckResult>& rows) {
  out << "name,closed_form,monte_carlo,trials,abs_diff,tolerance,pass\r\n";
  const auto old = out.precision(12);
  for (const auto& r : rows) {
    out << r.name << ',' << r.closed_form << ',' << r.monte_carlo << ',' << r.trials << ','
        << r.abs_diff << ',' << r.tolerance << ',' << (r.pass ? "true" : "false") << "\r\n";
  }
  out.precision(old);
}

double thm1_expected_z(double z, std::size_t l, std::size_t s) {
  if (l == 0) throw ParameterError("l must be >= 1");
  return z * std::sqrt(static_cast<double>(l) / static_cast<double>(l + s));
}

double log_binomial(std::size_t n, std::size_t k) {
  if (k > n) throw ParameterError("k must not exceed n");
  const auto N = static_cast<double>(n);
  const auto K = static_cast<double>(k);
  return std::lgamma(N + 1.0) - std::lgamma(K + 1.0) - std::lgamma(N - K + 1.0);
}

double thm2_prob(std::size_t n, double gamma, std::size_t c) {
  if (n < 1) throw ParameterError("n must be >= 1");
  validate_gamma(gamma);
  double fail = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double below = 0.0;  // P(one competitor is green under fewer than k keys)
    for (std::size_t m = 0; m < k; ++m) below += binomial_term(n - k, m, gamma);
    const double p_k = 1.0 - std::pow(std::min(below, 1.0), static_cast<double>(c));
    fail += binomial_term(n, k, gamma) * p_k;
  }
  return 1.0 - fail;
}

double thm2_monte_carlo(std::size_t n, double gamma, std::size_t c, std::size_t trials,
                        Rng& rng) {
  if (n < 1) throw ParameterError("n must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0,1]");
  check_trials(trials);
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = binomial_draw(rng, n, gamma);
    bool success = k > n / 2;
    if (!success) {
      success = true;
      for (std::size_t j = 0; j < c && success; ++j) {
        if (binomial_draw(rng, n - k, gamma) >= k) success = false;
      }
    }
    ok += success ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(trials);
}

double thm2_greedy_simulation(std::size_t n, double gamma, std::size_t c, std::size_t trials,
                              Rng& rng) {
  if (n < 1) throw ParameterError("n must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0,1]");
  check_trials(trials);
  std::vector<std::size_t> votes(c + 1);
  std::vector<std::size_t> green;
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t key = 0; key < n; ++key) {
      const bool top_green = bernoulli(rng, gamma);
      green.clear();
      for (std::size_t j = 1; j <= c; ++j) {
        if (bernoulli(rng, gamma)) green.push_back(j);
      }
      if (top_green || green.empty()) {
        ++votes[0];
      } else {
        ++votes[green[rng.below(green.size())]];
      }
    }
    const bool strict = std::all_of(votes.begin() + 1, votes.end(),
                                    [&](std::size_t v) { return v < votes[0]; });
    ok += strict ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(trials);
}

double thm3_prob(std::size_t n, double p) {
  if (n < 1) throw ParameterError("n must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("p must lie in [0,1]");
  double tail = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) tail += binomial_term(n, k, p);
  return 1.0 - tail;
}

// ---------------------------------------------------------------------------

Thm1Validation thm1_empirical_validation(const ToyWorld& world,
                                         const Thm1ValidationConfig& config) {
  if (config.trials == 0) throw ParameterError("trials must be positive");
  config.params.validate();
  const std::size_t V = world.vocab().size();
  const Lexicon random_tokens = Lexicon::whole_vocabulary(V);
  const double T = config.params.threshold;
  Thm1Validation out;
  out.trials = config.trials;
  double sum_s = 0.0, sum_after = 0.0, sum_pred = 0.0;
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    Rng rng(derive_seed(config.seed, trial));
    const UnigramWatermark wm(WatermarkKey::derive("thm1-validation", derive_seed(config.seed, trial)),
                              config.params, V);
    const TokenSequence prompt = world.prompt(rng);
    const TokenSequence x = wm.generate(*world.generator, prompt, config.length, rng);
    const DetectionReport before = wm.detect(x);
    if (before.value < T) continue;
    ++out.eligible;
    const std::size_t s = config.fixed_s.value_or(max_insertable(before.value, x.size(), T));
    const TokenSequence y = piggyback_insert(x, random_tokens, s, rng);
    const DetectionReport after = wm.detect(y);
    sum_s += static_cast<double>(s);
    sum_after += after.value;
    sum_pred += thm1_expected_z(before.value, x.size(), s);
    if (after.value >= T) ++out.satisfied;
  }
  if (out.eligible > 0) {
    const auto e = static_cast<double>(out.eligible);
    out.fraction = static_cast<double>(out.satisfied) / e;
    out.mean_s = sum_s / e;
    out.mean_z_after = sum_after / e;
    out.mean_z_predicted = sum_pred / e;
  }
  return out;
}

}  // namespace wmlab
