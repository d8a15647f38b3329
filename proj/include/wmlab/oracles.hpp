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

/// @file oracles.hpp
/// Closed forms and simulators for three bounds:
///
///  * piggyback insertion: E[z'] = z sqrt(l / (l + s)), giving the maximum
///    insertion budget s <= l (z^2 - T^2) / T^2;
///  * multi-key removal for green-list schemes: the chance that the
///    majority of n keyed greedy observations is the base argmax when c
///    competitor tokens can overtake it;
///  * the same for Exp, a binomial majority tail in the per-observation
///    success probability p.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/lm.hpp"
#include "wmlab/watermarks.hpp"

namespace wmlab {

struct BoundCheckResult {
  std::string name;
  double closed_form = 0.0;
  double monte_carlo = 0.0;
  std::size_t trials = 0;
  double abs_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Fills abs_diff and pass. Throws ParameterError for trials = 0.
BoundCheckResult make_bound_check(std::string name, double closed_form, double monte_carlo,
                                  std::size_t trials, double tolerance);

/// CSV with header name,closed_form,monte_carlo,trials,abs_diff,tolerance,pass.
void write_bound_checks_csv(std::ostream& out, const std::vector<BoundCheckResult>& rows);

// ---------------------------------------------------------------------------

/// z * sqrt(l / (l + s)).
double thm1_expected_z(double z, std::size_t l, std::size_t s);

/// log C(n, k) via lgamma.
double log_binomial(std::size_t n, std::size_t k);

/// 1 - sum_{k=0}^{floor(n/2)} C(n,k) g^k (1-g)^(n-k) p(k) with
/// p(k) = 1 - (sum_{m=0}^{k-1} C(n-k,m) g^m (1-g)^(n-k-m))^c.
double thm2_prob(std::size_t n, double gamma, std::size_t c);

/// Simulation of the membership events behind thm2_prob: the top token is
/// green under k ~ Bin(n, gamma) keys; each competitor is green under
/// m ~ Bin(n - k, gamma) of the remaining keys; success when k > floor(n/2)
/// or no competitor reaches k.
double thm2_monte_carlo(std::size_t n, double gamma, std::size_t c, std::size_t trials, Rng& rng);

/// Literal greedy simulation: under each key the top token and each
/// competitor are independently green with probability gamma; greedy
/// decoding returns the top token unless it is red and some competitor is
/// green (then a uniformly chosen green competitor). Success when the top
/// token occurs strictly more often than any other token.
double thm2_greedy_simulation(std::size_t n, double gamma, std::size_t c, std::size_t trials,
                              Rng& rng);

/// 1 - sum_{k=0}^{floor(n/2)} C(n,k) p^k (1-p)^(n-k).
double thm3_prob(std::size_t n, double p);

// ---------------------------------------------------------------------------

struct Thm1ValidationConfig {
  std::size_t trials = 500;
  std::size_t length = 200;
  UnigramParams params;
  /// When set, replaces s_max (e.g. 0 for the trivial case).
  std::optional<std::size_t> fixed_s;
  std::uint64_t seed = 1;
};

struct Thm1Validation {
  std::size_t trials = 0;
  /// Trials with z >= T before insertion (the ones that count).
  std::size_t eligible = 0;
  /// Eligible trials whose post-insertion z is still >= T.
  std::size_t satisfied = 0;
  double fraction = 0.0;
  double mean_s = 0.0;
  /// Mean of z' and of the per-trial prediction z sqrt(l / (l + s)).
  double mean_z_after = 0.0;
  double mean_z_predicted = 0.0;
};

/// Generates Unigram-watermarked responses, inserts s_max = max_insertable
/// uniformly random tokens at random positions, re-detects and reports how
/// often detection survives.
Thm1Validation thm1_empirical_validation(const ToyWorld& world,
                                         const Thm1ValidationConfig& config);

}  // namespace wmlab
