/* Copyright 2026 The moesim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moesim/topology.hpp"

namespace moesim {

/// Per-step token demand: demand(e, g) tokens are produced on GPU g and
/// destined for expert e. Every step of a trace carries the same total.
struct TokenDemand {
  int step = 0;
  int num_experts = 0;
  int num_gpus = 0;
  std::vector<int64_t> demand;  // row-major [expert][gpu]

  TokenDemand() = default;
  TokenDemand(int step, int num_experts, int num_gpus)
      : step(step),
        num_experts(num_experts),
        num_gpus(num_gpus),
        demand(static_cast<size_t>(num_experts) * num_gpus, 0) {}

  int64_t at(ExpertId e, GpuId g) const {
    return demand[static_cast<size_t>(e) * num_gpus + g];
  }
  int64_t& at(ExpertId e, GpuId g) {
    return demand[static_cast<size_t>(e) * num_gpus + g];
  }
  int64_t total() const;
};

/// Sum of demand for one expert over all source GPUs.
int64_t expert_load(const TokenDemand& d, ExpertId e);

/// Default Zipf exponent, calibrated so that with 64 experts the top-10
/// carry roughly three quarters of the tokens.
inline constexpr double kDefaultZipfExponent = 1.25;

struct TraceGeneratorConfig {
  int num_experts = 64;
  int num_gpus = 8;
  int64_t tokens_per_step = 65536;
  double zipf_exponent = kDefaultZipfExponent;  // 0 = uniform
  double drift_rate = 0.02;  // per-step bound on the popularity random walk
  uint64_t seed = 42;
  int num_steps = 1;
};

/// Synthesizes a drifting, skewed trace. Expert popularity starts as a Zipf
/// distribution over a seeded random permutation of expert ids and evolves by
/// a bounded multiplicative random walk (factor exp(u), u uniform in
/// [-drift_rate, +drift_rate]) with renormalization. Each GPU produces exactly
/// tokens_per_step / num_gpus tokens per step, split across experts by
/// largest-remainder rounding of the popularity vector. Deterministic in the
/// seed.
std::vector<TokenDemand> generate_trace(const TraceGeneratorConfig& cfg);

/// Trace file format: header "step,expert,gpu,tokens", then one line per
/// nonzero cell, sorted by (step, expert, gpu), plain decimal integers.
void save_trace(std::span<const TokenDemand> trace, const std::string& path);

/// Loads a trace, inferring num_experts/num_gpus from the largest ids seen.
std::vector<TokenDemand> load_trace(const std::string& path);

/// Loads a trace with explicit dimensions; ids outside them are errors.
std::vector<TokenDemand> load_trace(const std::string& path, int num_experts,
                                    int num_gpus);

/// Rounds exact non-negative shares to integers summing to total, by floors
/// plus largest-remainder correction; ties break toward the lower index.
std::vector<int64_t> largest_remainder_round(std::span<const double> exact,
                                             int64_t total);

}  // namespace moesim
