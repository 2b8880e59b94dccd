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
#include <vector>

#include "moesim/placement.hpp"
#include "moesim/workload.hpp"

namespace moesim {

/// Per-step flow tensor: flow(e, src, dst) tokens of expert e move from GPU
/// src to GPU dst. Every token of the demand appears in exactly one flow
/// (nothing is dropped) and flows only land on GPUs hosting the expert.
struct RoutingPlan {
  int num_experts = 0;
  int num_gpus = 0;
  std::vector<int64_t> flows;  // [expert][src][dst]

  RoutingPlan() = default;
  RoutingPlan(int num_experts, int num_gpus)
      : num_experts(num_experts),
        num_gpus(num_gpus),
        flows(static_cast<size_t>(num_experts) * num_gpus * num_gpus, 0) {}

  int64_t flow(ExpertId e, GpuId src, GpuId dst) const {
    return flows[(static_cast<size_t>(e) * num_gpus + src) * num_gpus + dst];
  }
  int64_t& flow(ExpertId e, GpuId src, GpuId dst) {
    return flows[(static_cast<size_t>(e) * num_gpus + src) * num_gpus + dst];
  }

  int64_t received(ExpertId e, GpuId dst) const;
};

/// recv[e][g] = tokens of expert e landing on GPU g, row-major [expert][gpu].
std::vector<int64_t> received_matrix(const RoutingPlan& plan);

/// Per-GPU totals of received tokens.
std::vector<int64_t> per_gpu_received(const RoutingPlan& plan);

/// Splits each expert's demand across that expert's replicas. Locality first:
/// up to one capacity share (expert load over replica count, scaled by local
/// slot count) stays on the producing GPU; the remainder scatters across
/// hosting GPUs in proportion to their leftover capacity, with deterministic
/// largest-remainder rounding. Rounding leftovers (at most one token per
/// replica) top up the least-loaded hosting GPU one token at a time.
RoutingPlan route(const TokenDemand& d, const Placement& p);

/// Debug dump, trace format plus a destination column:
/// "step,expert,gpu,dst,tokens", one line per nonzero flow, sorted.
std::string plan_to_csv(const RoutingPlan& plan, int step);

}  // namespace moesim
