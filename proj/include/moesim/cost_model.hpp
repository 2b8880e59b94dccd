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

#include <optional>
#include <span>
#include <vector>

#include "moesim/placement.hpp"
#include "moesim/router.hpp"

namespace moesim {

struct GpuCost {
  double compute_s = 0;
  double a2a_s = 0;
  double sync_s = 0;
  double total() const { return compute_s + a2a_s + sync_s; }
};

/// Simulated timing of one training step. makespan_s is the maximum over
/// GPUs of compute + all-to-all + sync; adjust_s is placement-change
/// transfer time the engine charged on top of it.
struct StepCostBreakdown {
  std::vector<GpuCost> per_gpu;
  double makespan_s = 0;
  double adjust_s = 0;

  void recompute_makespan();
};

/// Forward+backward time for one expert processing `tokens` tokens.
double compute_cost(int64_t tokens, const ClusterTopology& topo);

/// All-to-all time charged to expert e's replica on GPU g: every remote
/// inbound flow pays bytes/bandwidth, and the exchange runs four times per
/// step (dispatch, combine, and their backward mirrors).
double a2a_cost(const RoutingPlan& plan, ExpertId e, GpuId g,
                const ClusterTopology& topo);

/// Gradient AllReduce time for expert e across the GPUs holding its
/// replicas; zero when it lives on at most one GPU.
double sync_cost(const Placement& p, ExpertId e, const ClusterTopology& topo);
double sync_cost_for_group(std::span<const GpuId> group, const ClusterTopology& topo);

/// Time of one model-state transfer; an absent descriptor (intra-GPU weight
/// sharing) costs nothing.
double adjust_cost(const TransferDescriptor& t, const ClusterTopology& topo);
double adjust_cost(const std::optional<TransferDescriptor>& t,
                   const ClusterTopology& topo);

/// Full per-step timing for a routing plan on a placement. Sync for a
/// replicated expert is charged on every hosting GPU.
StepCostBreakdown step_cost(const TokenDemand& d, const Placement& p,
                            const RoutingPlan& plan, const ClusterTopology& topo);

}  // namespace moesim
