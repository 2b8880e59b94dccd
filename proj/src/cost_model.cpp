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

#include "moesim/cost_model.hpp"

#include <algorithm>
#include <stdexcept>

namespace moesim {

void StepCostBreakdown::recompute_makespan() {
  makespan_s = 0;
  for (const GpuCost& c : per_gpu) {
    makespan_s = std::max(makespan_s, c.total());
  }
}

double compute_cost(int64_t tokens, const ClusterTopology& topo) {
  if (tokens < 0) {
    throw std::invalid_argument("compute_cost: negative token count");
  }
  return static_cast<double>(tokens) / topo.tps();
}

double a2a_cost(const RoutingPlan& plan, ExpertId e, GpuId g,
                const ClusterTopology& topo) {
  double seconds = 0;
  for (GpuId src = 0; src < plan.num_gpus; ++src) {
    if (src == g) {
      continue;
    }
    int64_t tokens = plan.flow(e, src, g);
    if (tokens > 0) {
      seconds += static_cast<double>(tokens) * topo.token_bytes() /
                 topo.bandwidth(g, src);
    }
  }
  return 4.0 * seconds;
}

double sync_cost_for_group(std::span<const GpuId> group,
                           const ClusterTopology& topo) {
  if (group.size() <= 1) {
    return 0;
  }
  return topo.expert_param_bytes() / topo.group_bps(group);
}

double sync_cost(const Placement& p, ExpertId e, const ClusterTopology& topo) {
  std::vector<GpuId> group = p.replica_gpus(e);
  return sync_cost_for_group(group, topo);
}

double adjust_cost(const TransferDescriptor& t, const ClusterTopology& topo) {
  if (t.src == t.dst) {
    throw std::invalid_argument("adjust_cost: transfer endpoints must differ");
  }
  return t.bytes / topo.bandwidth(t.src, t.dst);
}

double adjust_cost(const std::optional<TransferDescriptor>& t,
                   const ClusterTopology& topo) {
  return t.has_value() ? adjust_cost(*t, topo) : 0.0;
}

StepCostBreakdown step_cost(const TokenDemand& d, const Placement& p,
                            const RoutingPlan& plan, const ClusterTopology& topo) {
  if (plan.num_gpus != p.num_gpus() || d.num_gpus != p.num_gpus()) {
    throw std::invalid_argument("step_cost: GPU counts disagree");
  }
  StepCostBreakdown breakdown;
  breakdown.per_gpu.resize(p.num_gpus());

  std::vector<int64_t> recv = received_matrix(plan);
  for (ExpertId e = 0; e < p.num_experts(); ++e) {
    const bool in_plan = e < plan.num_experts;
    const double sync_s = sync_cost(p, e, topo);
    for (GpuId g = 0; g < p.num_gpus(); ++g) {
      const int64_t tokens =
          in_plan ? recv[static_cast<size_t>(e) * plan.num_gpus + g] : 0;
      if (p.replica_count_on(e, g) == 0) {
        if (tokens != 0) {
          throw std::invalid_argument(
              "step_cost: plan routes expert " + std::to_string(e) +
              " to non-hosting GPU " + std::to_string(g));
        }
        continue;
      }
      GpuCost& cost = breakdown.per_gpu[g];
      cost.compute_s += compute_cost(tokens, topo);
      if (in_plan) {
        cost.a2a_s += a2a_cost(plan, e, g, topo);
      }
      cost.sync_s += sync_s;
    }
  }
  breakdown.recompute_makespan();
  return breakdown;
}

}  // namespace moesim
