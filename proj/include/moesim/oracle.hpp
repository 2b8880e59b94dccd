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

#include "moesim/cost_model.hpp"
#include "moesim/placement.hpp"
#include "moesim/router.hpp"
#include "moesim/workload.hpp"

namespace moesim {

/// A single-step snapshot small enough for exhaustive search:
/// num_experts * num_gpus is capped at 16.
struct OracleInstance {
  TokenDemand demand;
  ClusterTopology topo;
};

inline constexpr int kMaxOracleCells = 16;

struct OracleSolution {
  Placement placement;
  RoutingPlan split;     // flow tensor realizing the optimal token split
  double objective_s = 0;  // == step_cost(demand, placement, split).makespan_s
};

/// Exhaustively enumerates replica-count assignments (every expert at least
/// one slot, every GPU within its slot budget). For each, the token split is
/// the even per-vExpert share refined by a local search over single-token
/// moves between replicas, with randomized restarts guarding against local
/// minima. Ties between placements break to the lexicographically smallest
/// replica-count encoding.
OracleSolution solve_exact(const OracleInstance& inst);

/// Modeled step time of an arbitrary placement under the greedy router.
double placement_objective(const OracleInstance& inst, const Placement& p);

/// Greedy-over-oracle objective ratio; >= 1 by construction.
double compare_policy(const OracleInstance& inst, const Placement& sim_placement);

}  // namespace moesim
