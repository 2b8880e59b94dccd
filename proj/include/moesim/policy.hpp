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

#include <vector>

#include "moesim/cost_model.hpp"
#include "moesim/placement.hpp"
#include "moesim/router.hpp"
#include "moesim/workload.hpp"

namespace moesim {

enum class BalanceMetric { MaxRatio, Variance };

/// Ordered list of placement modifications; ops apply in sequence to the
/// placement they were planned against.
struct SchedulingPlan {
  std::vector<PlacementOp> ops;
  bool empty() const { return ops.empty(); }
};

/// Max per-GPU received load over the mean per-GPU load. Always >= 1;
/// exactly 1 iff all GPUs received the same total.
double balance_ratio(const TokenDemand& d, const Placement& p,
                     const RoutingPlan& plan);

/// Population variance of the per-GPU received totals.
double variance_metric(const TokenDemand& d, const Placement& p,
                       const RoutingPlan& plan);

struct PolicyConfig {
  /// One-time adjustment transfers are spread over this many steps when a
  /// candidate plan is scored, standing in for transfers that overlap with
  /// training.
  int amortization_horizon = 50;
};

/// One round of capacity-driven planning: pick the expert whose replicas are
/// most overloaded and the one whose replicas are least loaded, try growing
/// the former (freeing a slot from the latter when none is free), and keep
/// the move only when the modeled step time improves. Returns an empty plan
/// when no single move helps or none is feasible.
SchedulingPlan make_scheduling_plan(const TokenDemand& d, const Placement& p,
                                    const ClusterTopology& topo,
                                    const PolicyConfig& cfg = {});

/// Background replica-locality pass: scores every swap of two slots (distinct
/// experts, distinct GPUs) by the gradient-sync time it saves minus the
/// amortized cost of the two state transfers, and returns the best strictly
/// improving Migrate, or an empty plan.
SchedulingPlan plan_migrations(const Placement& p, const ClusterTopology& topo,
                               const PolicyConfig& cfg = {});

}  // namespace moesim
