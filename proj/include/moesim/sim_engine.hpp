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
#include <deque>
#include <list>
#include <map>
#include <span>
#include <vector>

#include "moesim/cost_model.hpp"
#include "moesim/placement.hpp"
#include "moesim/policy.hpp"
#include "moesim/router.hpp"
#include "moesim/workload.hpp"

namespace moesim {

enum class PolicyMode { Dynamic, FixedInterval, Static };

struct SimConfig {
  double threshold = 1.1;  // balance-ratio trigger, > 1
  BalanceMetric metric = BalanceMetric::MaxRatio;
  PolicyMode policy_mode = PolicyMode::Dynamic;
  int interval_steps = 10;  // FixedInterval period
  int amortization_horizon = 50;
  /// Fraction of the previous step's duration during which pending transfers
  /// may occupy their links.
  double adjust_bandwidth_fraction = 0.5;
  int max_live_groups = 64;        // LRU capacity for live collective groups
  double group_creation_latency_s = 0.005;
  uint64_t seed = 42;

  void validate() const;
};

struct StepReport {
  int step = 0;
  StepCostBreakdown breakdown;
  double makespan_s = 0;
  double step_time_s = 0;  // makespan + charged adjustment time
  double balance_ratio = 1.0;
  double metric_value = 0;
  std::vector<PlacementOp> plan_applied;
  double slot_utilization = 0;
  int64_t tokens_total = 0;
  int64_t tokens_dropped = 0;
  int64_t tokens_reassigned = 0;
  std::vector<int> replica_counts;
  int group_cache_misses = 0;
  int64_t adjust_bytes = 0;
};

/// LRU cache over live collective-communication groups. A miss models group
/// creation and charges latency; a hit is free.
class LruGroupCache {
 public:
  explicit LruGroupCache(int capacity);

  /// Returns true on hit. On miss the group is created, evicting the least
  /// recently used one when full.
  bool touch(const std::vector<GpuId>& group);

  int size() const { return static_cast<int>(entries_.size()); }
  int64_t misses() const { return misses_; }

 private:
  int capacity_;
  int64_t misses_ = 0;
  std::list<std::vector<GpuId>> order_;  // most recent first
  std::map<std::vector<GpuId>, std::list<std::vector<GpuId>>::iterator> entries_;
};

/// Per-GPU AllReduce issue order: the experts the GPU hosts that need
/// synchronization (replicas on >= 2 GPUs), in ascending expert id.
std::vector<std::vector<ExpertId>> collective_order(const Placement& p);

/// Simulates blocking collectives issued in that order and reports whether
/// every group completes. Ascending-id ordering cannot deadlock; this is the
/// checkable form of that claim.
bool collective_order_deadlock_free(const Placement& p);

struct PendingTransfer {
  GpuId src = -1;
  GpuId dst = -1;
  double bytes_remaining = 0;
};

struct PendingOp {
  PlacementOp op;
  std::vector<PendingTransfer> transfers;
  bool complete() const;
};

/// Pending placement modifications. Transfers drain within per-step budgets;
/// ops mutate the routing-visible placement in acceptance order, each as soon
/// as its own transfers and every earlier op have finished.
class AdjustmentQueue {
 public:
  void enqueue(const PlacementOp& op, std::span<const TransferDescriptor> transfers);
  bool empty() const { return pending_.empty(); }
  size_t size() const { return pending_.size(); }
  double pending_bytes() const;

  const std::deque<PendingOp>& pending() const { return pending_; }
  std::deque<PendingOp>& pending() { return pending_; }

 private:
  std::deque<PendingOp> pending_;
};

/// One coalesced transfer: consecutive queue transfers with the same
/// (src, dst) merged into a single message.
struct MergedTransfer {
  GpuId src = -1;
  GpuId dst = -1;
  double bytes = 0;
};

/// Coalesces the queue's pending transfers and groups consecutive merged
/// transfers with pairwise-disjoint endpoints into sets that drain
/// concurrently, each on its own link.
std::vector<std::vector<MergedTransfer>> merge_ops(const AdjustmentQueue& queue);

struct DrainResult {
  double seconds_used = 0;
  double bytes_moved = 0;
  std::vector<PlacementOp> applied;
};

/// Moves pending bytes within the time budget, set by set: a set's elapsed
/// time is its slowest member's. Completed ops then apply to `effective` in
/// queue order; partially drained transfers persist.
DrainResult best_effort_drain(AdjustmentQueue& queue, double available_seconds,
                              const ClusterTopology& topo, Placement& effective);

/// Trigger value on a common scale for threshold comparison: the balance
/// ratio itself for MaxRatio; for Variance, 1 + sqrt(G * var) / mean, which
/// exceeds the threshold whenever MaxRatio would and earlier.
double trigger_value(BalanceMetric metric, const TokenDemand& d,
                     const Placement& p, const RoutingPlan& plan);

class SimEngine {
 public:
  SimEngine(const ClusterTopology& topo, const SimConfig& cfg);

  std::vector<StepReport> run(std::span<const TokenDemand> trace);

  const Placement& target_placement() const;
  const Placement& effective_placement() const;
  double simulated_seconds() const { return clock_s_; }
  int64_t total_adjust_bytes() const { return total_adjust_bytes_; }

 private:
  StepReport run_step(const TokenDemand& d);

  const ClusterTopology& topo_;
  SimConfig cfg_;
  // Routing sees `effective_`; accepted plans mutate `target_` immediately
  // and reach `effective_` once their transfers drain.
  std::optional<Placement> effective_;
  std::optional<Placement> target_;
  AdjustmentQueue queue_;
  LruGroupCache group_cache_;
  double clock_s_ = 0;
  double prev_makespan_s_ = 0;
  int64_t total_adjust_bytes_ = 0;
  int step_ = 0;
};

/// Convenience wrapper: run the full trace and return the reports.
std::vector<StepReport> run_simulation(std::span<const TokenDemand> trace,
                                       const ClusterTopology& topo,
                                       const SimConfig& cfg);

}  // namespace moesim
