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

#include "moesim/policy.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace moesim {

namespace {

std::vector<int64_t> gpu_totals(const RoutingPlan& plan) {
  return per_gpu_received(plan);
}

}  // namespace

double balance_ratio(const TokenDemand&, const Placement&,
                     const RoutingPlan& plan) {
  std::vector<int64_t> totals = gpu_totals(plan);
  int64_t sum = 0;
  int64_t max = 0;
  for (int64_t t : totals) {
    sum += t;
    max = std::max(max, t);
  }
  if (sum == 0) {
    throw std::invalid_argument("balance_ratio: zero total tokens");
  }
  const double mean = static_cast<double>(sum) / static_cast<double>(totals.size());
  return static_cast<double>(max) / mean;
}

double variance_metric(const TokenDemand&, const Placement&,
                       const RoutingPlan& plan) {
  std::vector<int64_t> totals = gpu_totals(plan);
  double mean = 0;
  for (int64_t t : totals) {
    mean += static_cast<double>(t);
  }
  mean /= static_cast<double>(totals.size());
  double var = 0;
  for (int64_t t : totals) {
    double diff = static_cast<double>(t) - mean;
    var += diff * diff;
  }
  return var / static_cast<double>(totals.size());
}

SchedulingPlan make_scheduling_plan(const TokenDemand& d, const Placement& p,
                                    const ClusterTopology& topo,
                                    const PolicyConfig& cfg) {
  if (cfg.amortization_horizon < 1) {
    throw std::invalid_argument("make_scheduling_plan: amortization_horizon must be >= 1");
  }
  const RoutingPlan base_plan = route(d, p);
  const StepCostBreakdown base_cost = step_cost(d, p, base_plan, topo);
  const double t0 = base_cost.makespan_s;

  auto capacity = [&](ExpertId e) {
    return static_cast<double>(expert_load(d, e)) /
           static_cast<double>(p.replica_count(e));
  };

  // Hottest per-vExpert capacity overall, and the coldest as shrink victim.
  ExpertId hot = -1;
  ExpertId cold = -1;
  double hot_cap = -1;
  double cold_cap = std::numeric_limits<double>::infinity();
  for (ExpertId e = 0; e < d.num_experts; ++e) {
    double cap = capacity(e);
    if (cap > hot_cap) {
      hot_cap = cap;
      hot = e;
    }
    if (cap < cold_cap) {
      cold_cap = cap;
      cold = e;
    }
  }
  if (hot == cold) {
    return {};
  }

  // Fallback expand candidate: the hottest expert hosted on the slowest GPU.
  // Splitting the overall-hottest expert cannot lower the step time when it
  // does not sit on the GPU that sets it.
  GpuId bottleneck = 0;
  for (GpuId g = 1; g < p.num_gpus(); ++g) {
    if (base_cost.per_gpu[g].total() > base_cost.per_gpu[bottleneck].total()) {
      bottleneck = g;
    }
  }
  ExpertId hot_local = -1;
  double hot_local_cap = -1;
  for (ExpertId e = 0; e < d.num_experts; ++e) {
    if (p.replica_count_on(e, bottleneck) > 0 && expert_load(d, e) > 0 &&
        capacity(e) > hot_local_cap) {
      hot_local_cap = capacity(e);
      hot_local = e;
    }
  }

  const std::vector<int64_t> totals = gpu_totals(base_plan);
  bool have_free = false;
  int total_free = 0;
  for (GpuId g = 0; g < p.num_gpus(); ++g) {
    total_free += p.free_slots(g);
  }
  have_free = total_free > 0;

  struct Candidate {
    Placement placement;
    SchedulingPlan plan;
    double transfer_seconds = 0;
  };

  auto expand_into = [&](Candidate& c, ExpertId e, GpuId target) {
    std::optional<TransferDescriptor> transfer = c.placement.expand(e, target, topo);
    c.plan.ops.push_back(
        {.kind = PlacementOpKind::Expand, .expert = e, .gpu = target});
    c.transfer_seconds += adjust_cost(transfer, topo);
  };
  auto least_loaded_free = [&](const Placement& q) {
    GpuId target = -1;
    for (GpuId g = 0; g < q.num_gpus(); ++g) {
      if (q.free_slots(g) > 0 && (target < 0 || totals[g] < totals[target])) {
        target = g;
      }
    }
    return target;
  };

  // One new replica for an expert, freeing a slot of the coldest expert when
  // the pool is full.
  auto single_expand = [&](ExpertId e0) -> std::optional<Candidate> {
    Candidate c{p, {}, 0};
    if (!have_free) {
      if (e0 == cold || p.replica_count(cold) < 2) {
        return std::nullopt;
      }
      GpuId victim = -1;
      for (GpuId g : p.replica_gpus(cold)) {
        if (victim < 0 || totals[g] > totals[victim]) {
          victim = g;
        }
      }
      c.placement.shrink(cold, victim);
      c.plan.ops.push_back(
          {.kind = PlacementOpKind::Shrink, .expert = cold, .gpu = victim});
    }
    expand_into(c, e0, least_loaded_free(c.placement));
    return c;
  };

  // An uneven replica ladder in one step: stack one extra slot on the
  // expert's most loaded host and place one replica remotely. The even
  // intermediate placement is often worse than doing nothing, so this pair
  // must be scored as a unit.
  auto double_expand = [&](ExpertId e0) -> std::optional<Candidate> {
    if (total_free < 2) {
      return std::nullopt;
    }
    GpuId home = -1;
    for (GpuId g : p.replica_gpus(e0)) {
      if (home < 0 || totals[g] > totals[home]) {
        home = g;
      }
    }
    if (p.free_slots(home) == 0) {
      return std::nullopt;
    }
    Candidate c{p, {}, 0};
    expand_into(c, e0, home);
    GpuId target = least_loaded_free(c.placement);
    if (target < 0) {
      return std::nullopt;
    }
    expand_into(c, e0, target);
    return c;
  };

  // Mutual replication with the expert competing for the target GPU. Both
  // single expands can individually look worse while the pair balances the
  // exchange, so it is scored as a unit as well.
  auto cross_expand = [&](ExpertId e0) -> std::optional<Candidate> {
    if (total_free < 2) {
      return std::nullopt;
    }
    Candidate c{p, {}, 0};
    GpuId target = least_loaded_free(c.placement);
    if (target < 0) {
      return std::nullopt;
    }
    GpuId home = -1;
    for (GpuId g : p.replica_gpus(e0)) {
      if (home < 0 || totals[g] > totals[home]) {
        home = g;
      }
    }
    ExpertId partner = -1;
    double partner_cap = -1;
    for (ExpertId e = 0; e < d.num_experts; ++e) {
      if (e != e0 && p.replica_count_on(e, target) > 0 && capacity(e) > partner_cap) {
        partner_cap = capacity(e);
        partner = e;
      }
    }
    if (partner < 0 || home == target) {
      return std::nullopt;
    }
    expand_into(c, e0, target);
    if (c.placement.free_slots(home) == 0) {
      return std::nullopt;
    }
    expand_into(c, partner, home);
    return c;
  };

  // Relocate the coldest expert away from the slowest GPU without touching
  // anything else; useful when a hot expert's replica and a cold expert
  // collide on one device.
  auto relocate_cold = [&](GpuId from) -> std::optional<Candidate> {
    ExpertId coldest = -1;
    double coldest_cap = 0;
    for (ExpertId e = 0; e < d.num_experts; ++e) {
      if (e != hot && p.replica_count_on(e, from) > 0 &&
          (coldest < 0 || capacity(e) < coldest_cap)) {
        coldest_cap = capacity(e);
        coldest = e;
      }
    }
    if (coldest < 0) {
      return std::nullopt;
    }
    Candidate c{p, {}, 0};
    if (p.replica_count(coldest) < 2) {
      GpuId spill = -1;
      for (GpuId g = 0; g < p.num_gpus(); ++g) {
        if (g != from && p.free_slots(g) > 0 &&
            (spill < 0 || totals[g] < totals[spill])) {
          spill = g;
        }
      }
      if (spill < 0) {
        return std::nullopt;
      }
      expand_into(c, coldest, spill);
    }
    c.placement.shrink(coldest, from);
    c.plan.ops.push_back(
        {.kind = PlacementOpKind::Shrink, .expert = coldest, .gpu = from});
    return c;
  };

  // Clear the coldest expert off one GPU (relocating it when it has no other
  // replica) and hand the freed slot to the hot expert. The eviction alone is
  // never an improvement, so the whole sequence is scored together.
  auto evict_and_expand = [&](ExpertId e0) -> std::optional<Candidate> {
    GpuId target = -1;
    ExpertId evicted = -1;
    int64_t best_remaining = 0;
    for (GpuId g = 0; g < p.num_gpus(); ++g) {
      ExpertId coldest = -1;
      double coldest_cap = 0;
      for (ExpertId e = 0; e < d.num_experts; ++e) {
        if (e != e0 && p.replica_count_on(e, g) > 0 &&
            (coldest < 0 || capacity(e) < coldest_cap)) {
          coldest_cap = capacity(e);
          coldest = e;
        }
      }
      if (coldest < 0) {
        continue;
      }
      int64_t remaining = totals[g] - expert_load(d, coldest);
      if (target < 0 || remaining < best_remaining) {
        best_remaining = remaining;
        target = g;
        evicted = coldest;
      }
    }
    if (target < 0) {
      return std::nullopt;
    }
    Candidate c{p, {}, 0};
    if (p.replica_count(evicted) < 2) {
      GpuId spill = -1;
      for (GpuId g = 0; g < p.num_gpus(); ++g) {
        if (g != target && p.free_slots(g) > 0 &&
            (spill < 0 || totals[g] < totals[spill])) {
          spill = g;
        }
      }
      if (spill < 0) {
        return std::nullopt;
      }
      expand_into(c, evicted, spill);
    }
    c.placement.shrink(evicted, target);
    c.plan.ops.push_back(
        {.kind = PlacementOpKind::Shrink, .expert = evicted, .gpu = target});
    expand_into(c, e0, target);
    return c;
  };

  std::vector<std::optional<Candidate>> candidates;
  candidates.push_back(single_expand(hot));
  candidates.push_back(double_expand(hot));
  candidates.push_back(cross_expand(hot));
  candidates.push_back(evict_and_expand(hot));
  if (hot_local >= 0 && hot_local != hot) {
    candidates.push_back(single_expand(hot_local));
    candidates.push_back(double_expand(hot_local));
    candidates.push_back(cross_expand(hot_local));
    candidates.push_back(evict_and_expand(hot_local));
  }
  candidates.push_back(relocate_cold(bottleneck));

  // Best improvement wins; ties keep the earliest candidate.
  const Candidate* best = nullptr;
  double best_t1 = t0;
  for (const std::optional<Candidate>& candidate : candidates) {
    if (!candidate) {
      continue;
    }
    const double t1 =
        step_cost(d, candidate->placement, route(d, candidate->placement), topo)
            .makespan_s +
        candidate->transfer_seconds / cfg.amortization_horizon;
    if (t1 < best_t1) {
      best_t1 = t1;
      best = &*candidate;
    }
  }
  if (best) {
    return best->plan;
  }
  return {};
}

SchedulingPlan plan_migrations(const Placement& p, const ClusterTopology& topo,
                               const PolicyConfig& cfg) {
  struct Candidate {
    SlotRef a, b;
    double score;
  };
  std::optional<Candidate> best;

  // Counts are cheap to patch in place for scoring a hypothetical swap.
  auto group_after = [&](ExpertId e, GpuId from, GpuId to) {
    std::vector<GpuId> group;
    for (GpuId g = 0; g < p.num_gpus(); ++g) {
      int count = p.replica_count_on(e, g);
      if (g == from) {
        --count;
      }
      if (g == to) {
        ++count;
      }
      if (count > 0) {
        group.push_back(g);
      }
    }
    return group;
  };

  for (GpuId ga = 0; ga < p.num_gpus(); ++ga) {
    for (int sa = 0; sa < p.slots_per_gpu(); ++sa) {
      ExpertId ea = p.slot(ga, sa);
      if (ea == kUnassigned) {
        continue;
      }
      for (GpuId gb = ga + 1; gb < p.num_gpus(); ++gb) {
        for (int sb = 0; sb < p.slots_per_gpu(); ++sb) {
          ExpertId eb = p.slot(gb, sb);
          if (eb == kUnassigned || eb == ea) {
            continue;
          }
          // Only pure relocations: a swap that collapses an expert's replicas
          // onto fewer GPUs concentrates its whole token share there, which
          // the capacity-driven expand/shrink policy cannot see or undo.
          // Replica-count reduction is shrink's job.
          std::vector<GpuId> group_a = group_after(ea, ga, gb);
          std::vector<GpuId> group_b = group_after(eb, gb, ga);
          if (group_a.size() != p.replica_gpus(ea).size() ||
              group_b.size() != p.replica_gpus(eb).size()) {
            continue;
          }
          double before = sync_cost(p, ea, topo) + sync_cost(p, eb, topo);
          double after = sync_cost_for_group(group_a, topo) +
                         sync_cost_for_group(group_b, topo);
          double transfer =
              2.0 * topo.expert_state_bytes() / topo.bandwidth(ga, gb);
          double score = before - after - transfer / cfg.amortization_horizon;
          if (score > 0 && (!best || score > best->score)) {
            best = Candidate{{ga, sa}, {gb, sb}, score};
          }
        }
      }
    }
  }
  if (!best) {
    return {};
  }
  SchedulingPlan plan;
  plan.ops.push_back({.kind = PlacementOpKind::Migrate,
                      .expert = kUnassigned,
                      .gpu = -1,
                      .a = best->a,
                      .b = best->b});
  return plan;
}

}  // namespace moesim
