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

#include "moesim/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace moesim {

namespace {

int experts_per_gpu(int num_experts, int num_gpus) {
  return (num_experts + num_gpus - 1) / num_gpus;
}

double safe_ratio(const RoutingPlan& plan) {
  std::vector<int64_t> totals = per_gpu_received(plan);
  int64_t sum = std::accumulate(totals.begin(), totals.end(), int64_t{0});
  if (sum == 0) {
    return 1.0;
  }
  int64_t max = *std::max_element(totals.begin(), totals.end());
  return static_cast<double>(max) * static_cast<double>(totals.size()) /
         static_cast<double>(sum);
}

StepReport make_report(int step, const TokenDemand& d, const Placement& p,
                       const RoutingPlan& plan, const ClusterTopology& topo,
                       BalanceMetric metric, LruGroupCache& cache,
                       double group_latency) {
  StepCostBreakdown breakdown = step_cost(d, p, plan, topo);
  int misses = 0;
  for (ExpertId e = 0; e < p.num_experts(); ++e) {
    std::vector<GpuId> group = p.replica_gpus(e);
    if (group.size() < 2) {
      continue;
    }
    if (!cache.touch(group)) {
      ++misses;
      for (GpuId g : group) {
        breakdown.per_gpu[g].sync_s += group_latency;
      }
    }
  }
  breakdown.recompute_makespan();

  StepReport report;
  report.step = step;
  report.makespan_s = breakdown.makespan_s;
  report.step_time_s = breakdown.makespan_s;
  report.balance_ratio = safe_ratio(plan);
  report.metric_value = metric == BalanceMetric::MaxRatio
                            ? report.balance_ratio
                            : variance_metric(d, p, plan);
  report.slot_utilization = p.slot_utilization();
  report.tokens_total = d.total();
  report.replica_counts.resize(p.num_experts());
  for (ExpertId e = 0; e < p.num_experts(); ++e) {
    report.replica_counts[e] = p.replica_count(e);
  }
  report.group_cache_misses = misses;
  report.breakdown = std::move(breakdown);
  return report;
}

std::vector<StepReport> run_static_ep(std::span<const TokenDemand> trace,
                                      const ClusterTopology& topo,
                                      const BaselineConfig& baseline,
                                      const SimConfig& sim_cfg) {
  const int num_experts = trace.front().num_experts;
  const int num_gpus = trace.front().num_gpus;
  Placement p = Placement::round_robin(num_experts, num_gpus,
                                       experts_per_gpu(num_experts, num_gpus));
  const int64_t tokens_per_step = trace.front().total();
  const bool unlimited = std::isinf(baseline.capacity_factor);
  const int64_t cap =
      unlimited ? 0
                : static_cast<int64_t>(std::floor(baseline.capacity_factor *
                                                  static_cast<double>(tokens_per_step) /
                                                  num_experts));

  LruGroupCache cache(sim_cfg.max_live_groups);
  std::vector<StepReport> reports;
  reports.reserve(trace.size());
  for (const TokenDemand& d : trace) {
    TokenDemand kept = d;
    int64_t dropped = 0;
    if (!unlimited) {
      for (ExpertId e = 0; e < num_experts; ++e) {
        int64_t load = expert_load(d, e);
        if (load <= cap) {
          continue;
        }
        // Tokens beyond capacity are dropped at the source, proportionally.
        std::vector<double> exact(num_gpus);
        for (GpuId g = 0; g < num_gpus; ++g) {
          exact[g] = static_cast<double>(d.at(e, g)) * static_cast<double>(cap) /
                     static_cast<double>(load);
        }
        std::vector<int64_t> kept_row = largest_remainder_round(exact, cap);
        for (GpuId g = 0; g < num_gpus; ++g) {
          kept_row[g] = std::min(kept_row[g], d.at(e, g));
          dropped += d.at(e, g) - kept_row[g];
          kept.at(e, g) = kept_row[g];
        }
      }
    }
    RoutingPlan plan = route(kept, p);
    StepReport report = make_report(d.step, kept, p, plan, topo, sim_cfg.metric,
                                    cache, sim_cfg.group_creation_latency_s);
    report.tokens_total = d.total();  // pre-drop batch
    report.tokens_dropped = dropped;
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<StepReport> run_full_replicate(std::span<const TokenDemand> trace,
                                           const ClusterTopology& topo,
                                           const BaselineConfig& baseline,
                                           const SimConfig& sim_cfg) {
  const int num_experts = trace.front().num_experts;
  const int num_gpus = trace.front().num_gpus;
  const int top_k = std::min(baseline.replicate_top, num_experts);
  if (top_k < 1) {
    throw std::invalid_argument("full-replicate: replicate_top must be >= 1");
  }
  const int slots = experts_per_gpu(num_experts, num_gpus) + top_k;

  LruGroupCache cache(sim_cfg.max_live_groups);
  std::vector<StepReport> reports;
  reports.reserve(trace.size());
  for (const TokenDemand& d : trace) {
    // Shadow the currently hottest experts on every GPU.
    std::vector<ExpertId> order(num_experts);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](ExpertId a, ExpertId b) {
      return expert_load(d, a) > expert_load(d, b);
    });
    Placement p = Placement::round_robin(num_experts, num_gpus, slots);
    for (int i = 0; i < top_k; ++i) {
      ExpertId e = order[i];
      for (GpuId g = 0; g < num_gpus; ++g) {
        if (p.replica_count_on(e, g) == 0) {
          p.expand(e, g, topo);
        }
      }
    }
    RoutingPlan plan = route(d, p);
    reports.push_back(make_report(d.step, d, p, plan, topo, sim_cfg.metric, cache,
                                  sim_cfg.group_creation_latency_s));
  }
  return reports;
}

std::vector<StepReport> run_strict_rebalance(std::span<const TokenDemand> trace,
                                             const ClusterTopology& topo,
                                             const SimConfig& sim_cfg) {
  const int num_experts = trace.front().num_experts;
  const int num_gpus = trace.front().num_gpus;
  Placement p = Placement::round_robin(num_experts, num_gpus,
                                       experts_per_gpu(num_experts, num_gpus));
  const int64_t tokens_per_step = trace.front().total();
  if (tokens_per_step % num_gpus != 0) {
    throw std::invalid_argument("strict-rebalance: step total not divisible by GPUs");
  }
  const int64_t per_gpu_target = tokens_per_step / num_gpus;

  LruGroupCache cache(sim_cfg.max_live_groups);
  std::vector<StepReport> reports;
  reports.reserve(trace.size());
  for (const TokenDemand& d : trace) {
    // Rewrite expert loads so each GPU's hosted experts sum to the mean.
    std::vector<int64_t> new_load(num_experts, 0);
    for (GpuId g = 0; g < num_gpus; ++g) {
      std::vector<ExpertId> hosted;
      for (ExpertId e = 0; e < num_experts; ++e) {
        if (p.replica_count_on(e, g) > 0) {
          hosted.push_back(e);
        }
      }
      int64_t gpu_load = 0;
      for (ExpertId e : hosted) {
        gpu_load += expert_load(d, e);
      }
      std::vector<double> exact(hosted.size());
      for (size_t i = 0; i < hosted.size(); ++i) {
        exact[i] = gpu_load > 0
                       ? static_cast<double>(expert_load(d, hosted[i])) *
                             static_cast<double>(per_gpu_target) /
                             static_cast<double>(gpu_load)
                       : static_cast<double>(per_gpu_target) /
                             static_cast<double>(hosted.size());
      }
      std::vector<int64_t> rounded = largest_remainder_round(exact, per_gpu_target);
      for (size_t i = 0; i < hosted.size(); ++i) {
        new_load[hosted[i]] = rounded[i];
      }
    }
    int64_t reassigned = 0;
    for (ExpertId e = 0; e < num_experts; ++e) {
      reassigned += std::abs(new_load[e] - expert_load(d, e));
    }
    reassigned /= 2;

    TokenDemand rebalanced(d.step, num_experts, num_gpus);
    std::vector<double> exact_row(num_gpus);
    for (ExpertId e = 0; e < num_experts; ++e) {
      for (GpuId g = 0; g < num_gpus; ++g) {
        exact_row[g] = static_cast<double>(new_load[e]) / num_gpus;
      }
      std::vector<int64_t> row = largest_remainder_round(exact_row, new_load[e]);
      for (GpuId g = 0; g < num_gpus; ++g) {
        rebalanced.at(e, g) = row[g];
      }
    }
    RoutingPlan plan = route(rebalanced, p);
    StepReport report = make_report(d.step, rebalanced, p, plan, topo,
                                    sim_cfg.metric, cache,
                                    sim_cfg.group_creation_latency_s);
    report.tokens_reassigned = reassigned;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::StaticEP:
      return "static-ep";
    case BaselineKind::FullReplicate:
      return "full-replicate";
    case BaselineKind::StrictRebalance:
      return "strict-rebalance";
    case BaselineKind::FlexDynamic:
      return "flex";
  }
  return "unknown";
}

std::vector<StepReport> run_baseline(std::span<const TokenDemand> trace,
                                     const ClusterTopology& topo,
                                     const BaselineConfig& baseline,
                                     const SimConfig& sim_cfg) {
  if (trace.empty()) {
    throw std::invalid_argument("run_baseline: empty trace");
  }
  switch (baseline.kind) {
    case BaselineKind::StaticEP:
      return run_static_ep(trace, topo, baseline, sim_cfg);
    case BaselineKind::FullReplicate:
      return run_full_replicate(trace, topo, baseline, sim_cfg);
    case BaselineKind::StrictRebalance:
      return run_strict_rebalance(trace, topo, sim_cfg);
    case BaselineKind::FlexDynamic:
      return run_simulation(trace, topo, sim_cfg);
  }
  throw std::invalid_argument("run_baseline: unknown baseline");
}

}  // namespace moesim
