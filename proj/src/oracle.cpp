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

#include "moesim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace moesim {

namespace {

constexpr int kRandomRestarts = 5;
constexpr int64_t kMaxEnumeratedPlacements = 20'000'000;

double unit_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// All per-GPU replica-count vectors over num_experts summing to at most
// slots_per_gpu.
std::vector<std::vector<int>> gpu_count_options(int num_experts, int slots_per_gpu) {
  std::vector<std::vector<int>> options;
  std::vector<int> current(num_experts, 0);
  auto rec = [&](auto&& self, int e, int remaining) -> void {
    if (e == num_experts) {
      options.push_back(current);
      return;
    }
    for (int n = 0; n <= remaining; ++n) {
      current[e] = n;
      self(self, e + 1, remaining - n);
    }
    current[e] = 0;
  };
  rec(rec, 0, slots_per_gpu);
  return options;
}

// Attributes a per-destination token split to sources at minimal transfer
// cost: local tokens stay put, then same-node supply covers same-node
// deficits, then anything crosses nodes. Exchange arguments make this exact
// for the two-tier link model.
RoutingPlan attribute_split(const TokenDemand& d, const ClusterTopology& topo,
                            const std::vector<std::vector<GpuId>>& hosts,
                            const std::vector<std::vector<int64_t>>& split) {
  const int num_gpus = d.num_gpus;
  RoutingPlan plan(d.num_experts, num_gpus);
  std::vector<int64_t> supply(num_gpus), deficit(num_gpus);
  for (ExpertId e = 0; e < d.num_experts; ++e) {
    std::fill(deficit.begin(), deficit.end(), int64_t{0});
    for (GpuId g = 0; g < num_gpus; ++g) {
      supply[g] = d.at(e, g);
    }
    for (size_t i = 0; i < hosts[e].size(); ++i) {
      GpuId h = hosts[e][i];
      int64_t local = std::min(supply[h], split[e][i]);
      if (local > 0) {
        plan.flow(e, h, h) = local;
      }
      supply[h] -= local;
      deficit[h] = split[e][i] - local;
    }
    auto transfer = [&](GpuId src, GpuId dst) {
      int64_t amount = std::min(supply[src], deficit[dst]);
      if (amount > 0) {
        plan.flow(e, src, dst) += amount;
        supply[src] -= amount;
        deficit[dst] -= amount;
      }
    };
    for (GpuId dst = 0; dst < num_gpus; ++dst) {
      if (deficit[dst] == 0) {
        continue;
      }
      for (GpuId src = 0; src < num_gpus && deficit[dst] > 0; ++src) {
        if (topo.node_of(src) == topo.node_of(dst)) {
          transfer(src, dst);
        }
      }
    }
    for (GpuId dst = 0; dst < num_gpus; ++dst) {
      for (GpuId src = 0; src < num_gpus && deficit[dst] > 0; ++src) {
        transfer(src, dst);
      }
    }
  }
  return plan;
}

struct SplitEvaluation {
  double makespan = 0;
  std::vector<double> sorted_gpu_times;  // descending, for plateau descent
  RoutingPlan plan;
};

bool lex_less(const std::vector<double>& a, const std::vector<double>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

class SplitSearch {
 public:
  SplitSearch(const OracleInstance& inst, const Placement& placement)
      : inst_(inst), placement_(placement) {
    hosts_.resize(inst.demand.num_experts);
    for (ExpertId e = 0; e < inst.demand.num_experts; ++e) {
      hosts_[e] = placement.replica_gpus(e);
    }
  }

  SplitEvaluation evaluate(const std::vector<std::vector<int64_t>>& split) const {
    SplitEvaluation eval;
    eval.plan = attribute_split(inst_.demand, inst_.topo, hosts_, split);
    StepCostBreakdown breakdown =
        step_cost(inst_.demand, placement_, eval.plan, inst_.topo);
    eval.makespan = breakdown.makespan_s;
    eval.sorted_gpu_times.reserve(breakdown.per_gpu.size());
    for (const GpuCost& c : breakdown.per_gpu) {
      eval.sorted_gpu_times.push_back(c.total());
    }
    std::sort(eval.sorted_gpu_times.rbegin(), eval.sorted_gpu_times.rend());
    return eval;
  }

  std::vector<std::vector<int64_t>> even_split() const {
    std::vector<std::vector<int64_t>> split(hosts_.size());
    for (ExpertId e = 0; e < static_cast<int>(hosts_.size()); ++e) {
      const int64_t load = expert_load(inst_.demand, e);
      const int n_total = placement_.replica_count(e);
      std::vector<double> exact;
      exact.reserve(hosts_[e].size());
      for (GpuId h : hosts_[e]) {
        exact.push_back(static_cast<double>(load) *
                        placement_.replica_count_on(e, h) / n_total);
      }
      split[e] = largest_remainder_round(exact, load);
    }
    return split;
  }

  std::vector<std::vector<int64_t>> random_split(std::mt19937_64& rng) const {
    std::vector<std::vector<int64_t>> split(hosts_.size());
    for (ExpertId e = 0; e < static_cast<int>(hosts_.size()); ++e) {
      const int64_t load = expert_load(inst_.demand, e);
      std::vector<double> weights;
      weights.reserve(hosts_[e].size());
      double sum = 0;
      for (size_t i = 0; i < hosts_[e].size(); ++i) {
        double w = unit_double(rng) + 1e-3;
        weights.push_back(w);
        sum += w;
      }
      for (double& w : weights) {
        w = w / sum * static_cast<double>(load);
      }
      split[e] = largest_remainder_round(weights, load);
    }
    return split;
  }

  std::vector<std::vector<int64_t>> router_split() const {
    RoutingPlan plan = route(inst_.demand, placement_);
    std::vector<std::vector<int64_t>> split(hosts_.size());
    for (ExpertId e = 0; e < static_cast<int>(hosts_.size()); ++e) {
      split[e].reserve(hosts_[e].size());
      for (GpuId h : hosts_[e]) {
        split[e].push_back(plan.received(e, h));
      }
    }
    return split;
  }

  // Descent over token moves between replicas of one expert. Larger chunks
  // accelerate the walk; the fixpoint is still unit-move optimality: the
  // search only stops once no single-token move improves the (sorted,
  // descending) per-GPU time vector, which strictly decreases on every
  // accepted move.
  SplitEvaluation descend(std::vector<std::vector<int64_t>> split) const {
    SplitEvaluation current = evaluate(split);
    int64_t max_load = 1;
    for (ExpertId e = 0; e < static_cast<int>(hosts_.size()); ++e) {
      max_load = std::max(max_load, expert_load(inst_.demand, e));
    }
    int64_t chunk = 1;
    while (chunk * 2 <= max_load) {
      chunk *= 2;
    }
    while (chunk >= 1) {
      bool improved = true;
      while (improved) {
        improved = false;
        for (ExpertId e = 0; e < static_cast<int>(hosts_.size()) && !improved;
             ++e) {
          const size_t k = hosts_[e].size();
          for (size_t from = 0; from < k && !improved; ++from) {
            if (split[e][from] < chunk) {
              continue;
            }
            for (size_t to = 0; to < k && !improved; ++to) {
              if (to == from) {
                continue;
              }
              split[e][from] -= chunk;
              split[e][to] += chunk;
              SplitEvaluation candidate = evaluate(split);
              if (lex_less(candidate.sorted_gpu_times, current.sorted_gpu_times)) {
                current = std::move(candidate);
                improved = true;
              } else {
                split[e][from] += chunk;
                split[e][to] -= chunk;
              }
            }
          }
        }
      }
      chunk /= 2;
    }
    return current;
  }

  SplitEvaluation best_split() const {
    SplitEvaluation best = descend(even_split());
    SplitEvaluation from_router = descend(router_split());
    if (lex_less(from_router.sorted_gpu_times, best.sorted_gpu_times)) {
      best = std::move(from_router);
    }
    for (int restart = 0; restart < kRandomRestarts; ++restart) {
      std::mt19937_64 rng(0x9e3779b97f4a7c15ULL + restart);
      SplitEvaluation candidate = descend(random_split(rng));
      if (lex_less(candidate.sorted_gpu_times, best.sorted_gpu_times)) {
        best = std::move(candidate);
      }
    }
    return best;
  }

 private:
  const OracleInstance& inst_;
  const Placement& placement_;
  std::vector<std::vector<GpuId>> hosts_;
};

}  // namespace

OracleSolution solve_exact(const OracleInstance& inst) {
  const int num_experts = inst.demand.num_experts;
  const int num_gpus = inst.demand.num_gpus;
  const int slots_per_gpu = inst.topo.vexperts_per_gpu();
  if (num_gpus != inst.topo.num_gpus()) {
    throw std::invalid_argument("solve_exact: demand and topology disagree on GPUs");
  }
  if (num_experts * num_gpus > kMaxOracleCells) {
    throw std::invalid_argument("solve_exact: instance too large (num_experts * "
                                "num_gpus > " +
                                std::to_string(kMaxOracleCells) + ")");
  }
  if (num_experts > num_gpus * slots_per_gpu) {
    throw std::invalid_argument("solve_exact: insufficient slots for " +
                                std::to_string(num_experts) + " experts");
  }

  const std::vector<std::vector<int>> options =
      gpu_count_options(num_experts, slots_per_gpu);
  double combos = 1;
  for (int g = 0; g < num_gpus; ++g) {
    combos *= static_cast<double>(options.size());
  }
  if (combos > static_cast<double>(kMaxEnumeratedPlacements)) {
    throw std::invalid_argument("solve_exact: instance too large to enumerate");
  }

  std::vector<int> counts(static_cast<size_t>(num_experts) * num_gpus, 0);
  std::vector<int> per_expert(num_experts, 0);
  bool found = false;
  double best_objective = std::numeric_limits<double>::infinity();
  std::vector<int> best_counts;
  RoutingPlan best_plan;

  auto consider = [&]() {
    Placement p = Placement::from_counts(counts, num_experts, num_gpus, slots_per_gpu);
    SplitSearch search(inst, p);
    SplitEvaluation eval = search.best_split();
    bool better = false;
    if (!found || eval.makespan < best_objective) {
      better = true;
    } else if (eval.makespan == best_objective && counts < best_counts) {
      better = true;
    }
    if (better) {
      found = true;
      best_objective = eval.makespan;
      best_counts = counts;
      best_plan = std::move(eval.plan);
    }
  };

  auto rec = [&](auto&& self, GpuId g) -> void {
    if (g == num_gpus) {
      for (int e = 0; e < num_experts; ++e) {
        if (per_expert[e] < 1) {
          return;
        }
      }
      consider();
      return;
    }
    for (const std::vector<int>& option : options) {
      for (int e = 0; e < num_experts; ++e) {
        counts[static_cast<size_t>(e) * num_gpus + g] = option[e];
        per_expert[e] += option[e];
      }
      self(self, g + 1);
      for (int e = 0; e < num_experts; ++e) {
        counts[static_cast<size_t>(e) * num_gpus + g] = 0;
        per_expert[e] -= option[e];
      }
    }
  };
  rec(rec, 0);

  if (!found) {
    throw std::logic_error("solve_exact: no feasible placement");
  }
  OracleSolution solution{
      Placement::from_counts(best_counts, num_experts, num_gpus, slots_per_gpu),
      std::move(best_plan), best_objective};
  solution.placement.validate();
  return solution;
}

double placement_objective(const OracleInstance& inst, const Placement& p) {
  RoutingPlan plan = route(inst.demand, p);
  return step_cost(inst.demand, p, plan, inst.topo).makespan_s;
}

double compare_policy(const OracleInstance& inst, const Placement& sim_placement) {
  sim_placement.validate();
  OracleSolution oracle = solve_exact(inst);
  double greedy = placement_objective(inst, sim_placement);
  return greedy / oracle.objective_s;
}

}  // namespace moesim
