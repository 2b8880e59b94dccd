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

#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "moesim/router.hpp"

using namespace moesim;

namespace {

ClusterTopology single_node(int num_gpus, int slots) {
  return ClusterTopology::from_json(
      ClusterTopology::default_profile(num_gpus, slots));
}

// Random placement with every expert on at least one GPU.
Placement random_placement(int num_experts, int num_gpus, int slots,
                           std::mt19937_64& rng) {
  std::vector<int> counts(static_cast<size_t>(num_experts) * num_gpus, 0);
  std::vector<int> used(num_gpus, 0);
  for (ExpertId e = 0; e < num_experts; ++e) {
    while (true) {
      GpuId g = static_cast<GpuId>(rng() % num_gpus);
      if (used[g] < slots) {
        counts[static_cast<size_t>(e) * num_gpus + g] += 1;
        used[g] += 1;
        break;
      }
    }
  }
  const int extra = static_cast<int>(rng() % (num_gpus * slots / 2 + 1));
  for (int i = 0; i < extra; ++i) {
    ExpertId e = static_cast<ExpertId>(rng() % num_experts);
    GpuId g = static_cast<GpuId>(rng() % num_gpus);
    if (used[g] < slots) {
      counts[static_cast<size_t>(e) * num_gpus + g] += 1;
      used[g] += 1;
    }
  }
  return Placement::from_counts(counts, num_experts, num_gpus, slots);
}

TokenDemand random_demand(int num_experts, int num_gpus, std::mt19937_64& rng) {
  TokenDemand d(0, num_experts, num_gpus);
  for (auto& cell : d.demand) {
    cell = static_cast<int64_t>(rng() % 200);
  }
  return d;
}

}  // namespace

TEST_CASE("two-replica split: locality first, residual to availability") {
  // Expert 0 on GPUs {0,1}, demand 6 on GPU 0 and 4 on GPU 1. Capacity per
  // replica is 5, so 5 stay local on GPU 0, 4 stay local on GPU 1, and the
  // one residual token from GPU 0 lands in GPU 1's availability.
  Placement p = Placement::from_counts({1, 1}, 1, 2, 1);
  TokenDemand d(0, 1, 2);
  d.at(0, 0) = 6;
  d.at(0, 1) = 4;
  RoutingPlan plan = route(d, p);
  CHECK(plan.flow(0, 0, 0) == 5);
  CHECK(plan.flow(0, 1, 1) == 4);
  CHECK(plan.flow(0, 0, 1) == 1);
  CHECK(plan.received(0, 0) == 5);
  CHECK(plan.received(0, 1) == 5);

  // Brute-force cross-check: no split of the same demand over the two
  // replicas achieves a smaller maximum received load.
  int64_t best_max = INT64_MAX;
  for (int64_t to_g0_from0 = 0; to_g0_from0 <= 6; ++to_g0_from0) {
    for (int64_t to_g0_from1 = 0; to_g0_from1 <= 4; ++to_g0_from1) {
      int64_t recv0 = to_g0_from0 + to_g0_from1;
      int64_t recv1 = (6 - to_g0_from0) + (4 - to_g0_from1);
      best_max = std::min(best_max, std::max(recv0, recv1));
    }
  }
  CHECK(std::max(plan.received(0, 0), plan.received(0, 1)) == best_max);
}

TEST_CASE("single replica receives everything") {
  Placement p = Placement::from_counts({0, 0, 1, 0}, 1, 4, 1);
  TokenDemand d(0, 1, 4);
  d.at(0, 0) = 10;
  d.at(0, 1) = 3;
  d.at(0, 3) = 5;
  RoutingPlan plan = route(d, p);
  CHECK(plan.received(0, 2) == 18);
  CHECK(plan.flow(0, 0, 2) == 10);
  CHECK(plan.flow(0, 1, 2) == 3);
  CHECK(plan.flow(0, 3, 2) == 5);
}

TEST_CASE("local demand on a one-expert-per-GPU placement stays local") {
  auto topo = single_node(4, 1);
  Placement p = Placement::initial(4, topo);
  TokenDemand d(0, 4, 4);
  for (ExpertId e = 0; e < 4; ++e) {
    d.at(e, e) = 100;
  }
  RoutingPlan plan = route(d, p);
  for (ExpertId e = 0; e < 4; ++e) {
    for (GpuId src = 0; src < 4; ++src) {
      for (GpuId dst = 0; dst < 4; ++dst) {
        CHECK(plan.flow(e, src, dst) == ((src == e && dst == e) ? 100 : 0));
      }
    }
  }
}

TEST_CASE("conservation and hosting on random instances") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const int num_experts = 1 + static_cast<int>(rng() % 6);
    const int num_gpus = 1 + static_cast<int>(rng() % 6);
    const int slots = 1 + static_cast<int>(rng() % 3);
    if (num_experts > num_gpus * slots) {
      continue;
    }
    Placement p = random_placement(num_experts, num_gpus, slots, rng);
    TokenDemand d = random_demand(num_experts, num_gpus, rng);
    RoutingPlan plan = route(d, p);
    for (ExpertId e = 0; e < num_experts; ++e) {
      for (GpuId src = 0; src < num_gpus; ++src) {
        int64_t routed = 0;
        for (GpuId dst = 0; dst < num_gpus; ++dst) {
          routed += plan.flow(e, src, dst);
          if (plan.flow(e, src, dst) > 0) {
            CHECK(p.replica_count_on(e, dst) > 0);
          }
        }
        CHECK(routed == d.at(e, src));
      }
    }
  }
}

TEST_CASE("per-vExpert loads stay even across replicas") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int num_experts = 1 + static_cast<int>(rng() % 4);
    const int num_gpus = 2 + static_cast<int>(rng() % 5);
    const int slots = 1 + static_cast<int>(rng() % 3);
    if (num_experts > num_gpus * slots) {
      continue;
    }
    Placement p = random_placement(num_experts, num_gpus, slots, rng);
    TokenDemand d = random_demand(num_experts, num_gpus, rng);
    RoutingPlan plan = route(d, p);
    for (ExpertId e = 0; e < num_experts; ++e) {
      if (expert_load(d, e) < p.replica_count(e)) {
        continue;  // fewer tokens than replicas cannot be even
      }
      double lo = 1e300;
      double hi = -1e300;
      for (GpuId g = 0; g < num_gpus; ++g) {
        int n = p.replica_count_on(e, g);
        if (n == 0) {
          continue;
        }
        double per_slot = static_cast<double>(plan.received(e, g)) / n;
        lo = std::min(lo, per_slot);
        hi = std::max(hi, per_slot);
      }
      CHECK(hi - lo <= 3.0);
    }
  }
}

TEST_CASE("more local slots never shrink the locally kept share") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int num_gpus = 2 + static_cast<int>(rng() % 4);
    std::vector<int> counts(static_cast<size_t>(num_gpus), 0);
    for (GpuId g = 0; g < num_gpus; ++g) {
      counts[g] = static_cast<int>(rng() % 3);
    }
    counts[0] = std::max(counts[0], 1);
    TokenDemand d = random_demand(1, num_gpus, rng);
    Placement p1 = Placement::from_counts(counts, 1, num_gpus, 4);
    counts[0] += 1;
    Placement p2 = Placement::from_counts(counts, 1, num_gpus, 4);
    RoutingPlan r1 = route(d, p1);
    RoutingPlan r2 = route(d, p2);
    CHECK(r2.flow(0, 0, 0) >= r1.flow(0, 0, 0));
  }
}

TEST_CASE("received_matrix matches a direct triple loop") {
  std::mt19937_64 rng(19);
  Placement p = random_placement(4, 4, 2, rng);
  TokenDemand d = random_demand(4, 4, rng);
  RoutingPlan plan = route(d, p);
  std::vector<int64_t> recv = received_matrix(plan);
  for (ExpertId e = 0; e < 4; ++e) {
    for (GpuId g = 0; g < 4; ++g) {
      int64_t expected = 0;
      for (GpuId src = 0; src < 4; ++src) {
        expected += plan.flow(e, src, g);
      }
      CHECK(recv[static_cast<size_t>(e) * 4 + g] == expected);
    }
  }
}

TEST_CASE("routing is deterministic") {
  std::mt19937_64 rng(23);
  Placement p = random_placement(5, 4, 2, rng);
  TokenDemand d = random_demand(5, 4, rng);
  RoutingPlan a = route(d, p);
  RoutingPlan b = route(d, p);
  CHECK(a.flows == b.flows);
}

TEST_CASE("demand for an expert outside the placement is rejected") {
  auto topo = single_node(2, 1);
  Placement p = Placement::initial(2, topo);
  TokenDemand d(0, 3, 2);
  d.at(2, 0) = 5;
  CHECK_THROWS_AS(route(d, p), std::invalid_argument);
}
