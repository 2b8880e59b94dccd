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

#include <random>

#include "moesim/cost_model.hpp"

using namespace moesim;

namespace {

ClusterTopology single_node(int num_gpus, int slots) {
  return ClusterTopology::from_json(
      ClusterTopology::default_profile(num_gpus, slots));
}

}  // namespace

TEST_CASE("compute cost is linear in tokens") {
  auto topo = single_node(2, 1);  // tps = 1e6
  CHECK(compute_cost(0, topo) == 0.0);
  CHECK(compute_cost(1'000'000, topo) == doctest::Approx(1.0));
  CHECK(compute_cost(2'000'000, topo) == doctest::Approx(2.0 * compute_cost(1'000'000, topo)));
  CHECK_THROWS_AS(compute_cost(-1, topo), std::invalid_argument);
}

TEST_CASE("all-to-all cost") {
  SUBCASE("local flows are free") {
    auto topo = single_node(2, 1);
    RoutingPlan plan(1, 2);
    plan.flow(0, 0, 0) = 1000;
    CHECK(a2a_cost(plan, 0, 0, topo) == 0.0);
  }
  SUBCASE("remote flow over a 25e9 B/s link, four exchanges per step") {
    // 1000 tokens * 4096 B / 25e9 B/s * 4 = 6.5536e-4 s
    auto topo = ClusterTopology::from_json(ClusterTopology::default_profile(16, 1));
    RoutingPlan plan(1, 16);
    plan.flow(0, 8, 0) = 1000;
    CHECK(a2a_cost(plan, 0, 0, topo) == doctest::Approx(6.5536e-4).epsilon(1e-12));
  }
  SUBCASE("splitting a remote flow across equal-bandwidth sources is neutral") {
    auto topo = single_node(4, 1);
    RoutingPlan one(1, 4);
    one.flow(0, 1, 0) = 1000;
    RoutingPlan two(1, 4);
    two.flow(0, 1, 0) = 500;
    two.flow(0, 2, 0) = 500;
    CHECK(a2a_cost(one, 0, 0, topo) == doctest::Approx(a2a_cost(two, 0, 0, topo)));
  }
}

TEST_CASE("synchronization cost") {
  SUBCASE("single-GPU expert pays nothing") {
    auto topo = single_node(2, 2);
    Placement p = Placement::initial(2, topo);
    CHECK(sync_cost(p, 0, topo) == 0.0);
  }
  SUBCASE("two-GPU group at explicit bps") {
    // 50e6 bytes / 100e9 B/s = 5e-4 s
    nlohmann::json config = ClusterTopology::default_profile(2, 2);
    config["allreduce_bps"]["intra"]["2"] = 100e9;
    auto topo = ClusterTopology::from_json(config);
    Placement p = Placement::initial(2, topo);
    p.expand(0, 1, topo);
    CHECK(sync_cost(p, 0, topo) == doctest::Approx(5e-4).epsilon(1e-12));
  }
  SUBCASE("widening a group never cuts the cost") {
    auto topo = single_node(8, 8);
    Placement p = Placement::initial(8, topo);
    double prev = 0;
    for (GpuId g = 1; g < 8; ++g) {
      p.expand(0, g, topo);
      double cost = sync_cost(p, 0, topo);
      CHECK(cost >= prev);
      prev = cost;
    }
  }
}

TEST_CASE("adjustment transfer cost") {
  auto topo = ClusterTopology::from_json(ClusterTopology::default_profile(16, 2));
  SUBCASE("intra-GPU share is free") {
    std::optional<TransferDescriptor> none;
    CHECK(adjust_cost(none, topo) == 0.0);
  }
  SUBCASE("state transfer over an inter-node link") {
    // 150e6 bytes / 25e9 B/s = 6e-3 s
    TransferDescriptor t{0, 8, 150e6};
    CHECK(adjust_cost(t, topo) == doctest::Approx(6e-3).epsilon(1e-12));
  }
  SUBCASE("migrate transfers are costed independently") {
    Placement p = Placement::initial(16, topo);
    auto transfers = p.migrate({0, 0}, {8, 0}, topo);
    CHECK(adjust_cost(transfers[0], topo) == doctest::Approx(6e-3));
    CHECK(adjust_cost(transfers[1], topo) == doctest::Approx(6e-3));
  }
}

TEST_CASE("step cost") {
  SUBCASE("one GPU, one expert: pure compute") {
    auto topo = single_node(1, 1);
    Placement p = Placement::initial(1, topo);
    TokenDemand d(0, 1, 1);
    d.at(0, 0) = 4096;
    RoutingPlan plan = route(d, p);
    StepCostBreakdown cost = step_cost(d, p, plan, topo);
    CHECK(cost.makespan_s == doctest::Approx(4096.0 / 1e6).epsilon(1e-12));
    CHECK(cost.per_gpu[0].a2a_s == 0.0);
    CHECK(cost.per_gpu[0].sync_s == 0.0);
  }
  SUBCASE("symmetric two-GPU case") {
    auto topo = single_node(2, 1);
    Placement p = Placement::initial(2, topo);
    TokenDemand d(0, 2, 2);
    d.at(0, 0) = 500;
    d.at(0, 1) = 500;
    d.at(1, 0) = 500;
    d.at(1, 1) = 500;
    RoutingPlan plan = route(d, p);
    StepCostBreakdown cost = step_cost(d, p, plan, topo);
    CHECK(cost.per_gpu[0].total() == doctest::Approx(cost.per_gpu[1].total()));
    CHECK(cost.makespan_s == doctest::Approx(cost.per_gpu[0].total()));
  }
  SUBCASE("skewed two-GPU case matches the hand evaluation") {
    // Experts on their own GPUs, demand 3000/1000 split evenly over sources.
    // GPU 0: 3000 tokens compute (3e-3 s) plus 1500 remote tokens
    //   (4 * 1500 * 4096 / 300e9 = 8.192e-5 s).
    // GPU 1: 1000 tokens compute (1e-3 s) plus 500 remote tokens
    //   (4 * 500 * 4096 / 300e9 = 2.7306666...e-5 s).
    auto topo = single_node(2, 1);
    Placement p = Placement::initial(2, topo);
    TokenDemand d(0, 2, 2);
    d.at(0, 0) = 1500;
    d.at(0, 1) = 1500;
    d.at(1, 0) = 500;
    d.at(1, 1) = 500;
    RoutingPlan plan = route(d, p);
    StepCostBreakdown cost = step_cost(d, p, plan, topo);
    CHECK(cost.per_gpu[0].compute_s == doctest::Approx(3e-3).epsilon(1e-12));
    CHECK(cost.per_gpu[0].a2a_s == doctest::Approx(8.192e-5).epsilon(1e-12));
    CHECK(cost.per_gpu[1].compute_s == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(cost.per_gpu[1].a2a_s ==
          doctest::Approx(2.730666666666667e-5).epsilon(1e-12));
    CHECK(cost.makespan_s ==
          doctest::Approx(3e-3 + 8.192e-5).epsilon(1e-12));
  }
  SUBCASE("flows to a non-hosting GPU are rejected") {
    auto topo = single_node(2, 1);
    Placement p = Placement::initial(2, topo);
    RoutingPlan plan(2, 2);
    plan.flow(0, 0, 1) = 5;  // expert 0 lives on GPU 0 only
    TokenDemand d(0, 2, 2);
    d.at(0, 0) = 5;
    CHECK_THROWS_AS(step_cost(d, p, plan, topo), std::invalid_argument);
  }
}

TEST_CASE("adding tokens never lowers the makespan") {
  auto topo = single_node(4, 2);
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Placement p = Placement::initial(4, topo);
    p.expand(static_cast<ExpertId>(rng() % 4), static_cast<GpuId>(rng() % 4), topo);
    TokenDemand d(0, 4, 4);
    for (auto& cell : d.demand) {
      cell = static_cast<int64_t>(rng() % 100);
    }
    RoutingPlan plan = route(d, p);
    double base = step_cost(d, p, plan, topo).makespan_s;

    // Grow one existing flow by one token.
    for (ExpertId e = 0; e < 4; ++e) {
      for (GpuId dst = 0; dst < 4; ++dst) {
        if (p.replica_count_on(e, dst) > 0) {
          RoutingPlan grown = plan;
          grown.flow(e, 0, dst) += 1;
          CHECK(step_cost(d, p, grown, topo).makespan_s >= base);
        }
      }
    }
  }
}

TEST_CASE("makespan dominates the zero-communication bound") {
  auto topo = single_node(4, 2);
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    Placement p = Placement::initial(8, topo);
    TokenDemand d(0, 8, 4);
    for (auto& cell : d.demand) {
      cell = static_cast<int64_t>(rng() % 100);
    }
    RoutingPlan plan = route(d, p);
    std::vector<int64_t> totals = per_gpu_received(plan);
    int64_t max_tokens = *std::max_element(totals.begin(), totals.end());
    CHECK(step_cost(d, p, plan, topo).makespan_s >=
          compute_cost(max_tokens, topo) - 1e-15);
  }
}
