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

#include <map>
#include <random>
#include <stdexcept>

#include "moesim/placement.hpp"

using namespace moesim;

namespace {

ClusterTopology single_node(int num_gpus, int slots) {
  return ClusterTopology::from_json(
      ClusterTopology::default_profile(num_gpus, slots));
}

// Multiset of (gpu, expert) assignments.
std::map<std::pair<GpuId, ExpertId>, int> assignment_multiset(const Placement& p) {
  std::map<std::pair<GpuId, ExpertId>, int> out;
  for (GpuId g = 0; g < p.num_gpus(); ++g) {
    for (int s = 0; s < p.slots_per_gpu(); ++s) {
      if (p.slot(g, s) != kUnassigned) {
        out[{g, p.slot(g, s)}] += 1;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("round-robin initial placement") {
  SUBCASE("one expert per GPU with spare slots") {
    auto topo = single_node(4, 2);
    Placement p = Placement::initial(4, topo);
    for (ExpertId e = 0; e < 4; ++e) {
      CHECK(p.replica_count_on(e, e) == 1);
      CHECK(p.replica_count(e) == 1);
    }
    for (GpuId g = 0; g < 4; ++g) {
      CHECK(p.free_slots(g) == 1);
    }
  }
  SUBCASE("wraps around") {
    Placement p = Placement::round_robin(8, 4, 2);
    CHECK(p.replica_count_on(0, 0) == 1);
    CHECK(p.replica_count_on(4, 0) == 1);
    CHECK(p.free_slots(0) == 0);
  }
  SUBCASE("budget violation") {
    CHECK_THROWS_WITH_AS(Placement::round_robin(9, 4, 2),
                         doctest::Contains("insufficient vExpert budget"),
                         std::invalid_argument);
  }
}

TEST_CASE("expand") {
  auto topo = single_node(4, 2);
  Placement p = Placement::initial(4, topo);

  SUBCASE("copies from the only replica") {
    auto t = p.expand(0, 1, topo);
    REQUIRE(t.has_value());
    CHECK(t->src == 0);
    CHECK(t->dst == 1);
    CHECK(t->bytes == doctest::Approx(topo.expert_state_bytes()));
    CHECK(p.replica_count(0) == 2);
    p.validate();
  }
  SUBCASE("intra-GPU expansion shares weights, no transfer") {
    auto t = p.expand(0, 0, topo);
    CHECK_FALSE(t.has_value());
    CHECK(p.replica_count_on(0, 0) == 2);
    p.validate();
  }
  SUBCASE("full GPU rejected") {
    p.expand(0, 1, topo);
    CHECK(p.free_slots(1) == 0);
    CHECK_THROWS_WITH_AS(p.expand(3, 1, topo), doctest::Contains("no free"),
                         std::invalid_argument);
  }
  SUBCASE("source replica is the nearest by bandwidth") {
    auto wide = ClusterTopology::from_json(ClusterTopology::default_profile(16, 2));
    Placement q = Placement::initial(16, wide);
    q.expand(0, 8, wide);  // expert 0 now on {0, 8}
    auto t = q.expand(0, 9, wide);
    REQUIRE(t.has_value());
    CHECK(t->src == 8);  // same node as 9
    auto t2 = q.expand(0, 1, wide);
    REQUIRE(t2.has_value());
    CHECK(t2->src == 0);  // the only replica on the target's node
  }
}

TEST_CASE("shrink") {
  auto topo = single_node(4, 2);
  Placement p = Placement::initial(4, topo);

  SUBCASE("removes one replica") {
    p.expand(0, 1, topo);
    p.shrink(0, 1);
    CHECK(p.replica_count(0) == 1);
    CHECK(p.replica_count_on(0, 1) == 0);
    p.validate();
  }
  SUBCASE("stacked slots shrink one at a time") {
    p.expand(0, 0, topo);
    p.shrink(0, 0);
    CHECK(p.replica_count_on(0, 0) == 1);
  }
  SUBCASE("last replica is protected") {
    CHECK_THROWS_WITH_AS(p.shrink(0, 0), doctest::Contains("last replica"),
                         std::invalid_argument);
  }
  SUBCASE("absent replica rejected") {
    p.expand(0, 1, topo);
    CHECK_THROWS_AS(p.shrink(0, 2), std::invalid_argument);
  }
}

TEST_CASE("migrate") {
  auto topo = single_node(4, 2);
  Placement p = Placement::initial(4, topo);

  SUBCASE("swaps assignments and reports both transfers") {
    auto transfers = p.migrate({0, 0}, {1, 0}, topo);
    CHECK(p.slot(0, 0) == 1);
    CHECK(p.slot(1, 0) == 0);
    CHECK(transfers[0].src == 0);
    CHECK(transfers[0].dst == 1);
    CHECK(transfers[1].src == 1);
    CHECK(transfers[1].dst == 0);
    p.validate();
  }
  SUBCASE("same expert rejected") {
    p.expand(0, 1, topo);
    CHECK_THROWS_AS(p.migrate({0, 0}, {1, 1}, topo), std::invalid_argument);
  }
  SUBCASE("same GPU rejected") {
    p.expand(1, 0, topo);
    CHECK_THROWS_AS(p.migrate({0, 0}, {0, 1}, topo), std::invalid_argument);
  }
  SUBCASE("unassigned slot rejected") {
    CHECK_THROWS_AS(p.migrate({0, 1}, {1, 0}, topo), std::invalid_argument);
  }
}

TEST_CASE("expand then shrink is an identity on the assignment multiset") {
  auto topo = single_node(4, 2);
  Placement p = Placement::initial(4, topo);
  p.expand(2, 0, topo);
  auto before = assignment_multiset(p);
  p.expand(1, 3, topo);
  p.shrink(1, 3);
  CHECK(assignment_multiset(p) == before);
}

TEST_CASE("random primitive sequences preserve invariants") {
  auto topo = single_node(4, 3);
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    Placement p = Placement::initial(6, topo);
    int assigned = p.assigned_slots();
    for (int step = 0; step < 20; ++step) {
      const int kind = static_cast<int>(rng() % 3);
      if (kind == 0) {
        ExpertId e = static_cast<ExpertId>(rng() % 6);
        GpuId g = static_cast<GpuId>(rng() % 4);
        if (p.free_slots(g) > 0) {
          p.expand(e, g, topo);
          ++assigned;
        }
      } else if (kind == 1) {
        ExpertId e = static_cast<ExpertId>(rng() % 6);
        GpuId g = static_cast<GpuId>(rng() % 4);
        if (p.replica_count(e) >= 2 && p.replica_count_on(e, g) > 0) {
          p.shrink(e, g);
          --assigned;
        }
      } else {
        SlotRef a{static_cast<GpuId>(rng() % 4), static_cast<int>(rng() % 3)};
        SlotRef b{static_cast<GpuId>(rng() % 4), static_cast<int>(rng() % 3)};
        ExpertId ea = p.slot(a.gpu, a.slot);
        ExpertId eb = p.slot(b.gpu, b.slot);
        if (ea != kUnassigned && eb != kUnassigned && ea != eb && a.gpu != b.gpu) {
          p.migrate(a, b, topo);
        }
      }
      p.validate();
      CHECK(p.assigned_slots() == assigned);
    }
  }
}

TEST_CASE("serialization lists assigned slots") {
  auto topo = single_node(2, 2);
  Placement p = Placement::initial(2, topo);
  CHECK(p.serialize() == "0,0,0\n1,0,1\n");
}
