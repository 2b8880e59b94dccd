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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "moesim/topology.hpp"

namespace moesim {

inline constexpr ExpertId kUnassigned = -1;

/// Point-to-point copy of one expert's model states (parameters + optimizer
/// state) between two GPUs.
struct TransferDescriptor {
  GpuId src = -1;
  GpuId dst = -1;
  double bytes = 0;
};

struct SlotRef {
  GpuId gpu = -1;
  int slot = -1;
};

enum class PlacementOpKind { Expand, Shrink, Migrate };

struct PlacementOp {
  PlacementOpKind kind = PlacementOpKind::Expand;
  ExpertId expert = kUnassigned;  // Expand/Shrink subject
  GpuId gpu = -1;                 // Expand target / Shrink source
  SlotRef a{};                    // Migrate endpoints
  SlotRef b{};
};

std::string to_string(const PlacementOp& op);

/// Expert-to-device mapping over a pool of vExpert slots. Each GPU owns a
/// fixed number of slots; a slot hosts at most one expert replica. Multiple
/// slots of the same expert on one GPU share weights: they count once for
/// gradient synchronization while their token capacities add.
///
/// Copyable value type; the simulation engine hands immutable snapshots to
/// the policy and mutates only its own copies.
class Placement {
 public:
  Placement(int num_gpus, int slots_per_gpu, int num_experts);

  /// Classic expert parallelism as the starting point: expert i lands on
  /// GPU i % G with one slot; remaining slots stay unassigned.
  static Placement initial(int num_experts, const ClusterTopology& topo);
  static Placement round_robin(int num_experts, int num_gpus, int slots_per_gpu);

  /// Builds a placement from replica counts[e * num_gpus + g]; slots fill in
  /// ascending order per GPU.
  static Placement from_counts(const std::vector<int>& counts, int num_experts,
                               int num_gpus, int slots_per_gpu);

  int num_gpus() const { return num_gpus_; }
  int slots_per_gpu() const { return slots_per_gpu_; }
  int num_experts() const { return num_experts_; }

  ExpertId slot(GpuId g, int s) const { return slots_[index(g, s)]; }
  int replica_count(ExpertId e) const { return total_count_[e]; }              // n_e
  int replica_count_on(ExpertId e, GpuId g) const { return count_[cindex(e, g)]; }
  std::vector<GpuId> replica_gpus(ExpertId e) const;  // sorted ascending
  int free_slots(GpuId g) const;
  int first_free_slot(GpuId g) const;  // -1 when full
  int assigned_slots() const { return assigned_slots_; }
  double slot_utilization() const;

  /// Assigns one free slot on target_gpu to expert e. Returns the state
  /// transfer this implies: nothing when e already lives on target_gpu
  /// (intra-GPU weight sharing), otherwise a copy from the nearest existing
  /// replica (highest bandwidth to the target, ties to the lowest GPU id).
  std::optional<TransferDescriptor> expand(ExpertId e, GpuId target_gpu,
                                           const ClusterTopology& topo);

  /// Releases one slot of e on source_gpu. Free: no communication. The last
  /// replica of an expert cannot be released.
  void shrink(ExpertId e, GpuId source_gpu);

  /// Swaps the experts assigned to two slots on different GPUs. Returns the
  /// two opposite-direction state transfers this implies.
  std::array<TransferDescriptor, 2> migrate(SlotRef a, SlotRef b,
                                            const ClusterTopology& topo);

  void apply(const PlacementOp& op, const ClusterTopology& topo);

  /// Throws when a structural invariant is broken; used by property tests.
  void validate() const;

  /// One line per assigned slot: "gpu,slot,expert", sorted by (gpu, slot).
  std::string serialize() const;

  bool operator==(const Placement& other) const = default;

 private:
  size_t index(GpuId g, int s) const {
    return static_cast<size_t>(g) * slots_per_gpu_ + s;
  }
  size_t cindex(ExpertId e, GpuId g) const {
    return static_cast<size_t>(e) * num_gpus_ + g;
  }
  void check_slot(SlotRef ref) const;

  int num_gpus_ = 0;
  int slots_per_gpu_ = 0;
  int num_experts_ = 0;
  int assigned_slots_ = 0;
  std::vector<ExpertId> slots_;    // [gpu][slot]
  std::vector<int> count_;         // [expert][gpu] slot counts
  std::vector<int> total_count_;   // [expert]
};

}  // namespace moesim
