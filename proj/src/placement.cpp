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

#include "moesim/placement.hpp"

#include <sstream>
#include <stdexcept>

namespace moesim {

std::string to_string(const PlacementOp& op) {
  std::ostringstream out;
  switch (op.kind) {
    case PlacementOpKind::Expand:
      out << "Expand(e" << op.expert << "->g" << op.gpu << ")";
      break;
    case PlacementOpKind::Shrink:
      out << "Shrink(e" << op.expert << "@g" << op.gpu << ")";
      break;
    case PlacementOpKind::Migrate:
      out << "Migrate(g" << op.a.gpu << "s" << op.a.slot << "<->g" << op.b.gpu
          << "s" << op.b.slot << ")";
      break;
  }
  return out.str();
}

Placement::Placement(int num_gpus, int slots_per_gpu, int num_experts)
    : num_gpus_(num_gpus),
      slots_per_gpu_(slots_per_gpu),
      num_experts_(num_experts),
      slots_(static_cast<size_t>(num_gpus) * slots_per_gpu, kUnassigned),
      count_(static_cast<size_t>(num_experts) * num_gpus, 0),
      total_count_(num_experts, 0) {
  if (num_gpus < 1 || slots_per_gpu < 1 || num_experts < 1) {
    throw std::invalid_argument("Placement: dimensions must be positive");
  }
}

Placement Placement::round_robin(int num_experts, int num_gpus, int slots_per_gpu) {
  if (num_experts > num_gpus * slots_per_gpu) {
    throw std::invalid_argument("initial placement: insufficient vExpert budget (" +
                                std::to_string(num_experts) + " experts, " +
                                std::to_string(num_gpus * slots_per_gpu) + " slots)");
  }
  Placement p(num_gpus, slots_per_gpu, num_experts);
  for (ExpertId e = 0; e < num_experts; ++e) {
    GpuId g = e % num_gpus;
    int s = p.first_free_slot(g);
    p.slots_[p.index(g, s)] = e;
    p.count_[p.cindex(e, g)] += 1;
    p.total_count_[e] += 1;
    p.assigned_slots_ += 1;
  }
  return p;
}

Placement Placement::initial(int num_experts, const ClusterTopology& topo) {
  return round_robin(num_experts, topo.num_gpus(), topo.vexperts_per_gpu());
}

Placement Placement::from_counts(const std::vector<int>& counts, int num_experts,
                                 int num_gpus, int slots_per_gpu) {
  if (counts.size() != static_cast<size_t>(num_experts) * num_gpus) {
    throw std::invalid_argument("from_counts: bad counts shape");
  }
  Placement p(num_gpus, slots_per_gpu, num_experts);
  for (GpuId g = 0; g < num_gpus; ++g) {
    int used = 0;
    for (ExpertId e = 0; e < num_experts; ++e) {
      int n = counts[p.cindex(e, g)];
      if (n < 0) {
        throw std::invalid_argument("from_counts: negative replica count");
      }
      for (int k = 0; k < n; ++k) {
        if (used >= slots_per_gpu) {
          throw std::invalid_argument("from_counts: GPU " + std::to_string(g) +
                                      " over its slot budget");
        }
        p.slots_[p.index(g, used)] = e;
        ++used;
      }
      p.count_[p.cindex(e, g)] = n;
      p.total_count_[e] += n;
      p.assigned_slots_ += n;
    }
  }
  for (ExpertId e = 0; e < num_experts; ++e) {
    if (p.total_count_[e] < 1) {
      throw std::invalid_argument("from_counts: expert " + std::to_string(e) +
                                  " has no replica");
    }
  }
  return p;
}

std::vector<GpuId> Placement::replica_gpus(ExpertId e) const {
  std::vector<GpuId> gpus;
  for (GpuId g = 0; g < num_gpus_; ++g) {
    if (count_[cindex(e, g)] > 0) {
      gpus.push_back(g);
    }
  }
  return gpus;
}

int Placement::free_slots(GpuId g) const {
  int free = 0;
  for (int s = 0; s < slots_per_gpu_; ++s) {
    if (slots_[index(g, s)] == kUnassigned) {
      ++free;
    }
  }
  return free;
}

int Placement::first_free_slot(GpuId g) const {
  for (int s = 0; s < slots_per_gpu_; ++s) {
    if (slots_[index(g, s)] == kUnassigned) {
      return s;
    }
  }
  return -1;
}

double Placement::slot_utilization() const {
  return static_cast<double>(assigned_slots_) /
         (static_cast<double>(num_gpus_) * slots_per_gpu_);
}

std::optional<TransferDescriptor> Placement::expand(ExpertId e, GpuId target_gpu,
                                                    const ClusterTopology& topo) {
  if (e < 0 || e >= num_experts_ || target_gpu < 0 || target_gpu >= num_gpus_) {
    throw std::invalid_argument("expand: id out of range");
  }
  int s = first_free_slot(target_gpu);
  if (s < 0) {
    throw std::invalid_argument("expand: no free vExpert slot on GPU " +
                                std::to_string(target_gpu));
  }
  const bool already_local = count_[cindex(e, target_gpu)] > 0;
  std::optional<TransferDescriptor> transfer;
  if (!already_local) {
    if (total_count_[e] == 0) {
      throw std::invalid_argument("expand: expert " + std::to_string(e) +
                                  " has no replica to copy from");
    }
    GpuId src = -1;
    double best_bw = -1;
    for (GpuId g : replica_gpus(e)) {
      double bw = topo.bandwidth(g, target_gpu);
      if (bw > best_bw) {
        best_bw = bw;
        src = g;
      }
    }
    transfer = TransferDescriptor{src, target_gpu, topo.expert_state_bytes()};
  }
  slots_[index(target_gpu, s)] = e;
  count_[cindex(e, target_gpu)] += 1;
  total_count_[e] += 1;
  assigned_slots_ += 1;
  return transfer;
}

void Placement::shrink(ExpertId e, GpuId source_gpu) {
  if (e < 0 || e >= num_experts_ || source_gpu < 0 || source_gpu >= num_gpus_) {
    throw std::invalid_argument("shrink: id out of range");
  }
  if (count_[cindex(e, source_gpu)] == 0) {
    throw std::invalid_argument("shrink: expert " + std::to_string(e) +
                                " has no replica on GPU " +
                                std::to_string(source_gpu));
  }
  if (total_count_[e] <= 1) {
    throw std::invalid_argument("shrink: cannot release the last replica of expert " +
                                std::to_string(e));
  }
  for (int s = slots_per_gpu_ - 1; s >= 0; --s) {
    if (slots_[index(source_gpu, s)] == e) {
      slots_[index(source_gpu, s)] = kUnassigned;
      count_[cindex(e, source_gpu)] -= 1;
      total_count_[e] -= 1;
      assigned_slots_ -= 1;
      return;
    }
  }
}

void Placement::check_slot(SlotRef ref) const {
  if (ref.gpu < 0 || ref.gpu >= num_gpus_ || ref.slot < 0 ||
      ref.slot >= slots_per_gpu_) {
    throw std::invalid_argument("slot reference out of range");
  }
}

std::array<TransferDescriptor, 2> Placement::migrate(SlotRef a, SlotRef b,
                                                     const ClusterTopology& topo) {
  check_slot(a);
  check_slot(b);
  ExpertId ea = slots_[index(a.gpu, a.slot)];
  ExpertId eb = slots_[index(b.gpu, b.slot)];
  if (ea == kUnassigned || eb == kUnassigned) {
    throw std::invalid_argument("migrate: both slots must be assigned");
  }
  if (ea == eb) {
    throw std::invalid_argument("migrate: slots host the same expert");
  }
  if (a.gpu == b.gpu) {
    throw std::invalid_argument("migrate: slots must live on different GPUs");
  }
  slots_[index(a.gpu, a.slot)] = eb;
  slots_[index(b.gpu, b.slot)] = ea;
  count_[cindex(ea, a.gpu)] -= 1;
  count_[cindex(ea, b.gpu)] += 1;
  count_[cindex(eb, b.gpu)] -= 1;
  count_[cindex(eb, a.gpu)] += 1;
  return {TransferDescriptor{a.gpu, b.gpu, topo.expert_state_bytes()},
          TransferDescriptor{b.gpu, a.gpu, topo.expert_state_bytes()}};
}

void Placement::apply(const PlacementOp& op, const ClusterTopology& topo) {
  switch (op.kind) {
    case PlacementOpKind::Expand:
      expand(op.expert, op.gpu, topo);
      break;
    case PlacementOpKind::Shrink:
      shrink(op.expert, op.gpu);
      break;
    case PlacementOpKind::Migrate:
      migrate(op.a, op.b, topo);
      break;
  }
}

void Placement::validate() const {
  std::vector<int> counts(static_cast<size_t>(num_experts_) * num_gpus_, 0);
  int assigned = 0;
  for (GpuId g = 0; g < num_gpus_; ++g) {
    for (int s = 0; s < slots_per_gpu_; ++s) {
      ExpertId e = slots_[index(g, s)];
      if (e == kUnassigned) {
        continue;
      }
      if (e < 0 || e >= num_experts_) {
        throw std::logic_error("placement invariant: slot holds invalid expert id");
      }
      counts[cindex(e, g)] += 1;
      ++assigned;
    }
  }
  if (counts != count_ || assigned != assigned_slots_) {
    throw std::logic_error("placement invariant: replica counts out of sync");
  }
  for (ExpertId e = 0; e < num_experts_; ++e) {
    int total = 0;
    for (GpuId g = 0; g < num_gpus_; ++g) {
      total += counts[cindex(e, g)];
    }
    if (total != total_count_[e]) {
      throw std::logic_error("placement invariant: total replica count out of sync");
    }
    if (total < 1) {
      throw std::logic_error("placement invariant: expert " + std::to_string(e) +
                             " has no replica");
    }
  }
}

std::string Placement::serialize() const {
  std::ostringstream out;
  for (GpuId g = 0; g < num_gpus_; ++g) {
    for (int s = 0; s < slots_per_gpu_; ++s) {
      ExpertId e = slots_[index(g, s)];
      if (e != kUnassigned) {
        out << g << ',' << s << ',' << e << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace moesim
