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
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace moesim {

using GpuId = int;
using ExpertId = int;

/// Cluster profile answering every cost-model query: device layout, link
/// bandwidths, expert compute throughput and AllReduce throughput per device
/// group. Immutable after construction; safe to share across threads.
///
/// Config document (JSON object):
///   num_gpus, gpus_per_node      device layout; num_gpus % gpus_per_node == 0
///   vexperts_per_gpu             expert slots per device
///   intra_node_bandwidth_bps     bytes/s between two GPUs on one node
///   inter_node_bandwidth_bps     bytes/s across nodes (required iff multi-node)
///   tps                          tokens/s for one expert's fwd+bwd pass
///   expert_param_bytes           gradient size moved by one AllReduce
///   expert_state_bytes           parameters + optimizer state, moved on expand/migrate
///   token_bytes                  activation bytes per routed token
///   allreduce_bps.intra/.inter   {"<group size>": bytes/s}; the table must cover
///                                every reachable (size, span) pair and be
///                                non-increasing in group size per span class
class ClusterTopology {
 public:
  static ClusterTopology from_json(const nlohmann::json& config);
  static ClusterTopology from_file(const std::string& path);

  /// A100-like profile: 8 GPUs per node, NVLink-class links inside a node,
  /// InfiniBand-class links across nodes, ring-style AllReduce throughput.
  static nlohmann::json default_profile(int num_gpus, int vexperts_per_gpu);

  int num_gpus() const { return num_gpus_; }
  int gpus_per_node() const { return gpus_per_node_; }
  int vexperts_per_gpu() const { return vexperts_per_gpu_; }
  double tps() const { return tps_; }
  double expert_param_bytes() const { return expert_param_bytes_; }
  double expert_state_bytes() const { return expert_state_bytes_; }
  double token_bytes() const { return token_bytes_; }
  double intra_node_bandwidth() const { return intra_bw_; }
  double inter_node_bandwidth() const { return inter_bw_; }

  int node_of(GpuId g) const { return g / gpus_per_node_; }

  /// Link bandwidth in bytes/s. Same-device transfers are free
  /// (returns +infinity so size/bw costs evaluate to 0).
  double bandwidth(GpuId a, GpuId b) const;

  bool spans_nodes(std::span<const GpuId> group) const;

  /// AllReduce throughput for a device group, looked up by
  /// (group size, spans-nodes). Requires |group| >= 2.
  double group_bps(std::span<const GpuId> group) const;

  nlohmann::json to_json() const;

 private:
  ClusterTopology() = default;

  int num_gpus_ = 0;
  int gpus_per_node_ = 0;
  int vexperts_per_gpu_ = 0;
  double intra_bw_ = 0;
  double inter_bw_ = 0;
  double tps_ = 0;
  double expert_param_bytes_ = 0;
  double expert_state_bytes_ = 0;
  double token_bytes_ = 0;
  // Indexed by group size; entries below index 2 unused.
  std::vector<double> intra_bps_;
  std::vector<double> inter_bps_;
};

}  // namespace moesim
