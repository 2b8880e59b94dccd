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

#include "moesim/topology.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

namespace moesim {

namespace {

double require_positive(const nlohmann::json& config, const std::string& key) {
  if (!config.contains(key)) {
    throw std::invalid_argument("topology config: missing field '" + key + "'");
  }
  double value = config.at(key).get<double>();
  if (!(value > 0)) {
    throw std::invalid_argument("topology config: non-positive " + key);
  }
  return value;
}

// Parses {"<size>": bps} into a size-indexed vector covering [2, max_size],
// rejecting gaps, non-positive entries and non-monotone profiles.
std::vector<double> parse_bps_table(const nlohmann::json& table, int max_size,
                                    const std::string& span_name) {
  std::vector<double> bps(static_cast<size_t>(max_size) + 1, 0.0);
  for (int size = 2; size <= max_size; ++size) {
    const std::string key = std::to_string(size);
    if (!table.contains(key)) {
      throw std::invalid_argument("topology config: allreduce_bps." + span_name +
                                  " missing entry for group size " + key);
    }
    double value = table.at(key).get<double>();
    if (!(value > 0)) {
      throw std::invalid_argument("topology config: non-positive allreduce_bps." +
                                  span_name + "[" + key + "]");
    }
    if (size > 2 && value > bps[size - 1]) {
      throw std::invalid_argument("topology config: allreduce_bps." + span_name +
                                  " must be non-increasing in group size");
    }
    bps[size] = value;
  }
  return bps;
}

}  // namespace

ClusterTopology ClusterTopology::from_json(const nlohmann::json& config) {
  ClusterTopology topo;
  for (const char* key : {"num_gpus", "gpus_per_node", "vexperts_per_gpu"}) {
    if (!config.contains(key)) {
      throw std::invalid_argument(std::string("topology config: missing field '") +
                                  key + "'");
    }
  }
  topo.num_gpus_ = config.at("num_gpus").get<int>();
  topo.gpus_per_node_ = config.at("gpus_per_node").get<int>();
  topo.vexperts_per_gpu_ = config.at("vexperts_per_gpu").get<int>();
  if (topo.num_gpus_ < 1) {
    throw std::invalid_argument("topology config: num_gpus must be >= 1");
  }
  if (topo.gpus_per_node_ < 1 || topo.num_gpus_ % topo.gpus_per_node_ != 0) {
    throw std::invalid_argument(
        "topology config: num_gpus must be a positive multiple of gpus_per_node");
  }
  if (topo.vexperts_per_gpu_ < 1) {
    throw std::invalid_argument("topology config: vexperts_per_gpu must be >= 1");
  }

  topo.intra_bw_ = require_positive(config, "intra_node_bandwidth_bps");
  topo.tps_ = require_positive(config, "tps");
  topo.expert_param_bytes_ = require_positive(config, "expert_param_bytes");
  topo.expert_state_bytes_ = require_positive(config, "expert_state_bytes");
  topo.token_bytes_ = require_positive(config, "token_bytes");

  const bool multi_node = topo.num_gpus_ > topo.gpus_per_node_;
  if (multi_node) {
    topo.inter_bw_ = require_positive(config, "inter_node_bandwidth_bps");
  } else if (config.contains("inter_node_bandwidth_bps")) {
    topo.inter_bw_ = require_positive(config, "inter_node_bandwidth_bps");
  }

  if (topo.num_gpus_ >= 2) {
    if (!config.contains("allreduce_bps")) {
      throw std::invalid_argument("topology config: missing field 'allreduce_bps'");
    }
    const auto& tables = config.at("allreduce_bps");
    const int max_intra = std::min(topo.gpus_per_node_, topo.num_gpus_);
    if (max_intra >= 2) {
      if (!tables.contains("intra")) {
        throw std::invalid_argument("topology config: missing allreduce_bps.intra");
      }
      topo.intra_bps_ = parse_bps_table(tables.at("intra"), max_intra, "intra");
    }
    if (multi_node) {
      if (!tables.contains("inter")) {
        throw std::invalid_argument("topology config: missing allreduce_bps.inter");
      }
      topo.inter_bps_ = parse_bps_table(tables.at("inter"), topo.num_gpus_, "inter");
      // Widening a group from intra-node to inter-node at equal size may not
      // speed it up.
      for (int size = 2; size <= max_intra; ++size) {
        if (topo.inter_bps_[size] > topo.intra_bps_[size]) {
          throw std::invalid_argument(
              "topology config: inter-node bps exceeds intra-node bps for group size " +
              std::to_string(size));
        }
      }
    }
  }
  return topo;
}

ClusterTopology ClusterTopology::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open topology config: " + path);
  }
  nlohmann::json config;
  in >> config;
  return from_json(config);
}

nlohmann::json ClusterTopology::default_profile(int num_gpus, int vexperts_per_gpu) {
  if (num_gpus < 1) {
    throw std::invalid_argument("default_profile: num_gpus must be >= 1");
  }
  const int gpus_per_node = (num_gpus % 8 == 0) ? 8 : num_gpus;
  const double intra_bw = 300e9;  // NVLink-class
  const double inter_bw = 25e9;   // one 200 Gb/s NIC per GPU

  // Ring AllReduce moves 2(n-1)/n bytes per byte reduced, so effective
  // throughput is link_bw * n / (2(n-1)).
  auto ring_bps = [](double link_bw, int n) { return link_bw * n / (2.0 * (n - 1)); };

  nlohmann::json bps;
  const int max_intra = std::min(gpus_per_node, num_gpus);
  if (max_intra >= 2) {
    nlohmann::json intra;
    for (int n = 2; n <= max_intra; ++n) {
      intra[std::to_string(n)] = ring_bps(intra_bw, n);
    }
    bps["intra"] = intra;
  }
  if (num_gpus > gpus_per_node) {
    nlohmann::json inter;
    for (int n = 2; n <= num_gpus; ++n) {
      inter[std::to_string(n)] = ring_bps(inter_bw, n);
    }
    bps["inter"] = inter;
  }

  nlohmann::json config = {
      {"num_gpus", num_gpus},
      {"gpus_per_node", gpus_per_node},
      {"vexperts_per_gpu", vexperts_per_gpu},
      {"intra_node_bandwidth_bps", intra_bw},
      {"inter_node_bandwidth_bps", inter_bw},
      {"tps", 1e6},
      {"expert_param_bytes", 50e6},
      {"expert_state_bytes", 150e6},
      {"token_bytes", 4096.0},
  };
  if (!bps.empty()) {
    config["allreduce_bps"] = bps;
  }
  return config;
}

double ClusterTopology::bandwidth(GpuId a, GpuId b) const {
  if (a < 0 || a >= num_gpus_ || b < 0 || b >= num_gpus_) {
    throw std::out_of_range("bandwidth: GPU id out of range");
  }
  if (a == b) {
    return std::numeric_limits<double>::infinity();
  }
  return node_of(a) == node_of(b) ? intra_bw_ : inter_bw_;
}

bool ClusterTopology::spans_nodes(std::span<const GpuId> group) const {
  for (GpuId g : group) {
    if (node_of(g) != node_of(group.front())) {
      return true;
    }
  }
  return false;
}

double ClusterTopology::group_bps(std::span<const GpuId> group) const {
  if (group.size() < 2) {
    throw std::invalid_argument("group_bps: group must contain at least 2 GPUs");
  }
  for (GpuId g : group) {
    if (g < 0 || g >= num_gpus_) {
      throw std::out_of_range("group_bps: GPU id out of range");
    }
  }
  const auto& table = spans_nodes(group) ? inter_bps_ : intra_bps_;
  if (group.size() >= table.size()) {
    throw std::invalid_argument("group_bps: no table entry for group size " +
                                std::to_string(group.size()));
  }
  return table[group.size()];
}

nlohmann::json ClusterTopology::to_json() const {
  nlohmann::json config = {
      {"num_gpus", num_gpus_},
      {"gpus_per_node", gpus_per_node_},
      {"vexperts_per_gpu", vexperts_per_gpu_},
      {"intra_node_bandwidth_bps", intra_bw_},
      {"tps", tps_},
      {"expert_param_bytes", expert_param_bytes_},
      {"expert_state_bytes", expert_state_bytes_},
      {"token_bytes", token_bytes_},
  };
  if (inter_bw_ > 0) {
    config["inter_node_bandwidth_bps"] = inter_bw_;
  }
  nlohmann::json bps;
  if (intra_bps_.size() > 2) {
    nlohmann::json intra;
    for (size_t n = 2; n < intra_bps_.size(); ++n) {
      intra[std::to_string(n)] = intra_bps_[n];
    }
    bps["intra"] = intra;
  }
  if (inter_bps_.size() > 2) {
    nlohmann::json inter;
    for (size_t n = 2; n < inter_bps_.size(); ++n) {
      inter[std::to_string(n)] = inter_bps_[n];
    }
    bps["inter"] = inter;
  }
  if (!bps.empty()) {
    config["allreduce_bps"] = bps;
  }
  return config;
}

}  // namespace moesim
