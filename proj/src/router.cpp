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

#include "moesim/router.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace moesim {

int64_t RoutingPlan::received(ExpertId e, GpuId dst) const {
  int64_t sum = 0;
  for (GpuId src = 0; src < num_gpus; ++src) {
    sum += flow(e, src, dst);
  }
  return sum;
}

std::vector<int64_t> received_matrix(const RoutingPlan& plan) {
  std::vector<int64_t> recv(static_cast<size_t>(plan.num_experts) * plan.num_gpus, 0);
  for (ExpertId e = 0; e < plan.num_experts; ++e) {
    for (GpuId src = 0; src < plan.num_gpus; ++src) {
      for (GpuId dst = 0; dst < plan.num_gpus; ++dst) {
        recv[static_cast<size_t>(e) * plan.num_gpus + dst] += plan.flow(e, src, dst);
      }
    }
  }
  return recv;
}

std::vector<int64_t> per_gpu_received(const RoutingPlan& plan) {
  std::vector<int64_t> totals(plan.num_gpus, 0);
  for (ExpertId e = 0; e < plan.num_experts; ++e) {
    for (GpuId src = 0; src < plan.num_gpus; ++src) {
      for (GpuId dst = 0; dst < plan.num_gpus; ++dst) {
        totals[dst] += plan.flow(e, src, dst);
      }
    }
  }
  return totals;
}

RoutingPlan route(const TokenDemand& d, const Placement& p) {
  if (d.num_gpus != p.num_gpus()) {
    throw std::invalid_argument("route: demand and placement disagree on GPU count");
  }
  if (d.num_experts > p.num_experts()) {
    throw std::invalid_argument("route: demand names more experts than the placement");
  }
  const int num_gpus = d.num_gpus;
  RoutingPlan plan(d.num_experts, num_gpus);

  std::vector<GpuId> hosts;
  std::vector<int64_t> quota(num_gpus), avail(num_gpus), recv(num_gpus);
  for (ExpertId e = 0; e < d.num_experts; ++e) {
    const int64_t load = expert_load(d, e);
    if (load == 0) {
      continue;
    }
    const int64_t n_total = p.replica_count(e);
    if (n_total == 0) {
      throw std::invalid_argument("route: expert " + std::to_string(e) +
                                  " has demand but no replica");
    }
    hosts = p.replica_gpus(e);

    // Capacity share per hosting GPU: floor(load * n_{e,g} / n_e).
    for (GpuId h : hosts) {
      quota[h] = load * p.replica_count_on(e, h) / n_total;
    }

    // Local phase: tokens stay where they were produced, up to the quota.
    std::fill(recv.begin(), recv.end(), int64_t{0});
    for (GpuId h : hosts) {
      int64_t kept = std::min(quota[h], d.at(e, h));
      if (kept > 0) {
        plan.flow(e, h, h) = kept;
        recv[h] = kept;
      }
      avail[h] = quota[h] - recv[h];
    }

    // Remote phase: each source's residual scatters across hosting GPUs in
    // proportion to their remaining availability, capped by it.
    for (GpuId src = 0; src < num_gpus; ++src) {
      int64_t residual = d.at(e, src) - plan.flow(e, src, src);
      if (residual == 0) {
        continue;
      }
      int64_t total_avail = 0;
      for (GpuId h : hosts) {
        total_avail += avail[h];
      }
      if (total_avail > 0) {
        const int64_t grant = std::min(residual, total_avail);
        int64_t handed = 0;
        // Integer proportional split, largest remainder, ties to lower id.
        std::vector<std::pair<int64_t, GpuId>> rems;
        for (GpuId h : hosts) {
          if (avail[h] == 0) {
            continue;
          }
          int64_t share = grant * avail[h] / total_avail;
          int64_t rem = grant * avail[h] % total_avail;
          plan.flow(e, src, h) += share;
          recv[h] += share;
          avail[h] -= share;
          handed += share;
          rems.emplace_back(rem, h);
        }
        std::stable_sort(rems.begin(), rems.end(), [](const auto& a, const auto& b) {
          return a.first > b.first;
        });
        for (const auto& [rem, h] : rems) {
          if (handed == grant) {
            break;
          }
          if (avail[h] > 0) {
            plan.flow(e, src, h) += 1;
            recv[h] += 1;
            avail[h] -= 1;
            ++handed;
          }
        }
        residual -= grant;
      }
      // Rounding leftover: at most one token per replica in total. Feed it
      // to the currently least-loaded hosting GPU, ties to the lower id.
      while (residual > 0) {
        GpuId target = hosts.front();
        for (GpuId h : hosts) {
          if (recv[h] < recv[target]) {
            target = h;
          }
        }
        plan.flow(e, src, target) += 1;
        recv[target] += 1;
        --residual;
      }
    }

    // Conservation is structural; a miss here is a router bug.
    for (GpuId src = 0; src < num_gpus; ++src) {
      int64_t routed = 0;
      for (GpuId dst = 0; dst < num_gpus; ++dst) {
        routed += plan.flow(e, src, dst);
      }
      if (routed != d.at(e, src)) {
        throw std::logic_error("route: conservation violated for expert " +
                               std::to_string(e));
      }
    }
  }
  return plan;
}

std::string plan_to_csv(const RoutingPlan& plan, int step) {
  std::ostringstream out;
  out << "step,expert,gpu,dst,tokens\n";
  for (ExpertId e = 0; e < plan.num_experts; ++e) {
    for (GpuId src = 0; src < plan.num_gpus; ++src) {
      for (GpuId dst = 0; dst < plan.num_gpus; ++dst) {
        if (plan.flow(e, src, dst) != 0) {
          out << step << ',' << e << ',' << src << ',' << dst << ','
              << plan.flow(e, src, dst) << '\n';
        }
      }
    }
  }
  return out.str();
}

}  // namespace moesim
