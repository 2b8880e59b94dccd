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

#include "moesim/report.hpp"

#include <algorithm>
#include <cstdio>

namespace moesim {

namespace {

std::string fmt(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", value);
  return buf;
}

}  // namespace

std::string reports_to_csv(std::span<const StepReport> reports) {
  std::string out =
      "step,makespan_s,step_time_s,compute_max_s,a2a_max_s,sync_max_s,adjust_s,"
      "balance_ratio,metric_value,plans_applied,slot_utilization,tokens_total,"
      "tokens_dropped,tokens_reassigned,replicated_experts,max_replicas,"
      "cache_misses,adjust_bytes\n";
  for (const StepReport& r : reports) {
    double compute_max = 0;
    double a2a_max = 0;
    double sync_max = 0;
    for (const GpuCost& c : r.breakdown.per_gpu) {
      compute_max = std::max(compute_max, c.compute_s);
      a2a_max = std::max(a2a_max, c.a2a_s);
      sync_max = std::max(sync_max, c.sync_s);
    }
    int replicated = 0;
    int max_replicas = 0;
    for (int n : r.replica_counts) {
      replicated += n > 1 ? 1 : 0;
      max_replicas = std::max(max_replicas, n);
    }
    out += std::to_string(r.step);
    out += ',';
    out += fmt(r.makespan_s);
    out += ',';
    out += fmt(r.step_time_s);
    out += ',';
    out += fmt(compute_max);
    out += ',';
    out += fmt(a2a_max);
    out += ',';
    out += fmt(sync_max);
    out += ',';
    out += fmt(r.breakdown.adjust_s);
    out += ',';
    out += fmt(r.balance_ratio);
    out += ',';
    out += fmt(r.metric_value);
    out += ',';
    out += std::to_string(r.plan_applied.size());
    out += ',';
    out += fmt(r.slot_utilization);
    out += ',';
    out += std::to_string(r.tokens_total);
    out += ',';
    out += std::to_string(r.tokens_dropped);
    out += ',';
    out += std::to_string(r.tokens_reassigned);
    out += ',';
    out += std::to_string(replicated);
    out += ',';
    out += std::to_string(max_replicas);
    out += ',';
    out += std::to_string(r.group_cache_misses);
    out += ',';
    out += std::to_string(r.adjust_bytes);
    out += '\n';
  }
  return out;
}

nlohmann::json summarize_run(std::span<const StepReport> reports,
                             const nlohmann::json& resolved_config) {
  double mean_makespan = 0;
  double max_makespan = 0;
  double mean_step_time = 0;
  double mean_ratio = 0;
  int64_t dropped = 0;
  int64_t reassigned = 0;
  int64_t adjust_bytes = 0;
  int64_t plans = 0;
  int64_t tokens = 0;
  for (const StepReport& r : reports) {
    mean_makespan += r.makespan_s;
    max_makespan = std::max(max_makespan, r.makespan_s);
    mean_step_time += r.step_time_s;
    mean_ratio += r.balance_ratio;
    dropped += r.tokens_dropped;
    reassigned += r.tokens_reassigned;
    adjust_bytes += r.adjust_bytes;
    plans += static_cast<int64_t>(r.plan_applied.size());
    tokens += r.tokens_total;
  }
  const double n = reports.empty() ? 1.0 : static_cast<double>(reports.size());
  nlohmann::json summary = {
      {"schema", "1"},
      {"steps", reports.size()},
      {"mean_makespan_s", mean_makespan / n},
      {"max_makespan_s", max_makespan},
      {"mean_step_time_s", mean_step_time / n},
      {"mean_balance_ratio", mean_ratio / n},
      {"total_tokens", tokens},
      {"total_tokens_dropped", dropped},
      {"total_tokens_reassigned", reassigned},
      {"token_efficiency",
       tokens > 0 ? 1.0 - static_cast<double>(dropped) / static_cast<double>(tokens)
                  : 1.0},
      {"reassigned_fraction",
       tokens > 0 ? static_cast<double>(reassigned) / static_cast<double>(tokens)
                  : 0.0},
      {"total_adjust_bytes", adjust_bytes},
      {"total_plans_applied", plans},
      {"config", resolved_config},
  };
  return summary;
}

}  // namespace moesim
