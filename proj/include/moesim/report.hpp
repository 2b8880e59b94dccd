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

#include <span>
#include <string>

#include <json.hpp>

#include "moesim/sim_engine.hpp"

namespace moesim {

/// Stable per-step CSV. Column order:
///   step,makespan_s,step_time_s,compute_max_s,a2a_max_s,sync_max_s,adjust_s,
///   balance_ratio,metric_value,plans_applied,slot_utilization,tokens_total,
///   tokens_dropped,tokens_reassigned,replicated_experts,max_replicas,
///   cache_misses,adjust_bytes
std::string reports_to_csv(std::span<const StepReport> reports);

/// Aggregate summary ("schema": "1"): mean/max makespan, mean step time,
/// mean balance ratio, totals, plus the resolved run configuration.
nlohmann::json summarize_run(std::span<const StepReport> reports,
                             const nlohmann::json& resolved_config);

}  // namespace moesim
