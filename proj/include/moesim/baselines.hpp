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
#include <vector>

#include "moesim/sim_engine.hpp"

namespace moesim {

/// Reference systems, all modeled inside the same cost framework:
///  - StaticEP: one replica per expert; tokens beyond capacity_factor times
///    the ideal per-expert share are dropped. The only mode allowed to drop.
///  - FullReplicate: the replicate_top hottest experts live on every GPU each
///    step, paying full gradient synchronization.
///  - StrictRebalance: expert loads are rewritten each step so every GPU
///    receives exactly the mean load; the rewritten (reassigned) tokens are
///    reported.
///  - FlexDynamic: the dynamic placement engine.
enum class BaselineKind { StaticEP, FullReplicate, StrictRebalance, FlexDynamic };

std::string to_string(BaselineKind kind);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::FlexDynamic;
  double capacity_factor = 1.0;  // StaticEP; +infinity disables drops
  int replicate_top = 1;         // FullReplicate
};

std::vector<StepReport> run_baseline(std::span<const TokenDemand> trace,
                                     const ClusterTopology& topo,
                                     const BaselineConfig& baseline,
                                     const SimConfig& sim_cfg);

}  // namespace moesim
