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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moesim/baselines.hpp"
#include "moesim/oracle.hpp"
#include "moesim/router.hpp"
#include "moesim/report.hpp"
#include "moesim/sim_engine.hpp"
#include "moesim/workload.hpp"

namespace {

using namespace moesim;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path);
  }
  out << content;
  if (!out) {
    throw std::runtime_error("failed writing: " + path);
  }
}

double topk_share(const TokenDemand& d, int k) {
  std::vector<int64_t> loads(d.num_experts);
  for (ExpertId e = 0; e < d.num_experts; ++e) {
    loads[e] = expert_load(d, e);
  }
  std::sort(loads.rbegin(), loads.rend());
  int64_t top = 0;
  int64_t total = 0;
  for (int i = 0; i < d.num_experts; ++i) {
    if (i < k) {
      top += loads[i];
    }
    total += loads[i];
  }
  return total > 0 ? static_cast<double>(top) / static_cast<double>(total) : 0.0;
}

struct RunFlags {
  std::string trace_path;
  std::string topology_path;
  int slots = 0;  // 0 = default headroom of 2x experts-per-gpu
  std::string baseline = "flex";
  std::string policy;  // empty = dynamic for flex, static for baselines
  std::string metric = "max";
  double threshold = 1.1;
  int horizon = 50;
  double adjust_fraction = 0.5;
  int max_groups = 64;
  double group_latency = 0.005;
  double capacity_factor = 1.0;
  std::string capacity_factor_str;
  int replicate_top = 1;
  uint64_t seed = 42;
  std::string out_csv;
  std::string out_summary;
  std::string compare_path;
  std::string dump_routing;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--trace", f.trace_path, "trace file to replay")->required();
  cmd->add_option("--topology", f.topology_path,
                  "topology config JSON (default: bundled profile)");
  cmd->add_option("--slots", f.slots,
                  "vExpert slots per GPU for the bundled profile "
                  "(default: 2x experts per GPU)");
  cmd->add_option("--baseline", f.baseline,
                  "flex | static-ep | full-replicate | strict-rebalance")
      ->check(CLI::IsMember({"flex", "static-ep", "full-replicate",
                             "strict-rebalance"}));
  cmd->add_option("--policy", f.policy, "dynamic | static | interval:<k>");
  cmd->add_option("--metric", f.metric, "max | variance")
      ->check(CLI::IsMember({"max", "variance"}));
  cmd->add_option("--threshold", f.threshold, "balance-ratio trigger (> 1)");
  cmd->add_option("--horizon", f.horizon, "adjustment amortization steps");
  cmd->add_option("--adjust-fraction", f.adjust_fraction,
                  "fraction of a step usable for adjustment transfers");
  cmd->add_option("--max-groups", f.max_groups, "live collective-group cache size");
  cmd->add_option("--group-latency", f.group_latency,
                  "group creation latency in seconds");
  cmd->add_option("--capacity-factor", f.capacity_factor_str,
                  "static-ep capacity factor (number or 'inf')");
  cmd->add_option("--replicate-top", f.replicate_top,
                  "full-replicate: how many hot experts to shadow");
  cmd->add_option("--seed", f.seed, "run seed (echoed into the summary)");
  cmd->add_option("--out-csv", f.out_csv, "per-step CSV output path");
  cmd->add_option("--out-summary", f.out_summary, "summary JSON output path");
  cmd->add_option("--compare", f.compare_path,
                  "reference summary JSON; adds speedup_vs_reference");
  cmd->add_option("--dump-routing", f.dump_routing,
                  "debug: write the final step's routing plan as CSV");
}

struct ResolvedRun {
  std::vector<TokenDemand> trace;
  ClusterTopology topo;
  SimConfig sim;
  BaselineConfig baseline;
  nlohmann::json config;
};

ResolvedRun resolve_run(const RunFlags& f) {
  ResolvedRun r{.trace = load_trace(f.trace_path),
                .topo = ClusterTopology::from_json(ClusterTopology::default_profile(1, 1)),
                .sim = {},
                .baseline = {},
                .config = {}};
  const int num_experts = r.trace.front().num_experts;
  const int num_gpus = r.trace.front().num_gpus;
  if (!f.topology_path.empty()) {
    r.topo = ClusterTopology::from_file(f.topology_path);
  } else {
    int slots = f.slots;
    if (slots <= 0) {
      slots = 2 * ((num_experts + num_gpus - 1) / num_gpus);
    }
    r.topo = ClusterTopology::from_json(
        ClusterTopology::default_profile(num_gpus, slots));
  }

  r.sim.threshold = f.threshold;
  r.sim.metric = f.metric == "variance" ? BalanceMetric::Variance
                                        : BalanceMetric::MaxRatio;
  r.sim.amortization_horizon = f.horizon;
  r.sim.adjust_bandwidth_fraction = f.adjust_fraction;
  r.sim.max_live_groups = f.max_groups;
  r.sim.group_creation_latency_s = f.group_latency;
  r.sim.seed = f.seed;

  if (f.baseline == "flex") {
    r.baseline.kind = BaselineKind::FlexDynamic;
  } else if (f.baseline == "static-ep") {
    r.baseline.kind = BaselineKind::StaticEP;
  } else if (f.baseline == "full-replicate") {
    r.baseline.kind = BaselineKind::FullReplicate;
  } else {
    r.baseline.kind = BaselineKind::StrictRebalance;
  }

  std::string policy = f.policy;
  if (policy.empty()) {
    // Non-flex baselines never run the placement policy.
    policy = r.baseline.kind == BaselineKind::FlexDynamic ? "dynamic" : "static";
  } else if (r.baseline.kind != BaselineKind::FlexDynamic && policy != "static") {
    throw CLI::ValidationError("--baseline " + f.baseline +
                               " only supports --policy static");
  }
  if (policy == "dynamic") {
    r.sim.policy_mode = PolicyMode::Dynamic;
  } else if (policy == "static") {
    r.sim.policy_mode = PolicyMode::Static;
  } else if (policy.rfind("interval:", 0) == 0) {
    r.sim.policy_mode = PolicyMode::FixedInterval;
    try {
      r.sim.interval_steps = std::stoi(policy.substr(9));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--policy interval:<k> needs an integer k");
    }
    if (r.sim.interval_steps < 1) {
      throw CLI::ValidationError("--policy interval:<k> needs k >= 1");
    }
  } else {
    throw CLI::ValidationError("--policy must be dynamic, static or interval:<k>");
  }

  if (!f.capacity_factor_str.empty()) {
    if (r.baseline.kind != BaselineKind::StaticEP) {
      throw CLI::ValidationError("--capacity-factor requires --baseline static-ep");
    }
    if (f.capacity_factor_str == "inf") {
      r.baseline.capacity_factor = std::numeric_limits<double>::infinity();
    } else {
      r.baseline.capacity_factor = std::stod(f.capacity_factor_str);
      if (!(r.baseline.capacity_factor > 0)) {
        throw CLI::ValidationError("--capacity-factor must be positive");
      }
    }
  }
  r.baseline.replicate_top = f.replicate_top;

  r.config = {
      {"trace", f.trace_path},
      {"num_experts", num_experts},
      {"num_gpus", num_gpus},
      {"baseline", to_string(r.baseline.kind)},
      {"policy", policy},
      {"metric", f.metric},
      {"threshold", r.sim.threshold},
      {"interval_steps", r.sim.interval_steps},
      {"amortization_horizon", r.sim.amortization_horizon},
      {"adjust_bandwidth_fraction", r.sim.adjust_bandwidth_fraction},
      {"max_live_groups", r.sim.max_live_groups},
      {"group_creation_latency_s", r.sim.group_creation_latency_s},
      {"capacity_factor", r.baseline.capacity_factor},
      {"replicate_top", r.baseline.replicate_top},
      {"seed", f.seed},
      {"topology", r.topo.to_json()},
  };
  return r;
}

int cmd_gen(const TraceGeneratorConfig& cfg, const std::string& out_path) {
  std::vector<TokenDemand> trace = generate_trace(cfg);
  save_trace(trace, out_path);
  const int k = std::min(10, cfg.num_experts);
  std::printf("wrote %s: steps=%d experts=%d gpus=%d tokens=%lld top%d_share=%.3f\n",
              out_path.c_str(), cfg.num_steps, cfg.num_experts, cfg.num_gpus,
              static_cast<long long>(cfg.tokens_per_step), k,
              topk_share(trace.front(), k));
  return 0;
}

int cmd_run(const RunFlags& flags, bool dump_placement,
            const std::string& dump_path) {
  ResolvedRun r = resolve_run(flags);
  if (dump_placement && r.baseline.kind != BaselineKind::FlexDynamic) {
    throw CLI::ValidationError("dump-placement only supports --baseline flex");
  }
  std::vector<StepReport> reports;
  if (r.baseline.kind == BaselineKind::FlexDynamic) {
    SimEngine engine(r.topo, r.sim);
    reports = engine.run(r.trace);
    if (!flags.dump_routing.empty()) {
      RoutingPlan final_plan = route(r.trace.back(), engine.effective_placement());
      write_file(flags.dump_routing,
                 plan_to_csv(final_plan, r.trace.back().step));
    }
    if (dump_placement) {
      std::string text = engine.effective_placement().serialize();
      if (dump_path.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        write_file(dump_path, text);
      }
      return 0;
    }
  } else {
    reports = run_baseline(r.trace, r.topo, r.baseline, r.sim);
  }

  nlohmann::json summary = summarize_run(reports, r.config);
  if (!flags.compare_path.empty()) {
    std::ifstream in(flags.compare_path);
    if (!in) {
      throw std::runtime_error("cannot open reference summary: " + flags.compare_path);
    }
    nlohmann::json reference;
    in >> reference;
    const double ref_makespan = reference.at("mean_makespan_s").get<double>();
    summary["reference"] = flags.compare_path;
    summary["speedup_vs_reference"] =
        ref_makespan / summary.at("mean_makespan_s").get<double>();
  }
  if (!flags.out_csv.empty()) {
    write_file(flags.out_csv, reports_to_csv(reports));
  }
  if (!flags.out_summary.empty()) {
    write_file(flags.out_summary, summary.dump(2) + "\n");
  }
  std::printf("%s\n", summary.dump(2).c_str());
  return 0;
}

int cmd_validate(int num_gpus, int num_experts, int slots, int instances,
                 uint64_t seed, int64_t tokens) {
  if (num_experts * num_gpus > kMaxOracleCells) {
    throw CLI::ValidationError("instance too large: num_experts * num_gpus must be <= " +
                               std::to_string(kMaxOracleCells));
  }
  if (num_experts > num_gpus * slots) {
    throw CLI::ValidationError("insufficient slots: need num_experts <= gpus * slots");
  }
  ClusterTopology topo =
      ClusterTopology::from_json(ClusterTopology::default_profile(num_gpus, slots));

  std::vector<double> ratios;
  ratios.reserve(instances);
  std::printf("instance,zipf,ratio\n");
  for (int i = 0; i < instances; ++i) {
    const uint64_t instance_seed = seed + 0x9e3779b97f4a7c15ULL * (i + 1);
    const double zipf = 0.5 + 1.0 * ((instance_seed >> 7) % 101) / 100.0;
    TraceGeneratorConfig gen{.num_experts = num_experts,
                             .num_gpus = num_gpus,
                             .tokens_per_step = tokens,
                             .zipf_exponent = zipf,
                             .drift_rate = 0.0,
                             .seed = instance_seed,
                             .num_steps = 1};
    TokenDemand demand = generate_trace(gen).front();

    // Converge the dynamic policy on the fixed demand.
    std::vector<TokenDemand> constant_trace;
    for (int s = 0; s < 40; ++s) {
      TokenDemand d = demand;
      d.step = s;
      constant_trace.push_back(std::move(d));
    }
    SimConfig sim;
    sim.threshold = 1.05;
    sim.adjust_bandwidth_fraction = 1.0;
    SimEngine engine(topo, sim);
    engine.run(constant_trace);

    OracleInstance inst{demand, topo};
    double ratio = compare_policy(inst, engine.target_placement());
    ratios.push_back(ratio);
    std::printf("%d,%.2f,%.6f\n", i, zipf, ratio);
  }
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    size_t idx = static_cast<size_t>(q * (sorted.size() - 1));
    return sorted[idx];
  };
  std::printf("instances=%d p50=%.6f p90=%.6f max=%.6f within_1.10=%zu\n",
              instances, quantile(0.5), quantile(0.9), sorted.back(),
              static_cast<size_t>(std::count_if(
                  sorted.begin(), sorted.end(), [](double x) { return x <= 1.10; })));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moesim: dynamic expert-placement simulator for MoE training"};
  app.require_subcommand(1);

  // gen
  TraceGeneratorConfig gen_cfg;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic trace");
  gen->add_option("--experts", gen_cfg.num_experts, "number of experts")->required();
  gen->add_option("--gpus", gen_cfg.num_gpus, "number of GPUs")->required();
  gen->add_option("--tokens", gen_cfg.tokens_per_step, "tokens per step")->required();
  gen->add_option("--zipf", gen_cfg.zipf_exponent, "Zipf exponent (0 = uniform)");
  gen->add_option("--drift", gen_cfg.drift_rate, "per-step popularity drift bound");
  gen->add_option("--steps", gen_cfg.num_steps, "number of steps");
  gen->add_option("--seed", gen_cfg.seed, "generator seed");
  gen->add_option("--out", gen_out, "output trace path")->required();

  // run
  RunFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "simulate a trace");
  add_run_flags(run, run_flags);

  // dump-placement
  RunFlags dump_flags;
  std::string dump_out;
  CLI::App* dump = app.add_subcommand(
      "dump-placement", "run the dynamic engine and dump the final placement");
  add_run_flags(dump, dump_flags);
  dump->add_option("--out", dump_out, "placement output path (default stdout)");

  // validate
  int v_gpus = 2;
  int v_experts = 2;
  int v_slots = 2;
  int v_instances = 100;
  uint64_t v_seed = 42;
  int64_t v_tokens = 960;
  CLI::App* validate =
      app.add_subcommand("validate", "compare the policy against the exact oracle");
  validate->add_option("--gpus", v_gpus, "GPUs per instance");
  validate->add_option("--experts", v_experts, "experts per instance");
  validate->add_option("--slots", v_slots, "vExpert slots per GPU");
  validate->add_option("--instances", v_instances, "number of random instances");
  validate->add_option("--seed", v_seed, "base seed");
  validate->add_option("--tokens", v_tokens, "tokens per instance");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      return cmd_gen(gen_cfg, gen_out);
    }
    if (run->parsed()) {
      return cmd_run(run_flags, false, "");
    }
    if (dump->parsed()) {
      return cmd_run(dump_flags, true, dump_out);
    }
    if (validate->parsed()) {
      return cmd_validate(v_gpus, v_experts, v_slots, v_instances, v_seed, v_tokens);
    }
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
