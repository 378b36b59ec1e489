// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "craftkit/bench/scenarios.hpp"

#include <atomic>
#include <map>
#include <mutex>

#include "craftkit/aft_zone.hpp"
#include "craftkit/sim_cluster.hpp"

namespace craftkit::bench {

namespace {

const char* async_mode_name(const EnvConfig& env) {
  switch (env.async_mode()) {
    case AsyncMode::kSync: return "sync";
    case AsyncMode::kAsyncCopy: return "async-copy";
    case AsyncMode::kAsyncZeroCopy: return "async-zero-copy";
  }
  return "?";
}

OverheadReport base_report(const SimBenchConfig& cfg, const char* scenario) {
  OverheadReport r;
  r.scenario = scenario;
  r.units = "events";
  r.seed = cfg.cluster.seed;
  r.nodes = cfg.cluster.num_nodes;
  r.ranks_per_node = cfg.cluster.ranks_per_node;
  r.reserve_nodes = cfg.cluster.reserve_nodes;
  r.policy = to_string(cfg.recovery.policy);
  r.spawn = to_string(cfg.recovery.spawn);
  r.tier = cfg.node_store_base.empty() ? "global" : "node-local";
  r.async_mode = async_mode_name(cfg.env);
  return r;
}

void fold_outcome(OverheadReport& report, const ZoneOutcome& out) {
  report.completions = out.completions;
  report.recoveries = static_cast<int>(out.recoveries.size());
  for (const auto& rec : out.recoveries) {
    report.oh_rec += rec.duration;
    report.phase_revoke_shrink += rec.phases.revoke_shrink;
    report.phase_spawn_info += rec.phases.spawn_info;
    report.phase_spawn_merge += rec.phases.spawn_merge;
    report.phase_rank_redistribution += rec.phases.rank_redistribution;
    report.phase_resource_management += rec.phases.resource_management;
  }
}

}  // namespace

LanczosZoneRun run_lanczos_zone(Transport& t, const RecoveryConfig& recovery,
                                const LanczosParams& params,
                                const std::function<void(long)>& at_iteration) {
  if (recovery.policy == RecoveryPolicy::kShrinking) {
    throw ConfigError(
        "the Lanczos benchmark partitions data by rank and requires non-shrinking recovery");
  }
  LanczosZoneRun run;
  run.outcome = run_aft_zone(t, recovery, [&](ProcessGroup& g) {
    run.result = run_lanczos(g, params, at_iteration);
  });
  return run;
}

OverheadReport run_lanczos_sim(const SimBenchConfig& cfg) {
  SimCluster sim(cfg.cluster, cfg.node_store_base);
  sim.set_node_scheme(cfg.scheme);

  std::mutex mu;
  std::vector<std::unique_ptr<std::atomic<bool>>> fired;
  for (std::size_t i = 0; i < cfg.failures.size(); ++i) {
    fired.push_back(std::make_unique<std::atomic<bool>>(false));
  }
  std::atomic<long> executed_total{0};
  std::map<int, LanczosZoneRun> runs;  // by endpoint

  LanczosParams params = cfg.lanczos;
  EnvConfig env = cfg.env;
  env.cp_path = cfg.cp_path;
  params.cp_options.env = env;

  sim.run([&](SimTransport& t) {
    auto inject = [&](long k) {
      executed_total.fetch_add(1);
      for (std::size_t i = 0; i < cfg.failures.size(); ++i) {
        const FailurePoint& f = cfg.failures[i];
        if (k == f.at && t.node_of(t.self()) == f.node && !fired[i]->exchange(true)) {
          t.inject_failure({true, f.node});
        }
      }
    };
    LanczosZoneRun run = run_lanczos_zone(t, cfg.recovery, params, inject);
    std::lock_guard<std::mutex> lk(mu);
    runs[t.self()] = std::move(run);
  });

  OverheadReport report = base_report(cfg, "lanczos");
  report.iters = params.iters;
  report.cp_freq = params.cp_freq;
  report.total_units = sim.delivered_events();

  if (!runs.empty()) {
    // Report the values observed at rank 0 of the final group.
    const GroupView& final_view = runs.begin()->second.outcome.final_view;
    const auto it = runs.find(final_view.members.empty() ? runs.begin()->first
                                                         : final_view.members.front());
    const LanczosZoneRun& lead = it != runs.end() ? it->second : runs.begin()->second;
    fold_outcome(report, lead.outcome);
    report.min_eigenvalue = lead.result.min_eigenvalue;
    report.oh_cp = lead.result.oh_cp_units;
    report.oh_res = lead.result.oh_res_units;
    report.checkpoints_written = lead.result.checkpoints_written;
    if (report.checkpoints_written > 0) {
      report.avg_cp_units = static_cast<double>(report.oh_cp) /
                            static_cast<double>(report.checkpoints_written);
    }
    const int group_size = static_cast<int>(final_view.members.size());
    if (group_size > 0) {
      // Steps executed beyond one failure-free pass, averaged over ranks.
      report.redo_iterations =
          executed_total.load() / group_size - lead.result.iterations_done;
      if (report.redo_iterations < 0) report.redo_iterations = 0;
    }
  }
  return report;
}

OverheadReport run_barrier_sim(const SimBenchConfig& cfg) {
  SimCluster sim(cfg.cluster, cfg.node_store_base);
  sim.set_node_scheme(cfg.scheme);

  std::mutex mu;
  std::vector<std::unique_ptr<std::atomic<bool>>> fired;
  for (std::size_t i = 0; i < cfg.failures.size(); ++i) {
    fired.push_back(std::make_unique<std::atomic<bool>>(false));
  }
  std::map<int, ZoneOutcome> outcomes;

  sim.run([&](SimTransport& t) {
    const ZoneOutcome out = run_aft_zone(t, cfg.recovery, [&](ProcessGroup& g) {
      for (long i = 1; i <= cfg.barrier_iters; ++i) {
        for (std::size_t fi = 0; fi < cfg.failures.size(); ++fi) {
          const FailurePoint& f = cfg.failures[fi];
          if (i == f.at && t.node_of(t.self()) == f.node && !fired[fi]->exchange(true)) {
            t.inject_failure({true, f.node});
          }
        }
        g.barrier();
      }
    });
    std::lock_guard<std::mutex> lk(mu);
    outcomes[t.self()] = out;
  });

  OverheadReport report = base_report(cfg, "barrier");
  report.iters = cfg.barrier_iters;
  report.total_units = sim.delivered_events();
  if (!outcomes.empty()) {
    const GroupView& final_view = outcomes.begin()->second.final_view;
    const auto it = outcomes.find(final_view.members.empty() ? outcomes.begin()->first
                                                             : final_view.members.front());
    fold_outcome(report, it != outcomes.end() ? it->second : outcomes.begin()->second);
  }
  return report;
}

}  // namespace craftkit::bench
