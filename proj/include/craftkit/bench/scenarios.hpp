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

#pragma once

#include <string>
#include <vector>

#include "craftkit/aft_zone.hpp"
#include "craftkit/bench/lanczos.hpp"
#include "craftkit/bench/report.hpp"
#include "craftkit/env.hpp"
#include "craftkit/process_group.hpp"
#include "craftkit/transport.hpp"

namespace craftkit::bench {

// Deterministic failure injection point: the whole node dies when it reaches
// iteration (or barrier index) `at`.
struct FailurePoint {
  int node = 0;
  long at = 0;
};

struct SimBenchConfig {
  ClusterSpec cluster;
  LanczosParams lanczos;
  long barrier_iters = 50;
  std::vector<FailurePoint> failures;
  RecoveryConfig recovery;
  std::string cp_path = ".";
  std::string node_store_base;  // "" keeps the node tier off
  NodeScheme scheme = NodeScheme::kLocal;
  EnvConfig env;  // async flags etc.; cp_path above wins
};

// Runs the Lanczos solver inside a fault-tolerance zone on the simulated
// cluster and reports logical-time overheads. Only non-shrinking recovery is
// supported here: the solver's data layout is tied to the group size.
OverheadReport run_lanczos_sim(const SimBenchConfig& cfg);

// Barrier loop inside a zone: isolates communication-recovery cost from
// checkpointing. Either recovery policy applies.
OverheadReport run_barrier_sim(const SimBenchConfig& cfg);

// Body shared with the multi-process bench CLI: runs the Lanczos zone on any
// transport and returns this process's outcome and final-body result.
struct LanczosZoneRun {
  ZoneOutcome outcome;
  LanczosResult result;
};
LanczosZoneRun run_lanczos_zone(Transport& t, const RecoveryConfig& recovery,
                                const LanczosParams& params,
                                const std::function<void(long)>& at_iteration = nullptr);

}  // namespace craftkit::bench
