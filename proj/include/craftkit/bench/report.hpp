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

#include <cstdint>
#include <string>

namespace craftkit::bench {

// One benchmark run, flattened to a fixed column set so CSV output is
// byte-stable for a given deterministic run. Times are logical event counts
// in simulation and microseconds in multi-process mode; `units` says which.
struct OverheadReport {
  std::string scenario;  // "lanczos" | "barrier" | "nested"
  std::string units = "events";
  std::uint64_t seed = 0;
  int nodes = 0;
  int ranks_per_node = 0;
  int reserve_nodes = 0;
  long iters = 0;
  long cp_freq = 0;
  std::string policy;      // recovery policy name
  std::string spawn;       // spawn policy name
  std::string tier;        // "global" | "node-local"
  std::string async_mode;  // "sync" | "async-copy" | "async-zero-copy"
  int completions = 0;
  int recoveries = 0;
  std::uint64_t total_units = 0;
  std::uint64_t oh_cp = 0;
  std::uint64_t oh_res = 0;
  std::uint64_t oh_rec = 0;
  long redo_iterations = 0;
  long checkpoints_written = 0;
  double min_eigenvalue = 0.0;
  double avg_cp_units = 0.0;
  // Communication-recovery breakdown, summed over recoveries.
  std::uint64_t phase_revoke_shrink = 0;
  std::uint64_t phase_spawn_info = 0;
  std::uint64_t phase_spawn_merge = 0;
  std::uint64_t phase_rank_redistribution = 0;
  std::uint64_t phase_resource_management = 0;

  bool operator==(const OverheadReport&) const = default;
};

// Two-line CSV: fixed header plus one row, deterministic field order and
// formatting (doubles at 17 significant digits).
std::string to_csv(const OverheadReport& report);
std::string to_json(const OverheadReport& report);
OverheadReport report_from_json(const std::string& json_text);

void write_report_file(const OverheadReport& report, const std::string& path,
                       const std::string& format);  // "csv" | "json"

}  // namespace craftkit::bench
