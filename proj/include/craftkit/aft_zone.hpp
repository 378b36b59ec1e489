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

#include <functional>

#include "craftkit/process_group.hpp"

namespace craftkit {

struct RecoveryRecord {
  int epoch = 0;                      // epoch adopted by this recovery
  std::vector<int> failed_old_ranks;
  std::vector<int> failed_endpoints;
  std::vector<int> replacement_endpoints;
  RecoveryPolicy policy = RecoveryPolicy::kNonShrinking;  // policy actually applied
  bool downgraded_to_shrink = false;
  std::uint64_t duration = 0;  // logical events in simulation, microseconds otherwise
  RecoveryPhases phases;
};

struct ZoneOutcome {
  int completions = 0;
  std::vector<RecoveryRecord> recoveries;
  GroupView final_view;
};

using ZoneBody = std::function<void(ProcessGroup&)>;

// Runs `body` inside a fault-tolerance zone: process failures raised by
// group operations trigger revoke + shrink + (per policy) rebuild, after
// which the body re-enters with the repaired group. Replacement processes
// join here and run the body fresh, restoring state from checkpoints inside
// it. Returns once the body completes without failure and the group
// collectively confirms the exit.
ZoneOutcome run_aft_zone(Transport& transport, const RecoveryConfig& cfg, const ZoneBody& body,
                         std::uint64_t zone_id = 1);

}  // namespace craftkit
