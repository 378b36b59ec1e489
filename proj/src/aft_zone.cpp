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

#include "craftkit/aft_zone.hpp"

#include <numeric>

namespace craftkit {

ZoneOutcome run_aft_zone(Transport& transport, const RecoveryConfig& cfg, const ZoneBody& body,
                         std::uint64_t zone_id) {
  GroupView view;
  if (transport.is_spawned()) {
    view = await_adoption(transport);
  } else {
    view.zone_id = zone_id;
    view.epoch = 0;
    view.members.resize(static_cast<std::size_t>(transport.cluster().initial_ranks()));
    std::iota(view.members.begin(), view.members.end(), 0);
    view.my_rank = transport.self();
  }

  ZoneOutcome out;
  for (;;) {
    ProcessGroup group(transport, view);
    try {
      body(group);
      out.completions += 1;
      group.agree(1);  // collective confirmation that everyone left the zone
      out.final_view = view;
      return out;
    } catch (const ProcFailedError&) {
    } catch (const RevokedError&) {
    }

    const std::uint64_t started = transport.now();
    group.revoke();
    RecoveryResult rr;
    for (int attempt = 0;; ++attempt) {
      try {
        rr = recover_group(transport, view, cfg, attempt);
        break;
      } catch (const ProcFailedError&) {
      } catch (const RevokedError&) {
      } catch (const GroupMismatchError&) {
      }
    }

    RecoveryRecord rec;
    rec.epoch = rr.view.epoch;
    rec.failed_old_ranks = rr.failed_old_ranks;
    rec.failed_endpoints = rr.failed_endpoints;
    rec.replacement_endpoints = rr.replacement_endpoints;
    rec.downgraded_to_shrink = rr.downgraded_to_shrink;
    rec.phases = rr.phases;
    rec.policy = (cfg.policy == RecoveryPolicy::kShrinking || rr.downgraded_to_shrink)
                     ? RecoveryPolicy::kShrinking
                     : RecoveryPolicy::kNonShrinking;
    rec.duration = transport.now() - started;
    out.recoveries.push_back(rec);

    view = rr.view;
  }
}

}  // namespace craftkit
