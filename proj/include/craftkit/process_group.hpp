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
#include <span>
#include <vector>

#include "craftkit/comm.hpp"
#include "craftkit/env.hpp"
#include "craftkit/transport.hpp"

namespace craftkit {

// One incarnation of a process group: an ordered member list with dense
// ranks, an epoch that advances on every recovery, and a revocation key.
struct GroupView {
  std::uint64_t zone_id = 1;
  int epoch = 0;
  std::vector<int> members;  // endpoint ids, indexed by rank
  int my_rank = 0;

  GroupKey key() const;
  int endpoint_of(int rank) const { return members.at(static_cast<std::size_t>(rank)); }
  int rank_of(int endpoint) const;
};

// Fault-detecting communicator handed to application bodies. Collectives and
// point-to-point receives throw ProcFailedError / RevokedError; the zone loop
// turns those into recovery.
class ProcessGroup final : public CpComm {
 public:
  ProcessGroup(Transport& transport, GroupView view);

  int rank() const override { return view_.my_rank; }
  int size() const override { return static_cast<int>(view_.members.size()); }
  void barrier() override;
  std::uint64_t allreduce_min(std::uint64_t value) override;
  std::uint64_t allreduce_and(std::uint64_t value) override { return agree(value); }
  std::optional<NodeStoreEnv> node_store() const override {
    return transport_->node_store_env();
  }

  int epoch() const { return view_.epoch; }
  const GroupView& view() const { return view_; }
  Transport& transport() { return *transport_; }

  // Point-to-point by group rank. Tags are scoped to the epoch, so traffic
  // from before a recovery can never satisfy a receive issued after it.
  void send(int to_rank, std::uint32_t tag, std::span<const std::uint8_t> bytes);
  Message recv(int from_rank, std::uint32_t tag);

  // Collective bitwise AND over every member's flags; any member failure
  // surfaces as ProcFailedError at all survivors.
  std::uint64_t agree(std::uint64_t flags);

  // Invalidates this incarnation everywhere. One caller suffices; idempotent.
  void revoke();
  bool revoked() const;

 private:
  std::uint32_t scoped_tag(std::uint32_t tag) const;
  std::uint64_t next_collective_key(std::uint32_t purpose);

  Transport* transport_;
  GroupView view_;
  std::uint64_t collective_seq_ = 0;
};

struct RecoveryConfig {
  RecoveryPolicy policy = RecoveryPolicy::kNonShrinking;
  SpawnPolicy spawn = SpawnPolicy::kReuse;
};

// Time spent in each stage of one communication recovery, in the transport's
// logical units. Spawn-related stages stay zero under a shrinking recovery.
struct RecoveryPhases {
  std::uint64_t revoke_shrink = 0;
  std::uint64_t spawn_info = 0;
  std::uint64_t spawn_merge = 0;
  std::uint64_t rank_redistribution = 0;
  std::uint64_t resource_management = 0;
};

struct RecoveryResult {
  GroupView view;
  std::vector<int> failed_endpoints;   // endpoints excluded by this recovery
  std::vector<int> failed_old_ranks;   // their ranks in the pre-failure group
  bool downgraded_to_shrink = false;   // non-shrinking fell back for want of spawn capacity
  std::vector<int> replacement_endpoints;
  RecoveryPhases phases;
};

// Consensus over the survivor set. All survivors return the identical
// ordered survivor list; `attempt` distinguishes repeated recoveries of the
// same epoch.
std::vector<int> shrink_consensus(Transport& t, const GroupView& view, int attempt);

// Full recovery: shrink, then per policy either adopt the shrunk group or
// rebuild it with spawned replacements that take over the failed ranks.
RecoveryResult recover_group(Transport& t, const GroupView& view, const RecoveryConfig& cfg,
                             int attempt);

// Blocks until a recovery adopts this spawned process and returns the view
// it must join with. Exits the process if its recovery round was abandoned.
GroupView await_adoption(Transport& t);

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d);

}  // namespace craftkit
