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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "craftkit/comm.hpp"
#include "craftkit/errors.hpp"

namespace craftkit {

// Shape of the process universe a program runs on.
struct ClusterSpec {
  int num_nodes = 1;
  int ranks_per_node = 1;
  int reserve_nodes = 0;
  std::uint64_t seed = 0;  // scheduler seed, simulated mode only

  int total_nodes() const { return num_nodes + reserve_nodes; }
  int initial_ranks() const { return num_nodes * ranks_per_node; }
};

struct Message {
  int from = -1;
  std::uint32_t tag = 0;
  std::vector<std::uint8_t> bytes;
};

// Scopes blocking operations to a revocable group incarnation.
using GroupKey = std::uint64_t;
inline constexpr GroupKey kNoGroup = 0;

inline constexpr int kAnySource = -1;

enum class Placement { kOnNode, kOnReserve };

struct SpawnRequest {
  Placement placement = Placement::kOnReserve;
  int node = -1;  // used with kOnNode
  int count = 1;
};

struct SpawnResult {
  std::vector<int> endpoints;
  int node = -1;
};

// Raised only inside aft recovery when participants of one agreement step
// disagree on its membership; the step is retried with fresher knowledge.
class GroupMismatchError : public Error {
 public:
  GroupMismatchError() : Error("group membership mismatch during agreement") {}
};

// Messaging substrate consumed by the fault-tolerance layer. Implemented by
// the in-process simulated cluster and the multi-OS-process socket transport.
// Operations throw ProcFailedError when a peer's failure prevents completion
// and RevokedError when the supplied group key has been revoked.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual int self() const = 0;
  virtual int node_of(int endpoint) const = 0;
  virtual const ClusterSpec& cluster() const = 0;

  virtual void send(int to, std::uint32_t tag, std::span<const std::uint8_t> bytes) = 0;
  virtual Message recv(int from, std::uint32_t tag, GroupKey abort_key) = 0;

  // Collective over `members` (sorted endpoint ids), matched by `key`. All
  // participants must present the same member list; the call returns the
  // bitwise AND of every participant's `contribution` and releases everyone
  // atomically. Any member failure fails the barrier at every participant.
  virtual std::uint64_t barrier(std::span<const int> members, std::uint64_t key,
                                std::uint64_t contribution, GroupKey abort_key) = 0;

  // Monotone snapshot of endpoints known to have failed.
  virtual std::vector<int> known_failed() = 0;

  // Marks a group incarnation unusable; asymmetric and idempotent. Pending
  // operations keyed to it abort with RevokedError everywhere.
  virtual void revoke(GroupKey key) = 0;
  virtual bool is_revoked(GroupKey key) = 0;

  virtual SpawnResult spawn(const SpawnRequest& req) = 0;
  virtual int reserve_nodes_remaining() = 0;

  // True for a process created by spawn() rather than at cluster start.
  virtual bool is_spawned() const = 0;

  // Terminates this process as if it failed; never returns.
  [[noreturn]] virtual void exit_process() = 0;

  // While set, the runtime may reap this process if it is still waiting for
  // adoption when everything else has finished.
  virtual void set_reapable(bool value) = 0;

  // Node-local storage description for this process, when the runtime
  // provides one.
  virtual std::optional<NodeStoreEnv> node_store_env() const { return std::nullopt; }

  // Logical instant: delivered-event count in simulation, wall-clock
  // microseconds in multi-process mode.
  virtual std::uint64_t now() = 0;
};

}  // namespace craftkit
