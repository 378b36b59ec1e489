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

#include <atomic>
#include <deque>
#include <map>
#include <set>
#include <thread>

#include "craftkit/transport.hpp"

namespace craftkit {

// Worker-side transport for real OS processes under craftkit-launch: one
// socket to the hub, length-framed messages, failure notices pushed by the
// hub's detector. A background thread keeps heartbeats flowing while the
// application computes; everything else runs on the application thread.
class MpTransport final : public Transport {
 public:
  // True when this process was started by craftkit-launch.
  static bool under_launcher();

  MpTransport();  // connects and handshakes using the launcher environment
  ~MpTransport() override;

  int self() const override { return self_; }
  int node_of(int endpoint) const override;
  const ClusterSpec& cluster() const override { return spec_; }

  void send(int to, std::uint32_t tag, std::span<const std::uint8_t> bytes) override;
  Message recv(int from, std::uint32_t tag, GroupKey abort_key) override;
  std::uint64_t barrier(std::span<const int> members, std::uint64_t key,
                        std::uint64_t contribution, GroupKey abort_key) override;
  std::vector<int> known_failed() override;
  void revoke(GroupKey key) override;
  bool is_revoked(GroupKey key) override;
  SpawnResult spawn(const SpawnRequest& req) override;
  int reserve_nodes_remaining() override;
  bool is_spawned() const override { return spawned_; }
  [[noreturn]] void exit_process() override;
  void set_reapable(bool) override {}  // the hub reaps idle spawns at job end
  std::optional<NodeStoreEnv> node_store_env() const override;
  std::uint64_t now() override;

  // Announces a clean finish to the hub. Called once before destruction.
  void goodbye();

 private:
  struct BarrierReply {
    enum class Kind { kOk, kFail, kMismatch, kRevoked } kind = Kind::kOk;
    std::uint64_t result = 0;
    std::vector<int> failed;
  };

  // Processes queued socket frames; waits up to timeout_ms for the first.
  void pump(int timeout_ms);
  void handle(const std::vector<std::uint8_t>& payload);

  int fd_ = -1;
  int self_ = -1;
  int node_ = -1;
  bool spawned_ = false;
  ClusterSpec spec_;
  std::map<int, int> known_nodes_;  // endpoint -> node for spawned endpoints

  std::deque<Message> inbox_;
  std::set<int> failed_;
  std::set<GroupKey> revoked_;
  std::map<std::uint64_t, BarrierReply> barrier_replies_;
  std::map<std::uint32_t, std::pair<bool, SpawnResult>> spawn_replies_;
  std::map<std::uint32_t, int> reserve_replies_;
  std::uint32_t next_req_ = 1;
  bool said_goodbye_ = false;

  std::thread heartbeat_;
  std::atomic<bool> stop_{false};
  std::chrono::steady_clock::time_point start_;
};

}  // namespace craftkit
