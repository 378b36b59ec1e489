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

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include "craftkit/transport.hpp"

namespace craftkit {

class SimTransport;

// Deterministic in-memory cluster: nodes x ranks with failure injection.
//
// Application ranks are real threads scheduled cooperatively; exactly one
// runs at a time and control changes hands only inside transport calls, so a
// given (spec, schedule, program) triple always produces the same event
// trace. Fail-stop: a killed rank executes nothing past its failure point
// and none of its undelivered messages survive.
class SimCluster {
 public:
  struct FailureTarget {
    bool whole_node = true;
    int id = 0;  // node id or endpoint id
  };

  struct TraceEvent {
    char op;  // 's' send, 'r' recv, 'b' barrier arrive, 'B' barrier release,
              // 'f' failure, 'v' revoke, 'p' spawn
    int a = 0;
    long b = 0;
    bool operator==(const TraceEvent&) const = default;
  };

  // `store_base` of "" disables node-local storage roots.
  explicit SimCluster(ClusterSpec spec, std::string store_base = "");
  ~SimCluster();

  SimCluster(const SimCluster&) = delete;
  SimCluster& operator=(const SimCluster&) = delete;

  // Runs `entry` on every initial rank and drives the scheduler until every
  // task has finished. Replacement ranks spawned during recovery run the
  // same entry. May be called once per cluster.
  void run(std::function<void(SimTransport&)> entry);

  // Deterministic failure injection at a delivered-event count; whole-node
  // targets fail every rank of the node atomically.
  void schedule_failure_at_event(FailureTarget target, std::uint64_t event_count);

  // Redundancy scheme advertised to checkpoints via NodeStoreEnv.
  void set_node_scheme(NodeScheme scheme) { node_scheme_ = scheme; }

  // Ground truth for tests.
  std::vector<int> ground_truth_failed() const;
  std::vector<int> failed_nodes() const;
  int reserve_remaining() const;
  std::uint64_t delivered_events() const;
  const std::vector<TraceEvent>& trace() const { return trace_; }
  std::string node_root(int node) const;

 private:
  friend class SimTransport;

  enum class TaskState { kReady, kRunning, kBlocked, kDone };
  enum class WaitKind { kNone, kRecv, kBarrier, kJob };

  struct Task {
    int endpoint = -1;
    std::thread thread;
    std::condition_variable cv;
    TaskState state = TaskState::kReady;
    bool orphanable = false;  // blocked spawnee that may be reaped at quiescence
    WaitKind wait = WaitKind::kNone;
    int wait_from = kAnySource;
    std::uint32_t wait_tag = 0;
    std::uint64_t wait_key = 0;
    GroupKey wait_abort = kNoGroup;
    std::unique_ptr<SimTransport> transport;
  };

  struct Endpoint {
    int node = 0;
    bool alive = true;
  };

  struct NodeState {
    bool reserve = false;
    bool failed = false;
  };

  struct Barrier {
    std::vector<int> members;
    std::map<int, std::uint64_t> arrived;
    bool released = false;
    bool failed = false;
    bool mismatch = false;
    std::vector<int> failed_members;
    std::uint64_t result = ~std::uint64_t{0};
  };

  struct ScheduledFailure {
    FailureTarget target;
    std::uint64_t at = 0;
  };

  // All private methods below require mu_ held.
  void bump_event(std::unique_lock<std::mutex>& lk, int self);
  void apply_failure(const FailureTarget& target);
  void kill_endpoint(int ep);
  void make_ready(int ep);
  void schedule_next();
  void yield_until_scheduled(std::unique_lock<std::mutex>& lk, int self);
  void block(std::unique_lock<std::mutex>& lk, int self);
  void check_self_alive(int self);
  void start_task(int ep);
  void finish_task(std::unique_lock<std::mutex>& lk, int self);

  // Transport backends (called by SimTransport with mu_ not held).
  void op_send(int self, int to, std::uint32_t tag, std::span<const std::uint8_t> bytes);
  Message op_recv(int self, int from, std::uint32_t tag, GroupKey abort_key);
  std::uint64_t op_barrier(int self, std::span<const int> members, std::uint64_t key,
                           std::uint64_t contribution, GroupKey abort_key);
  void op_revoke(int self, GroupKey key);
  bool op_is_revoked(GroupKey key);
  SpawnResult op_spawn(int self, const SpawnRequest& req);
  std::vector<int> op_known_failed();
  void op_inject(int self, const FailureTarget& target);
  std::uint64_t op_now();
  int op_reserve_remaining();

  ClusterSpec spec_;
  std::string store_base_;
  std::function<void(SimTransport&)> entry_;

  mutable std::mutex mu_;
  std::condition_variable driver_cv_;
  std::vector<Endpoint> endpoints_;
  std::vector<NodeState> nodes_;
  std::vector<std::unique_ptr<Task>> tasks_;
  std::deque<int> ready_;
  int current_ = -1;
  bool running_ = false;

  std::vector<std::deque<Message>> mailboxes_;
  std::map<std::uint64_t, Barrier> barriers_;
  std::set<GroupKey> revoked_;
  std::vector<ScheduledFailure> scheduled_;
  std::uint64_t events_ = 0;
  std::uint64_t rng_state_ = 0;
  std::vector<TraceEvent> trace_;
  std::exception_ptr task_error_;
  NodeScheme node_scheme_ = NodeScheme::kLocal;
};

// Thrown at a rank's failure point; terminates the task. Deliberately not a
// std::exception so application error handling cannot absorb it.
struct ProcessKilled {};

// Per-rank view of the simulated cluster.
class SimTransport final : public Transport {
 public:
  SimTransport(SimCluster* cluster, int endpoint) : cluster_(cluster), self_(endpoint) {}

  int self() const override { return self_; }
  int node_of(int endpoint) const override;
  const ClusterSpec& cluster() const override;

  void send(int to, std::uint32_t tag, std::span<const std::uint8_t> bytes) override {
    cluster_->op_send(self_, to, tag, bytes);
  }
  Message recv(int from, std::uint32_t tag, GroupKey abort_key) override {
    return cluster_->op_recv(self_, from, tag, abort_key);
  }
  std::uint64_t barrier(std::span<const int> members, std::uint64_t key,
                        std::uint64_t contribution, GroupKey abort_key) override {
    return cluster_->op_barrier(self_, members, key, contribution, abort_key);
  }
  std::vector<int> known_failed() override { return cluster_->op_known_failed(); }
  void revoke(GroupKey key) override { cluster_->op_revoke(self_, key); }
  bool is_revoked(GroupKey key) override { return cluster_->op_is_revoked(key); }
  SpawnResult spawn(const SpawnRequest& req) override { return cluster_->op_spawn(self_, req); }
  int reserve_nodes_remaining() override { return cluster_->op_reserve_remaining(); }
  std::optional<NodeStoreEnv> node_store_env() const override;
  std::uint64_t now() override { return cluster_->op_now(); }

  bool is_spawned() const override { return self_ >= cluster_->spec_.initial_ranks(); }

  [[noreturn]] void exit_process() override {
    cluster_->op_inject(self_, {false, self_});
    throw ProcessKilled{};  // op_inject on self does not return; keep noreturn honest
  }

  void set_reapable(bool value) override { set_orphanable(value); }

  // Kills ranks from inside the program at a deterministic point; a target
  // set containing the caller does not return.
  void inject_failure(const SimCluster::FailureTarget& target) {
    cluster_->op_inject(self_, target);
  }

  // Marks this task reapable while it waits for an adoption message that may
  // never come (spawned process whose recovery round was abandoned).
  void set_orphanable(bool value);

  SimCluster& kernel() { return *cluster_; }

 private:
  SimCluster* cluster_;
  int self_;
};

}  // namespace craftkit
