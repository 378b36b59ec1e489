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

#include "craftkit/sim_cluster.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

namespace craftkit {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

SimCluster::SimCluster(ClusterSpec spec, std::string store_base)
    : spec_(spec), store_base_(std::move(store_base)), rng_state_(spec.seed ^ 0xC0FFEE) {
  nodes_.resize(static_cast<std::size_t>(spec_.total_nodes()));
  for (int n = spec_.num_nodes; n < spec_.total_nodes(); ++n) {
    nodes_[static_cast<std::size_t>(n)].reserve = true;
  }
  for (int n = 0; n < spec_.num_nodes; ++n) {
    for (int r = 0; r < spec_.ranks_per_node; ++r) {
      endpoints_.push_back({n, true});
    }
  }
  mailboxes_.resize(endpoints_.size());
}

SimCluster::~SimCluster() {
  for (auto& t : tasks_) {
    if (t && t->thread.joinable()) t->thread.join();
  }
}

std::string SimCluster::node_root(int node) const {
  return (std::filesystem::path(store_base_) / ("node-" + std::to_string(node))).string();
}

void SimCluster::schedule_failure_at_event(FailureTarget target, std::uint64_t event_count) {
  std::lock_guard<std::mutex> lk(mu_);
  scheduled_.push_back({target, event_count});
  std::sort(scheduled_.begin(), scheduled_.end(),
            [](const ScheduledFailure& a, const ScheduledFailure& b) { return a.at < b.at; });
}

std::vector<int> SimCluster::ground_truth_failed() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<int> out;
  for (std::size_t i = 0; i < endpoints_.size(); ++i) {
    if (!endpoints_[i].alive) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> SimCluster::failed_nodes() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<int> out;
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    if (nodes_[n].failed) out.push_back(static_cast<int>(n));
  }
  return out;
}

int SimCluster::reserve_remaining() const {
  std::lock_guard<std::mutex> lk(mu_);
  int count = 0;
  for (const auto& n : nodes_) {
    if (n.reserve) ++count;
  }
  return count;
}

std::uint64_t SimCluster::delivered_events() const {
  std::lock_guard<std::mutex> lk(mu_);
  return events_;
}

void SimCluster::start_task(int ep) {
  auto task = std::make_unique<Task>();
  task->endpoint = ep;
  task->transport = std::make_unique<SimTransport>(this, ep);
  Task* tp = task.get();
  if (static_cast<std::size_t>(ep) != tasks_.size()) throw Error("task/endpoint misalignment");
  tasks_.push_back(std::move(task));
  ready_.push_back(ep);
  tp->thread = std::thread([this, tp] {
    {
      std::unique_lock<std::mutex> lk(mu_);
      yield_until_scheduled(lk, tp->endpoint);
      if (!endpoints_[static_cast<std::size_t>(tp->endpoint)].alive) {
        finish_task(lk, tp->endpoint);
        return;
      }
    }
    try {
      entry_(*tp->transport);
    } catch (const ProcessKilled&) {
      // fail-stop death
    } catch (...) {
      std::lock_guard<std::mutex> g(mu_);
      if (!task_error_) task_error_ = std::current_exception();
    }
    std::unique_lock<std::mutex> lk(mu_);
    finish_task(lk, tp->endpoint);
  });
}

void SimCluster::yield_until_scheduled(std::unique_lock<std::mutex>& lk, int self) {
  tasks_[static_cast<std::size_t>(self)]->cv.wait(lk, [&] { return current_ == self; });
}

void SimCluster::schedule_next() {
  if (ready_.empty()) {
    current_ = -1;
    driver_cv_.notify_all();
    return;
  }
  const std::size_t idx = static_cast<std::size_t>(splitmix64(rng_state_) % ready_.size());
  const int ep = ready_[idx];
  ready_.erase(ready_.begin() + static_cast<std::ptrdiff_t>(idx));
  Task& t = *tasks_[static_cast<std::size_t>(ep)];
  t.state = TaskState::kRunning;
  current_ = ep;
  t.cv.notify_all();
}

void SimCluster::block(std::unique_lock<std::mutex>& lk, int self) {
  Task& t = *tasks_[static_cast<std::size_t>(self)];
  t.state = TaskState::kBlocked;
  schedule_next();
  yield_until_scheduled(lk, self);
  t.wait = WaitKind::kNone;
}

void SimCluster::make_ready(int ep) {
  Task& t = *tasks_[static_cast<std::size_t>(ep)];
  if (t.state == TaskState::kBlocked) {
    t.state = TaskState::kReady;
    ready_.push_back(ep);
  }
}

void SimCluster::finish_task(std::unique_lock<std::mutex>&, int self) {
  tasks_[static_cast<std::size_t>(self)]->state = TaskState::kDone;
  if (current_ == self) schedule_next();
}

void SimCluster::check_self_alive(int self) {
  if (!endpoints_[static_cast<std::size_t>(self)].alive) throw ProcessKilled{};
}

void SimCluster::bump_event(std::unique_lock<std::mutex>&, int self) {
  ++events_;
  while (!scheduled_.empty() && scheduled_.front().at <= events_) {
    const FailureTarget target = scheduled_.front().target;
    scheduled_.erase(scheduled_.begin());
    apply_failure(target);
  }
  check_self_alive(self);
}

void SimCluster::kill_endpoint(int ep) {
  auto& e = endpoints_[static_cast<std::size_t>(ep)];
  if (!e.alive) return;
  e.alive = false;
  trace_.push_back({'f', ep, 0});
  // Fail-stop: undelivered messages from the dead endpoint vanish.
  for (auto& box : mailboxes_) {
    box.erase(std::remove_if(box.begin(), box.end(),
                             [ep](const Message& m) { return m.from == ep; }),
              box.end());
  }
  // The dead task unwinds at its next scheduling point.
  if (static_cast<std::size_t>(ep) < tasks_.size() && tasks_[static_cast<std::size_t>(ep)]) {
    make_ready(ep);
  }
  // Receivers waiting specifically on this endpoint observe the failure.
  for (auto& t : tasks_) {
    if (t && t->state == TaskState::kBlocked && t->wait == WaitKind::kRecv &&
        t->wait_from == ep) {
      make_ready(t->endpoint);
    }
  }
  // Barriers with this member fail for every participant. A barrier that
  // already failed picks up additional deaths applied in the same injection.
  for (auto& [key, b] : barriers_) {
    if (b.released) continue;
    if (!std::binary_search(b.members.begin(), b.members.end(), ep)) continue;
    b.failed = true;
    b.failed_members.clear();
    for (int m : b.members) {
      if (!endpoints_[static_cast<std::size_t>(m)].alive) b.failed_members.push_back(m);
    }
    for (const auto& [m, _] : b.arrived) {
      Task& t = *tasks_[static_cast<std::size_t>(m)];
      if (t.state == TaskState::kBlocked && t.wait == WaitKind::kBarrier && t.wait_key == key) {
        make_ready(m);
      }
    }
  }
}

void SimCluster::apply_failure(const FailureTarget& target) {
  if (target.whole_node) {
    nodes_[static_cast<std::size_t>(target.id)].failed = true;
    for (std::size_t ep = 0; ep < endpoints_.size(); ++ep) {
      if (endpoints_[ep].node == target.id) kill_endpoint(static_cast<int>(ep));
    }
  } else {
    kill_endpoint(target.id);
  }
}

void SimCluster::run(std::function<void(SimTransport&)> entry) {
  std::unique_lock<std::mutex> lk(mu_);
  if (running_ || !tasks_.empty()) throw Error("SimCluster::run may only be called once");
  running_ = true;
  entry_ = std::move(entry);

  const int initial = spec_.initial_ranks();
  for (int ep = 0; ep < initial; ++ep) start_task(ep);
  schedule_next();

  std::string deadlock;
  for (;;) {
    driver_cv_.wait(lk, [&] { return current_ == -1; });
    bool all_done = true;
    bool any_orphan = false;
    std::vector<int> blocked;
    for (const auto& t : tasks_) {
      if (t->state == TaskState::kDone) continue;
      all_done = false;
      if (t->state == TaskState::kBlocked) {
        blocked.push_back(t->endpoint);
        if (t->orphanable) any_orphan = true;
      }
    }
    if (all_done) break;
    if (any_orphan) {
      // Spawned processes never adopted by a recovery round; the runtime
      // reaps them at quiescence.
      for (const auto& t : tasks_) {
        if (t->state == TaskState::kBlocked && t->orphanable) kill_endpoint(t->endpoint);
      }
      schedule_next();
      continue;
    }
    std::ostringstream msg;
    msg << "simulated cluster deadlock; blocked endpoints:";
    for (int ep : blocked) {
      const Task& t = *tasks_[static_cast<std::size_t>(ep)];
      msg << " " << ep << "(" << (t.wait == WaitKind::kRecv ? "recv" : "barrier") << ")";
    }
    deadlock = msg.str();
    for (int ep : blocked) kill_endpoint(ep);
    schedule_next();
  }
  running_ = false;
  lk.unlock();
  for (auto& t : tasks_) {
    if (t->thread.joinable()) t->thread.join();
  }
  if (task_error_) std::rethrow_exception(task_error_);
  if (!deadlock.empty()) throw Error(deadlock);
}

// --- transport operations ---------------------------------------------------

void SimCluster::op_send(int self, int to, std::uint32_t tag,
                         std::span<const std::uint8_t> bytes) {
  std::unique_lock<std::mutex> lk(mu_);
  check_self_alive(self);
  bump_event(lk, self);
  if (to < 0 || static_cast<std::size_t>(to) >= endpoints_.size()) {
    throw Error("send to unknown endpoint " + std::to_string(to));
  }
  trace_.push_back({'s', self, to});
  if (!endpoints_[static_cast<std::size_t>(to)].alive) {
    throw ProcFailedError({to});
  }
  mailboxes_[static_cast<std::size_t>(to)].push_back(
      Message{self, tag, std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
  Task& rt = *tasks_[static_cast<std::size_t>(to)];
  if (rt.state == TaskState::kBlocked && rt.wait == WaitKind::kRecv &&
      (rt.wait_from == kAnySource || rt.wait_from == self) && rt.wait_tag == tag) {
    make_ready(to);
  }
}

Message SimCluster::op_recv(int self, int from, std::uint32_t tag, GroupKey abort_key) {
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    check_self_alive(self);
    if (abort_key != kNoGroup && revoked_.count(abort_key) > 0) throw RevokedError();
    auto& box = mailboxes_[static_cast<std::size_t>(self)];
    for (auto it = box.begin(); it != box.end(); ++it) {
      if (it->tag != tag) continue;
      if (from != kAnySource && it->from != from) continue;
      bump_event(lk, self);
      Message msg = std::move(*it);
      box.erase(it);
      trace_.push_back({'r', self, msg.from});
      return msg;
    }
    if (from != kAnySource && !endpoints_[static_cast<std::size_t>(from)].alive) {
      throw ProcFailedError({from});
    }
    Task& t = *tasks_[static_cast<std::size_t>(self)];
    t.wait = WaitKind::kRecv;
    t.wait_from = from;
    t.wait_tag = tag;
    t.wait_abort = abort_key;
    block(lk, self);
  }
}

std::uint64_t SimCluster::op_barrier(int self, std::span<const int> members, std::uint64_t key,
                                     std::uint64_t contribution, GroupKey abort_key) {
  std::unique_lock<std::mutex> lk(mu_);
  check_self_alive(self);
  bump_event(lk, self);
  if (abort_key != kNoGroup && revoked_.count(abort_key) > 0) throw RevokedError();

  std::vector<int> sorted(members.begin(), members.end());
  std::sort(sorted.begin(), sorted.end());
  if (!std::binary_search(sorted.begin(), sorted.end(), self)) {
    throw Error("barrier caller not in member list");
  }

  auto [it, inserted] = barriers_.try_emplace(key);
  Barrier& b = it->second;
  if (inserted) {
    b.members = sorted;
  } else if (b.members != sorted) {
    b.mismatch = true;
    for (const auto& [m, _] : b.arrived) {
      Task& t = *tasks_[static_cast<std::size_t>(m)];
      if (t.state == TaskState::kBlocked && t.wait == WaitKind::kBarrier && t.wait_key == key) {
        make_ready(m);
      }
    }
    throw GroupMismatchError();
  }
  if (b.mismatch) throw GroupMismatchError();
  if (b.failed) throw ProcFailedError(b.failed_members);
  if (b.released || b.arrived.count(self) > 0) {
    throw Error("barrier key reused: " + std::to_string(key));
  }

  trace_.push_back({'b', self, static_cast<long>(key & 0xFFFFFF)});
  b.arrived[self] = contribution;

  std::vector<int> dead;
  for (int m : b.members) {
    if (!endpoints_[static_cast<std::size_t>(m)].alive) dead.push_back(m);
  }
  if (!dead.empty()) {
    b.failed = true;
    b.failed_members = dead;
    for (const auto& [m, _] : b.arrived) {
      if (m == self) continue;
      Task& t = *tasks_[static_cast<std::size_t>(m)];
      if (t.state == TaskState::kBlocked && t.wait == WaitKind::kBarrier && t.wait_key == key) {
        make_ready(m);
      }
    }
    throw ProcFailedError(dead);
  }

  if (b.arrived.size() == b.members.size()) {
    // Atomic release: every participant observes the same outcome.
    std::uint64_t result = ~std::uint64_t{0};
    for (const auto& [_, c] : b.arrived) result &= c;
    b.result = result;
    b.released = true;
    trace_.push_back({'B', self, static_cast<long>(key & 0xFFFFFF)});
    for (const auto& [m, _] : b.arrived) {
      if (m == self) continue;
      Task& t = *tasks_[static_cast<std::size_t>(m)];
      if (t.state == TaskState::kBlocked && t.wait == WaitKind::kBarrier && t.wait_key == key) {
        make_ready(m);
      }
    }
    return result;
  }

  Task& t = *tasks_[static_cast<std::size_t>(self)];
  for (;;) {
    t.wait = WaitKind::kBarrier;
    t.wait_key = key;
    t.wait_abort = abort_key;
    block(lk, self);
    check_self_alive(self);
    if (abort_key != kNoGroup && revoked_.count(abort_key) > 0) throw RevokedError();
    if (b.mismatch) throw GroupMismatchError();
    if (b.failed) throw ProcFailedError(b.failed_members);
    if (b.released) return b.result;
  }
}

void SimCluster::op_revoke(int self, GroupKey key) {
  std::unique_lock<std::mutex> lk(mu_);
  check_self_alive(self);
  bump_event(lk, self);
  if (revoked_.insert(key).second) {
    trace_.push_back({'v', self, static_cast<long>(key & 0xFFFFFF)});
    for (auto& t : tasks_) {
      if (t && t->state == TaskState::kBlocked && t->wait_abort == key) make_ready(t->endpoint);
    }
  }
}

bool SimCluster::op_is_revoked(GroupKey key) {
  std::lock_guard<std::mutex> lk(mu_);
  return revoked_.count(key) > 0;
}

SpawnResult SimCluster::op_spawn(int self, const SpawnRequest& req) {
  std::unique_lock<std::mutex> lk(mu_);
  check_self_alive(self);
  bump_event(lk, self);
  int node = -1;
  if (req.placement == Placement::kOnReserve) {
    for (std::size_t n = 0; n < nodes_.size(); ++n) {
      if (nodes_[n].reserve && !nodes_[n].failed) {
        node = static_cast<int>(n);
        break;
      }
    }
    if (node < 0) throw SpawnCapacityError("no reserve nodes left");
    nodes_[static_cast<std::size_t>(node)].reserve = false;  // consumed, now working
  } else {
    if (req.node < 0 || static_cast<std::size_t>(req.node) >= nodes_.size()) {
      throw ConfigError("spawn on unknown node " + std::to_string(req.node));
    }
    node = req.node;
    nodes_[static_cast<std::size_t>(node)].failed = false;  // processes respawned on it
  }
  SpawnResult result;
  result.node = node;
  for (int i = 0; i < req.count; ++i) {
    const int ep = static_cast<int>(endpoints_.size());
    endpoints_.push_back({node, true});
    mailboxes_.emplace_back();
    start_task(ep);
    result.endpoints.push_back(ep);
  }
  trace_.push_back({'p', self, node});
  return result;
}

std::vector<int> SimCluster::op_known_failed() {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<int> out;
  for (std::size_t i = 0; i < endpoints_.size(); ++i) {
    if (!endpoints_[i].alive) out.push_back(static_cast<int>(i));
  }
  return out;
}

void SimCluster::op_inject(int self, const FailureTarget& target) {
  std::unique_lock<std::mutex> lk(mu_);
  check_self_alive(self);
  bump_event(lk, self);
  apply_failure(target);
  check_self_alive(self);  // a self-targeting injection does not return
}

std::uint64_t SimCluster::op_now() {
  std::lock_guard<std::mutex> lk(mu_);
  return events_;
}

int SimCluster::op_reserve_remaining() {
  std::lock_guard<std::mutex> lk(mu_);
  int count = 0;
  for (const auto& n : nodes_) {
    if (n.reserve) ++count;
  }
  return count;
}

// --- SimTransport ------------------------------------------------------------

int SimTransport::node_of(int endpoint) const {
  std::lock_guard<std::mutex> lk(cluster_->mu_);
  return cluster_->endpoints_[static_cast<std::size_t>(endpoint)].node;
}

const ClusterSpec& SimTransport::cluster() const { return cluster_->spec_; }

std::optional<NodeStoreEnv> SimTransport::node_store_env() const {
  if (cluster_->store_base_.empty()) return std::nullopt;
  NodeStoreEnv env;
  env.node_id = node_of(self_);
  env.node_root = cluster_->node_root(env.node_id);
  env.layout.num_nodes = cluster_->spec_.total_nodes();
  SimCluster* c = cluster_;
  env.node_root_of = [c](int n) { return c->node_root(n); };
  env.scheme = cluster_->node_scheme_;
  return env;
}

void SimTransport::set_orphanable(bool value) {
  std::lock_guard<std::mutex> lk(cluster_->mu_);
  cluster_->tasks_[static_cast<std::size_t>(self_)]->orphanable = value;
}

}  // namespace craftkit
