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

#include <chrono>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "craftkit/store.hpp"
#include "craftkit/transport.hpp"

namespace craftkit {

// Launcher-side runtime for the multi-OS-process transport: spawns worker
// processes, routes their messages, detects failures by heartbeat loss and
// connection reset, serves barriers, and respawns replacements on request.
// One instance lives in the craftkit-launch process.
class Hub {
 public:
  struct Options {
    ClusterSpec spec;
    std::vector<std::string> program;  // argv of the worker program
    std::string node_store_base;       // per-node storage roots live here
    NodeScheme scheme = NodeScheme::kLocal;
    int heartbeat_interval_ms = 100;
    int missed_heartbeats_fatal = 10;
    bool verbose = true;
  };

  explicit Hub(Options options);
  ~Hub();

  int listen_port() const { return port_; }

  // Spawns the initial ranks and serves until the job finishes. Returns the
  // launcher exit code: 0 when every participating worker finished cleanly
  // or was excused by an injected kill.
  int serve();

 private:
  struct Worker {
    int endpoint = -1;
    int node = -1;
    int fd = -1;
    pid_t pid = -1;
    bool alive = true;
    bool connected = false;
    bool done = false;     // sent a clean goodbye
    bool active = false;   // initial rank, or adopted by a completed barrier
    bool error_exit = false;
    std::chrono::steady_clock::time_point last_seen;
    std::deque<std::vector<std::uint8_t>> pending;  // frames queued pre-connect
  };

  struct BarrierState {
    std::vector<int> members;
    std::map<int, std::uint64_t> arrived;
    GroupKey abort_key = kNoGroup;
    bool released = false;
    bool failed = false;
    bool mismatch = false;
    bool revoked = false;
    std::vector<int> failed_members;
  };

  struct NodeState {
    bool reserve = false;
    bool failed = false;
  };

  void spawn_worker(int endpoint, int node, bool spawned);
  void accept_connection();
  void handle_frame(int endpoint, const std::vector<std::uint8_t>& payload);
  void to_worker(int endpoint, const std::vector<std::uint8_t>& payload);
  void fail_worker(int endpoint, const char* why);
  void fail_barriers_for(int endpoint);
  void check_heartbeats();
  void reap_children();
  bool job_finished() const;
  void log(const std::string& line) const;

  Options opt_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::vector<Worker> workers_;
  std::vector<NodeState> nodes_;
  std::map<int, int> fd_to_endpoint_;
  std::map<std::uint64_t, BarrierState> barriers_;
  std::set<GroupKey> revoked_;
  int generation_ = 0;
  bool any_done_ = false;
};

}  // namespace craftkit
