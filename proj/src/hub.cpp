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

#include "craftkit/hub.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "craftkit/errors.hpp"
#include "craftkit/wire.hpp"

namespace craftkit {

namespace {

void set_cloexec(int fd) {
  const int flags = ::fcntl(fd, F_GETFD);
  if (flags >= 0) ::fcntl(fd, F_SETFD, flags | FD_CLOEXEC);
}

}  // namespace

Hub::Hub(Options options) : opt_(std::move(options)) {
  ::signal(SIGPIPE, SIG_IGN);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error("cannot create hub socket");
  set_cloexec(listen_fd_);
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 128) != 0) {
    throw Error("cannot bind hub socket");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  nodes_.resize(static_cast<std::size_t>(opt_.spec.total_nodes()));
  for (int n = opt_.spec.num_nodes; n < opt_.spec.total_nodes(); ++n) {
    nodes_[static_cast<std::size_t>(n)].reserve = true;
  }
}

Hub::~Hub() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
  for (auto& w : workers_) {
    if (w.fd >= 0) ::close(w.fd);
  }
}

void Hub::log(const std::string& line) const {
  if (!opt_.verbose) return;
  std::printf("craftkit-launch: %s\n", line.c_str());
  std::fflush(stdout);
}

void Hub::spawn_worker(int endpoint, int node, bool spawned) {
  const pid_t pid = ::fork();
  if (pid < 0) throw Error("fork failed");
  if (pid == 0) {
    ::setenv("CRAFTKIT_HUB_PORT", std::to_string(port_).c_str(), 1);
    ::setenv("CRAFTKIT_ENDPOINT", std::to_string(endpoint).c_str(), 1);
    ::setenv("CRAFTKIT_NODE", std::to_string(node).c_str(), 1);
    ::setenv("CRAFTKIT_SPAWNED", spawned ? "1" : "0", 1);
    ::setenv("CRAFTKIT_GENERATION", std::to_string(generation_).c_str(), 1);
    ::setenv("CRAFTKIT_NODES", std::to_string(opt_.spec.num_nodes).c_str(), 1);
    ::setenv("CRAFTKIT_RANKS_PER_NODE", std::to_string(opt_.spec.ranks_per_node).c_str(), 1);
    ::setenv("CRAFTKIT_RESERVE", std::to_string(opt_.spec.reserve_nodes).c_str(), 1);
    if (!opt_.node_store_base.empty()) {
      ::setenv("CRAFTKIT_NODE_STORE_BASE", opt_.node_store_base.c_str(), 1);
      ::setenv("CRAFTKIT_NODE_SCHEME", to_string(opt_.scheme), 1);
    }
    std::vector<char*> argv;
    for (const auto& a : opt_.program) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    std::perror("craftkit-launch: exec failed");
    ::_exit(127);
  }
  if (static_cast<std::size_t>(endpoint) >= workers_.size()) {
    workers_.resize(static_cast<std::size_t>(endpoint) + 1);
  }
  Worker& w = workers_[static_cast<std::size_t>(endpoint)];
  w.endpoint = endpoint;
  w.node = node;
  w.pid = pid;
  w.alive = true;
  w.active = !spawned;  // replacements become active once a barrier adopts them
  w.last_seen = std::chrono::steady_clock::now();
  log("rank " + std::to_string(endpoint) + " node " + std::to_string(node) + " pid " +
      std::to_string(pid) + (spawned ? " spawned" : ""));
}

void Hub::to_worker(int endpoint, const std::vector<std::uint8_t>& payload) {
  Worker& w = workers_[static_cast<std::size_t>(endpoint)];
  if (!w.alive) return;
  if (!w.connected) {
    w.pending.push_back(payload);
    return;
  }
  try {
    send_frame(w.fd, payload);
  } catch (const Error&) {
    fail_worker(endpoint, "connection reset");
  }
}

void Hub::fail_worker(int endpoint, const char* why) {
  Worker& w = workers_[static_cast<std::size_t>(endpoint)];
  if (!w.alive) return;
  w.alive = false;
  if (w.fd >= 0) {
    fd_to_endpoint_.erase(w.fd);
    ::close(w.fd);
    w.fd = -1;
  }
  nodes_[static_cast<std::size_t>(w.node)].failed = true;
  log("endpoint " + std::to_string(endpoint) + " failed (" + why + ")");
  WireWriter note(FrameType::kFailed);
  note.u32(static_cast<std::uint32_t>(endpoint));
  note.i32(w.node);
  for (auto& other : workers_) {
    if (other.alive && other.connected) to_worker(other.endpoint, note.payload());
  }
  fail_barriers_for(endpoint);
}

void Hub::fail_barriers_for(int endpoint) {
  for (auto& [key, b] : barriers_) {
    if (b.released || b.revoked) continue;
    if (!std::binary_search(b.members.begin(), b.members.end(), endpoint)) continue;
    b.failed = true;
    b.failed_members.clear();
    for (int m : b.members) {
      if (!workers_[static_cast<std::size_t>(m)].alive) b.failed_members.push_back(m);
    }
    WireWriter reply(FrameType::kBarrierFail);
    reply.u64(key);
    reply.u32(static_cast<std::uint32_t>(b.failed_members.size()));
    for (int m : b.failed_members) reply.u32(static_cast<std::uint32_t>(m));
    for (const auto& [m, _] : b.arrived) {
      if (workers_[static_cast<std::size_t>(m)].alive) to_worker(m, reply.payload());
    }
  }
}

void Hub::accept_connection() {
  const int fd = ::accept(listen_fd_, nullptr, nullptr);
  if (fd < 0) return;
  set_cloexec(fd);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  // The first frame must be the handshake.
  auto payload = recv_frame(fd);
  if (!payload) {
    ::close(fd);
    return;
  }
  WireReader r(*payload);
  if (r.type() != FrameType::kHello) {
    ::close(fd);
    return;
  }
  const int endpoint = static_cast<int>(r.u32());
  if (endpoint < 0 || static_cast<std::size_t>(endpoint) >= workers_.size()) {
    ::close(fd);
    return;
  }
  Worker& w = workers_[static_cast<std::size_t>(endpoint)];
  w.fd = fd;
  w.connected = true;
  w.last_seen = std::chrono::steady_clock::now();
  fd_to_endpoint_[fd] = endpoint;
  WireWriter welcome(FrameType::kWelcome);
  welcome.u32(static_cast<std::uint32_t>(endpoint));
  send_frame(fd, welcome.payload());
  while (!w.pending.empty()) {
    auto frame = w.pending.front();
    w.pending.pop_front();
    to_worker(endpoint, frame);
  }
}

void Hub::handle_frame(int endpoint, const std::vector<std::uint8_t>& payload) {
  Worker& w = workers_[static_cast<std::size_t>(endpoint)];
  w.last_seen = std::chrono::steady_clock::now();
  WireReader r(payload);
  switch (r.type()) {
    case FrameType::kHeartbeat:
      break;
    case FrameType::kBye: {
      w.done = true;
      any_done_ = true;
      break;
    }
    case FrameType::kData: {
      const int to = static_cast<int>(r.u32());
      const std::uint32_t tag = r.u32();
      const auto bytes = r.rest();
      if (to >= 0 && static_cast<std::size_t>(to) < workers_.size() &&
          workers_[static_cast<std::size_t>(to)].alive) {
        WireWriter fwd(FrameType::kData);
        fwd.u32(static_cast<std::uint32_t>(endpoint));
        fwd.u32(tag);
        fwd.bytes(bytes.data(), bytes.size());
        to_worker(to, fwd.payload());
      }
      break;
    }
    case FrameType::kRevoke: {
      const GroupKey key = r.u64();
      if (revoked_.insert(key).second) {
        WireWriter note(FrameType::kRevoked);
        note.u64(key);
        for (auto& other : workers_) {
          if (other.alive && other.connected) to_worker(other.endpoint, note.payload());
        }
        for (auto& [bkey, b] : barriers_) {
          if (b.released || b.failed || b.revoked || b.abort_key != key) continue;
          b.revoked = true;
          WireWriter reply(FrameType::kBarrierRevoked);
          reply.u64(bkey);
          for (const auto& [m, _] : b.arrived) to_worker(m, reply.payload());
        }
      }
      break;
    }
    case FrameType::kBarrierEnter: {
      const std::uint64_t key = r.u64();
      const std::uint64_t contribution = r.u64();
      const GroupKey abort_key = r.u64();
      const std::uint32_t count = r.u32();
      std::vector<int> members;
      for (std::uint32_t i = 0; i < count; ++i) members.push_back(static_cast<int>(r.u32()));
      std::sort(members.begin(), members.end());

      if (abort_key != kNoGroup && revoked_.count(abort_key) > 0) {
        WireWriter reply(FrameType::kBarrierRevoked);
        reply.u64(key);
        to_worker(endpoint, reply.payload());
        break;
      }
      auto [it, inserted] = barriers_.try_emplace(key);
      BarrierState& b = it->second;
      if (inserted) {
        b.members = members;
        b.abort_key = abort_key;
      } else if (b.members != members) {
        b.mismatch = true;
        WireWriter reply(FrameType::kBarrierMismatch);
        reply.u64(key);
        to_worker(endpoint, reply.payload());
        for (const auto& [m, _] : b.arrived) to_worker(m, reply.payload());
        break;
      }
      if (b.mismatch) {
        WireWriter reply(FrameType::kBarrierMismatch);
        reply.u64(key);
        to_worker(endpoint, reply.payload());
        break;
      }
      if (b.revoked) {
        WireWriter reply(FrameType::kBarrierRevoked);
        reply.u64(key);
        to_worker(endpoint, reply.payload());
        break;
      }
      if (b.failed) {
        WireWriter reply(FrameType::kBarrierFail);
        reply.u64(key);
        reply.u32(static_cast<std::uint32_t>(b.failed_members.size()));
        for (int m : b.failed_members) reply.u32(static_cast<std::uint32_t>(m));
        to_worker(endpoint, reply.payload());
        break;
      }
      b.arrived[endpoint] = contribution;
      std::vector<int> dead;
      for (int m : b.members) {
        if (!workers_[static_cast<std::size_t>(m)].alive) dead.push_back(m);
      }
      if (!dead.empty()) {
        b.failed = true;
        b.failed_members = dead;
        WireWriter reply(FrameType::kBarrierFail);
        reply.u64(key);
        reply.u32(static_cast<std::uint32_t>(dead.size()));
        for (int m : dead) reply.u32(static_cast<std::uint32_t>(m));
        for (const auto& [m, _] : b.arrived) to_worker(m, reply.payload());
        break;
      }
      if (b.arrived.size() == b.members.size()) {
        std::uint64_t result = ~std::uint64_t{0};
        for (const auto& [_, c] : b.arrived) result &= c;
        b.released = true;
        WireWriter reply(FrameType::kBarrierOk);
        reply.u64(key);
        reply.u64(result);
        for (const auto& [m, _] : b.arrived) {
          workers_[static_cast<std::size_t>(m)].active = true;  // adopted spawns included
          to_worker(m, reply.payload());
        }
      }
      break;
    }
    case FrameType::kSpawnReq: {
      const std::uint32_t req_id = r.u32();
      const std::uint8_t placement = r.u8();
      const int target_node = r.i32();
      const int count = static_cast<int>(r.u32());
      int node = -1;
      if (placement == 0) {  // reserve
        for (std::size_t n = 0; n < nodes_.size(); ++n) {
          if (nodes_[n].reserve && !nodes_[n].failed) {
            node = static_cast<int>(n);
            break;
          }
        }
        if (node >= 0) nodes_[static_cast<std::size_t>(node)].reserve = false;
      } else if (target_node >= 0 && static_cast<std::size_t>(target_node) < nodes_.size()) {
        node = target_node;
        nodes_[static_cast<std::size_t>(node)].failed = false;
      }
      if (node < 0) {
        WireWriter reply(FrameType::kSpawnFail);
        reply.u32(req_id);
        to_worker(endpoint, reply.payload());
        break;
      }
      ++generation_;
      WireWriter reply(FrameType::kSpawnOk);
      reply.u32(req_id);
      reply.i32(node);
      reply.u32(static_cast<std::uint32_t>(count));
      for (int i = 0; i < count; ++i) {
        const int ep = static_cast<int>(workers_.size());
        spawn_worker(ep, node, true);
        reply.u32(static_cast<std::uint32_t>(ep));
      }
      to_worker(endpoint, reply.payload());
      break;
    }
    case FrameType::kReserveQuery: {
      const std::uint32_t req_id = r.u32();
      int count = 0;
      for (const auto& n : nodes_) {
        if (n.reserve) ++count;
      }
      WireWriter reply(FrameType::kReserveCount);
      reply.u32(req_id);
      reply.u32(static_cast<std::uint32_t>(count));
      to_worker(endpoint, reply.payload());
      break;
    }
    default:
      break;
  }
}

void Hub::check_heartbeats() {
  const auto now = std::chrono::steady_clock::now();
  const auto limit =
      std::chrono::milliseconds(opt_.heartbeat_interval_ms * opt_.missed_heartbeats_fatal);
  for (auto& w : workers_) {
    if (w.alive && w.connected && !w.done && now - w.last_seen > limit) {
      fail_worker(w.endpoint, "heartbeat lost");
    }
  }
}

void Hub::reap_children() {
  for (;;) {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, WNOHANG);
    if (pid <= 0) return;
    for (auto& w : workers_) {
      if (w.pid != pid) continue;
      if (WIFEXITED(status) && WEXITSTATUS(status) != 0 && !w.done) {
        w.error_exit = true;
        fail_worker(w.endpoint, "exited with error");
      } else if (WIFSIGNALED(status) && !w.done) {
        fail_worker(w.endpoint, "killed by signal");
      } else if (w.alive && w.done) {
        w.alive = false;
        if (w.fd >= 0) {
          fd_to_endpoint_.erase(w.fd);
          ::close(w.fd);
          w.fd = -1;
        }
      }
      break;
    }
  }
}

bool Hub::job_finished() const {
  bool anyone_alive = false;
  for (const auto& w : workers_) {
    if (w.alive) anyone_alive = true;
  }
  if (!anyone_alive) return true;  // nothing left to wait for, success or not
  if (!any_done_) return false;
  for (const auto& w : workers_) {
    if (w.active && w.alive && !w.done) return false;
  }
  return true;
}

int Hub::serve() {
  for (int node = 0; node < opt_.spec.num_nodes; ++node) {
    for (int r = 0; r < opt_.spec.ranks_per_node; ++r) {
      spawn_worker(node * opt_.spec.ranks_per_node + r, node, false);
    }
  }

  while (!job_finished()) {
    std::vector<pollfd> fds;
    fds.push_back({listen_fd_, POLLIN, 0});
    for (const auto& w : workers_) {
      if (w.alive && w.connected && w.fd >= 0) fds.push_back({w.fd, POLLIN, 0});
    }
    ::poll(fds.data(), fds.size(), 50);
    if (fds[0].revents & POLLIN) accept_connection();
    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const auto it = fd_to_endpoint_.find(fds[i].fd);
      if (it == fd_to_endpoint_.end()) continue;
      const int endpoint = it->second;
      auto payload = recv_frame(fds[i].fd);
      if (!payload) {
        Worker& w = workers_[static_cast<std::size_t>(endpoint)];
        if (w.done) {
          w.alive = false;
          fd_to_endpoint_.erase(w.fd);
          ::close(w.fd);
          w.fd = -1;
        } else {
          fail_worker(endpoint, "connection reset");
        }
        continue;
      }
      handle_frame(endpoint, *payload);
    }
    check_heartbeats();
    reap_children();
  }

  // Reap never-adopted replacements; they are idle by construction.
  bool error = false;
  for (auto& w : workers_) {
    if (w.alive && !w.done) {
      if (w.pid > 0) ::kill(w.pid, SIGKILL);
      w.alive = false;
    }
    if (w.error_exit) error = true;
    if (w.active && !w.done && w.error_exit) error = true;
  }
  reap_children();
  const int rc = (!any_done_ || error) ? 1 : 0;
  log("job finished rc=" + std::to_string(rc));
  return rc;
}

}  // namespace craftkit
