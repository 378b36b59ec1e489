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

#include "craftkit/mp_transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>

#include "craftkit/wire.hpp"

namespace craftkit {

namespace {

int env_int(const char* name, int dflt) {
  const char* v = std::getenv(name);
  return (v && *v) ? std::atoi(v) : dflt;
}

std::string env_str(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

constexpr int kHeartbeatMs = 100;

}  // namespace

bool MpTransport::under_launcher() { return !env_str("CRAFTKIT_HUB_PORT").empty(); }

MpTransport::MpTransport() {
  ::signal(SIGPIPE, SIG_IGN);
  const int port = env_int("CRAFTKIT_HUB_PORT", 0);
  if (port == 0) throw ConfigError("CRAFTKIT_HUB_PORT not set; not running under craftkit-launch");
  self_ = env_int("CRAFTKIT_ENDPOINT", -1);
  node_ = env_int("CRAFTKIT_NODE", 0);
  spawned_ = env_int("CRAFTKIT_SPAWNED", 0) != 0;
  spec_.num_nodes = env_int("CRAFTKIT_NODES", 1);
  spec_.ranks_per_node = env_int("CRAFTKIT_RANKS_PER_NODE", 1);
  spec_.reserve_nodes = env_int("CRAFTKIT_RESERVE", 0);
  start_ = std::chrono::steady_clock::now();

  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw Error("cannot create worker socket");
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw Error("cannot connect to the launcher hub");
  }
  WireWriter hello(FrameType::kHello);
  hello.u32(static_cast<std::uint32_t>(self_));
  hello.u32(static_cast<std::uint32_t>(node_));
  hello.u32(static_cast<std::uint32_t>(env_int("CRAFTKIT_GENERATION", 0)));
  hello.u8(spawned_ ? 1 : 0);
  send_frame(fd_, hello.payload());
  const auto welcome = recv_frame(fd_);
  if (!welcome) throw Error("hub rejected the handshake");

  heartbeat_ = std::thread([this] {
    while (!stop_.load()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(kHeartbeatMs));
      if (stop_.load()) break;
      try {
        WireWriter hb(FrameType::kHeartbeat);
        send_frame(fd_, hb.payload());
      } catch (const Error&) {
        return;  // hub gone; the main thread notices on its next operation
      }
    }
  });
}

MpTransport::~MpTransport() {
  if (!said_goodbye_) {
    try {
      goodbye();
    } catch (...) {
    }
  }
  stop_.store(true);
  if (heartbeat_.joinable()) heartbeat_.join();
  if (fd_ >= 0) ::close(fd_);
}

void MpTransport::goodbye() {
  if (said_goodbye_) return;
  said_goodbye_ = true;
  WireWriter bye(FrameType::kBye);
  send_frame(fd_, bye.payload());
}

int MpTransport::node_of(int endpoint) const {
  if (endpoint == self_) return node_;
  if (endpoint < spec_.initial_ranks()) return endpoint / spec_.ranks_per_node;
  const auto it = known_nodes_.find(endpoint);
  return it != known_nodes_.end() ? it->second : -1;
}

std::uint64_t MpTransport::now() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                        std::chrono::steady_clock::now() - start_)
                                        .count());
}

void MpTransport::handle(const std::vector<std::uint8_t>& payload) {
  WireReader r(payload);
  switch (r.type()) {
    case FrameType::kData: {
      Message m;
      m.from = static_cast<int>(r.u32());
      m.tag = r.u32();
      m.bytes = r.rest();
      inbox_.push_back(std::move(m));
      break;
    }
    case FrameType::kFailed: {
      const int ep = static_cast<int>(r.u32());
      failed_.insert(ep);
      known_nodes_[ep] = r.i32();
      break;
    }
    case FrameType::kRevoked:
      revoked_.insert(r.u64());
      break;
    case FrameType::kBarrierOk: {
      const std::uint64_t key = r.u64();
      barrier_replies_[key] = {BarrierReply::Kind::kOk, r.u64(), {}};
      break;
    }
    case FrameType::kBarrierFail: {
      const std::uint64_t key = r.u64();
      BarrierReply reply;
      reply.kind = BarrierReply::Kind::kFail;
      const std::uint32_t count = r.u32();
      for (std::uint32_t i = 0; i < count; ++i) reply.failed.push_back(static_cast<int>(r.u32()));
      barrier_replies_[key] = std::move(reply);
      break;
    }
    case FrameType::kBarrierMismatch:
      barrier_replies_[r.u64()] = {BarrierReply::Kind::kMismatch, 0, {}};
      break;
    case FrameType::kBarrierRevoked:
      barrier_replies_[r.u64()] = {BarrierReply::Kind::kRevoked, 0, {}};
      break;
    case FrameType::kSpawnOk: {
      const std::uint32_t req = r.u32();
      SpawnResult sr;
      sr.node = r.i32();
      const std::uint32_t count = r.u32();
      for (std::uint32_t i = 0; i < count; ++i) {
        const int ep = static_cast<int>(r.u32());
        sr.endpoints.push_back(ep);
        known_nodes_[ep] = sr.node;
      }
      spawn_replies_[req] = {true, std::move(sr)};
      break;
    }
    case FrameType::kSpawnFail:
      spawn_replies_[r.u32()] = {false, {}};
      break;
    case FrameType::kReserveCount: {
      const std::uint32_t req = r.u32();
      reserve_replies_[req] = static_cast<int>(r.u32());
      break;
    }
    default:
      break;
  }
}

void MpTransport::pump(int timeout_ms) {
  pollfd p{fd_, POLLIN, 0};
  const int rc = ::poll(&p, 1, timeout_ms);
  if (rc <= 0) return;
  // Drain everything currently readable.
  for (;;) {
    auto payload = recv_frame(fd_);
    if (!payload) throw FatalZoneError("lost connection to the launcher hub");
    handle(*payload);
    pollfd again{fd_, POLLIN, 0};
    if (::poll(&again, 1, 0) <= 0) return;
  }
}

void MpTransport::send(int to, std::uint32_t tag, std::span<const std::uint8_t> bytes) {
  pump(0);
  if (failed_.count(to) > 0) throw ProcFailedError({to});
  WireWriter w(FrameType::kData);
  w.u32(static_cast<std::uint32_t>(to));
  w.u32(tag);
  w.bytes(bytes.data(), bytes.size());
  send_frame(fd_, w.payload());
}

Message MpTransport::recv(int from, std::uint32_t tag, GroupKey abort_key) {
  for (;;) {
    if (abort_key != kNoGroup && revoked_.count(abort_key) > 0) throw RevokedError();
    for (auto it = inbox_.begin(); it != inbox_.end(); ++it) {
      if (it->tag != tag) continue;
      if (from != kAnySource && it->from != from) continue;
      Message m = std::move(*it);
      inbox_.erase(it);
      return m;
    }
    if (from != kAnySource && failed_.count(from) > 0) throw ProcFailedError({from});
    pump(20);
  }
}

std::uint64_t MpTransport::barrier(std::span<const int> members, std::uint64_t key,
                                   std::uint64_t contribution, GroupKey abort_key) {
  WireWriter w(FrameType::kBarrierEnter);
  w.u64(key);
  w.u64(contribution);
  w.u64(abort_key);
  w.u32(static_cast<std::uint32_t>(members.size()));
  for (int m : members) w.u32(static_cast<std::uint32_t>(m));
  send_frame(fd_, w.payload());
  for (;;) {
    const auto it = barrier_replies_.find(key);
    if (it != barrier_replies_.end()) {
      const BarrierReply reply = it->second;
      barrier_replies_.erase(it);
      switch (reply.kind) {
        case BarrierReply::Kind::kOk:
          return reply.result;
        case BarrierReply::Kind::kFail:
          throw ProcFailedError(reply.failed);
        case BarrierReply::Kind::kMismatch:
          throw GroupMismatchError();
        case BarrierReply::Kind::kRevoked:
          throw RevokedError();
      }
    }
    pump(20);
  }
}

std::vector<int> MpTransport::known_failed() {
  pump(0);
  return {failed_.begin(), failed_.end()};
}

void MpTransport::revoke(GroupKey key) {
  revoked_.insert(key);
  WireWriter w(FrameType::kRevoke);
  w.u64(key);
  send_frame(fd_, w.payload());
}

bool MpTransport::is_revoked(GroupKey key) {
  pump(0);
  return revoked_.count(key) > 0;
}

SpawnResult MpTransport::spawn(const SpawnRequest& req) {
  const std::uint32_t id = next_req_++;
  WireWriter w(FrameType::kSpawnReq);
  w.u32(id);
  w.u8(req.placement == Placement::kOnReserve ? 0 : 1);
  w.i32(req.node);
  w.u32(static_cast<std::uint32_t>(req.count));
  send_frame(fd_, w.payload());
  for (;;) {
    const auto it = spawn_replies_.find(id);
    if (it != spawn_replies_.end()) {
      const auto [ok, result] = it->second;
      spawn_replies_.erase(it);
      if (!ok) throw SpawnCapacityError("no reserve nodes left");
      return result;
    }
    pump(20);
  }
}

int MpTransport::reserve_nodes_remaining() {
  const std::uint32_t id = next_req_++;
  WireWriter w(FrameType::kReserveQuery);
  w.u32(id);
  send_frame(fd_, w.payload());
  for (;;) {
    const auto it = reserve_replies_.find(id);
    if (it != reserve_replies_.end()) {
      const int count = it->second;
      reserve_replies_.erase(it);
      return count;
    }
    pump(20);
  }
}

void MpTransport::exit_process() {
  stop_.store(true);
  ::_exit(0);
}

std::optional<NodeStoreEnv> MpTransport::node_store_env() const {
  const std::string base = env_str("CRAFTKIT_NODE_STORE_BASE");
  if (base.empty()) return std::nullopt;
  NodeStoreEnv env;
  env.node_id = node_;
  env.node_root = (std::filesystem::path(base) / ("node-" + std::to_string(node_))).string();
  env.layout.num_nodes = spec_.total_nodes();
  env.node_root_of = [base](int n) {
    return (std::filesystem::path(base) / ("node-" + std::to_string(n))).string();
  };
  const std::string scheme = env_str("CRAFTKIT_NODE_SCHEME");
  if (scheme == "PARTNER") {
    env.scheme = NodeScheme::kPartner;
  } else if (scheme == "PARTNER-XOR") {
    env.scheme = NodeScheme::kPartnerXor;
  } else {
    env.scheme = NodeScheme::kLocal;
  }
  return env;
}

}  // namespace craftkit
