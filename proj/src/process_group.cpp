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

#include "craftkit/process_group.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace craftkit {

namespace {

// Fixed tag namespaces. Application tags live below 2^24 and are scoped by
// epoch; control tags use the top byte.
constexpr std::uint32_t kCtlAdopt = 0xFF000001;   // JOIN to a replacement
constexpr std::uint32_t kCtlNewView = 0xFF000002; // view broadcast to survivors

constexpr std::uint32_t kPurposeBarrier = 1;
constexpr std::uint32_t kPurposeAgree = 2;
constexpr std::uint32_t kPurposeShrink = 3;
constexpr std::uint32_t kPurposeConfirm = 4;

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::int32_t get_i32(const std::uint8_t* p) {
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(p[0]) |
                                   (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) |
                                   (static_cast<std::uint32_t>(p[3]) << 24));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

struct ViewMessage {
  std::uint64_t zone_id = 0;
  int epoch = 0;
  int attempt = 0;
  bool downgrade = false;
  int your_rank = -1;
  std::vector<int> members;
};

std::vector<std::uint8_t> encode_view(const ViewMessage& m) {
  std::vector<std::uint8_t> out;
  put_u64(out, m.zone_id);
  put_i32(out, m.epoch);
  put_i32(out, m.attempt);
  out.push_back(m.downgrade ? 1 : 0);
  put_i32(out, m.your_rank);
  put_i32(out, static_cast<std::int32_t>(m.members.size()));
  for (int e : m.members) put_i32(out, e);
  return out;
}

ViewMessage decode_view(const std::vector<std::uint8_t>& bytes) {
  ViewMessage m;
  const std::uint8_t* p = bytes.data();
  m.zone_id = get_u64(p);
  m.epoch = get_i32(p + 8);
  m.attempt = get_i32(p + 12);
  m.downgrade = p[16] != 0;
  m.your_rank = get_i32(p + 17);
  const std::int32_t n = get_i32(p + 21);
  for (std::int32_t i = 0; i < n; ++i) m.members.push_back(get_i32(p + 25 + 4 * i));
  return m;
}

std::uint64_t hash_members(const std::vector<int>& members) {
  std::uint64_t h = 1469598103934665603ull;
  for (int m : members) {
    h ^= static_cast<std::uint64_t>(m) + 0x9E3779B9u;
    h *= 1099511628211ull;
  }
  return h | 1;  // contribution of 0 would vanish in the AND
}

}  // namespace

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t x : {a, b, c, d}) {
    h ^= x + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xFF51AFD7ED558CCDull;
    h ^= h >> 33;
  }
  return h;
}

GroupKey GroupView::key() const { return mix_key(zone_id, static_cast<std::uint64_t>(epoch), 0x6B65, 0); }

int GroupView::rank_of(int endpoint) const {
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i] == endpoint) return static_cast<int>(i);
  }
  return -1;
}

ProcessGroup::ProcessGroup(Transport& transport, GroupView view)
    : transport_(&transport), view_(std::move(view)) {}

std::uint32_t ProcessGroup::scoped_tag(std::uint32_t tag) const {
  if (tag >= (1u << 24)) throw ConfigError("application message tags must be below 2^24");
  return (static_cast<std::uint32_t>(view_.epoch & 0x7F) << 24) | tag;
}

std::uint64_t ProcessGroup::next_collective_key(std::uint32_t purpose) {
  return mix_key(view_.zone_id, static_cast<std::uint64_t>(view_.epoch), purpose,
                 ++collective_seq_);
}

void ProcessGroup::barrier() {
  transport_->barrier(view_.members, next_collective_key(kPurposeBarrier), ~0ull, view_.key());
}

std::uint64_t ProcessGroup::agree(std::uint64_t flags) {
  return transport_->barrier(view_.members, next_collective_key(kPurposeAgree), flags,
                             view_.key());
}

void ProcessGroup::send(int to_rank, std::uint32_t tag, std::span<const std::uint8_t> bytes) {
  transport_->send(view_.endpoint_of(to_rank), scoped_tag(tag), bytes);
}

std::uint64_t ProcessGroup::allreduce_min(std::uint64_t value) {
  // Rank-0 gather and broadcast over tags reserved below the application
  // range; member failures surface as ProcFailedError like any receive.
  constexpr std::uint32_t kGatherTag = 0xFFFFF0;
  constexpr std::uint32_t kBcastTag = 0xFFFFF1;
  const int n = size();
  if (n == 1) return value;
  auto encode = [](std::uint64_t v) {
    std::vector<std::uint8_t> b(8);
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
    return b;
  };
  auto decode = [](const std::vector<std::uint8_t>& b) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  };
  if (rank() == 0) {
    std::uint64_t result = value;
    for (int r = 1; r < n; ++r) {
      result = std::min(result, decode(recv(r, kGatherTag).bytes));
    }
    const auto bytes = encode(result);
    for (int r = 1; r < n; ++r) send(r, kBcastTag, bytes);
    return result;
  }
  send(0, kGatherTag, encode(value));
  return decode(recv(0, kBcastTag).bytes);
}

Message ProcessGroup::recv(int from_rank, std::uint32_t tag) {
  const int from = from_rank == kAnySource ? kAnySource : view_.endpoint_of(from_rank);
  Message m = transport_->recv(from, scoped_tag(tag), view_.key());
  m.from = view_.rank_of(m.from);
  return m;
}

void ProcessGroup::revoke() { transport_->revoke(view_.key()); }

bool ProcessGroup::revoked() const { return transport_->is_revoked(view_.key()); }

std::vector<int> shrink_consensus(Transport& t, const GroupView& view, int attempt) {
  // The transport's failure detector propagates suspicion (it is exact and
  // grows monotonically); the member-checked barrier is the uniform decision
  // point. Any disagreement or further death fails the round for everyone
  // and the next round runs with fresher knowledge.
  for (int round = 0;; ++round) {
    const std::vector<int> failed = t.known_failed();
    std::set<int> failed_set(failed.begin(), failed.end());
    std::vector<int> survivors;
    for (int ep : view.members) {
      if (failed_set.count(ep) == 0) survivors.push_back(ep);
    }
    if (survivors.empty()) throw FatalZoneError("no survivors in group");
    const std::uint64_t key =
        mix_key(view.zone_id, static_cast<std::uint64_t>(view.epoch),
                0x5000u + static_cast<std::uint32_t>(attempt),
                (static_cast<std::uint64_t>(kPurposeShrink) << 32) |
                    static_cast<std::uint32_t>(round));
    try {
      t.barrier(survivors, key, hash_members(survivors), kNoGroup);
      return survivors;
    } catch (const ProcFailedError&) {
      continue;
    } catch (const GroupMismatchError&) {
      continue;
    }
  }
}

namespace {

// Spawns replacements for the failed ranks and distributes the new view.
// Only the coordinator (lowest-ranked survivor) spawns and sends.
RecoveryResult rebuild_nonshrinking(Transport& t, const GroupView& old_view,
                                    const std::vector<int>& survivors,
                                    const std::vector<int>& failed_endpoints,
                                    const RecoveryConfig& cfg, int attempt) {
  RecoveryResult result;
  result.failed_endpoints = failed_endpoints;
  for (int ep : failed_endpoints) result.failed_old_ranks.push_back(old_view.rank_of(ep));

  const int new_epoch = old_view.epoch + 1;
  const int me = t.self();
  const int coordinator = survivors.front();

  ViewMessage msg;
  msg.zone_id = old_view.zone_id;
  msg.epoch = new_epoch;
  msg.attempt = attempt;

  std::uint64_t mark = t.now();
  if (me == coordinator) {
    // Group the failed ranks by their original node and spawn one batch per
    // node, on the same node (REUSE) or on a reserve node (NO-REUSE).
    std::map<int, std::vector<int>> by_node;  // node -> old ranks
    std::vector<SpawnRequest> requests;
    for (int ep : failed_endpoints) by_node[t.node_of(ep)].push_back(old_view.rank_of(ep));
    for (const auto& [node, ranks] : by_node) {
      SpawnRequest req;
      req.count = static_cast<int>(ranks.size());
      if (cfg.spawn == SpawnPolicy::kReuse) {
        req.placement = Placement::kOnNode;
        req.node = node;
      } else {
        req.placement = Placement::kOnReserve;
      }
      requests.push_back(req);
    }
    result.phases.spawn_info = t.now() - mark;
    mark = t.now();

    std::vector<int> new_members = old_view.members;
    bool capacity_exhausted = false;
    std::vector<int> spawned;
    std::size_t req_index = 0;
    for (const auto& [node, ranks] : by_node) {
      try {
        const SpawnResult sr = t.spawn(requests[req_index++]);
        for (std::size_t i = 0; i < ranks.size(); ++i) {
          new_members[static_cast<std::size_t>(ranks[i])] = sr.endpoints[i];
          spawned.push_back(sr.endpoints[i]);
        }
      } catch (const SpawnCapacityError&) {
        capacity_exhausted = true;
        break;
      }
    }
    result.phases.rank_redistribution = 0;

    if (capacity_exhausted) {
      // Fall back to shrinking; spawned-but-unadopted processes are reaped.
      msg.downgrade = true;
      msg.members = survivors;
    } else {
      msg.downgrade = false;
      msg.members = new_members;
      result.replacement_endpoints = spawned;
    }
    for (int ep : survivors) {
      if (ep == me) continue;
      t.send(ep, kCtlNewView, encode_view(msg));
    }
    if (!msg.downgrade) {
      const std::uint64_t redistribute_start = t.now();
      for (std::size_t r = 0; r < msg.members.size(); ++r) {
        const int ep = msg.members[r];
        if (std::find(spawned.begin(), spawned.end(), ep) == spawned.end()) continue;
        ViewMessage join = msg;
        join.your_rank = static_cast<int>(r);
        t.send(ep, kCtlAdopt, encode_view(join));
      }
      result.phases.rank_redistribution = t.now() - redistribute_start;
    }
  } else {
    const Message m = t.recv(coordinator, kCtlNewView, kNoGroup);
    msg = decode_view(m.bytes);
  }

  // Everyone (survivors and replacements) confirms the new incarnation; the
  // new view exists only if this collective succeeds at all of them.
  const std::uint64_t confirm_key =
      mix_key(msg.zone_id, static_cast<std::uint64_t>(msg.epoch),
              0x6000u + static_cast<std::uint32_t>(msg.attempt), kPurposeConfirm);
  t.barrier(msg.members, confirm_key, hash_members(msg.members), kNoGroup);
  result.phases.spawn_merge = t.now() - mark - result.phases.rank_redistribution;
  mark = t.now();
  const int reserves_left = t.reserve_nodes_remaining();
  (void)reserves_left;
  result.phases.resource_management = t.now() - mark;

  result.downgraded_to_shrink = msg.downgrade;
  result.view.zone_id = old_view.zone_id;
  result.view.epoch = msg.epoch;
  result.view.members = msg.members;
  result.view.my_rank = result.view.rank_of(me);
  return result;
}

}  // namespace

RecoveryResult recover_group(Transport& t, const GroupView& view, const RecoveryConfig& cfg,
                             int attempt) {
  const std::uint64_t shrink_start = t.now();
  const std::vector<int> survivors = shrink_consensus(t, view, attempt);
  const std::uint64_t shrink_units = t.now() - shrink_start;
  std::vector<int> failed;
  for (int ep : view.members) {
    if (std::find(survivors.begin(), survivors.end(), ep) == survivors.end()) {
      failed.push_back(ep);
    }
  }

  if (cfg.policy == RecoveryPolicy::kNonShrinking && !failed.empty()) {
    RecoveryResult r = rebuild_nonshrinking(t, view, survivors, failed, cfg, attempt);
    r.phases.revoke_shrink = shrink_units;
    return r;
  }

  RecoveryResult result;
  result.failed_endpoints = failed;
  for (int ep : failed) result.failed_old_ranks.push_back(view.rank_of(ep));
  result.view.zone_id = view.zone_id;
  result.view.epoch = view.epoch + 1;
  result.view.members = survivors;
  result.view.my_rank = result.view.rank_of(t.self());
  result.phases.revoke_shrink = shrink_units;
  // The shrink decision barrier already confirmed this membership at every
  // survivor; adopting it needs no further round.
  return result;
}

GroupView await_adoption(Transport& t) {
  t.set_reapable(true);
  const Message m = t.recv(kAnySource, kCtlAdopt, kNoGroup);
  t.set_reapable(false);
  const ViewMessage msg = decode_view(m.bytes);

  GroupView view;
  view.zone_id = msg.zone_id;
  view.epoch = msg.epoch;
  view.members = msg.members;
  view.my_rank = msg.your_rank;

  const std::uint64_t confirm_key =
      mix_key(msg.zone_id, static_cast<std::uint64_t>(msg.epoch),
              0x6000u + static_cast<std::uint32_t>(msg.attempt), kPurposeConfirm);
  t.set_reapable(true);
  try {
    t.barrier(view.members, confirm_key, hash_members(view.members), kNoGroup);
  } catch (...) {
    // This recovery round was abandoned; nobody will ever adopt us.
    t.exit_process();
  }
  t.set_reapable(false);
  return view;
}

}  // namespace craftkit
