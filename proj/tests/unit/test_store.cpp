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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "craftkit/errors.hpp"
#include "craftkit/serialization.hpp"
#include "craftkit/store.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace craftkit;
using craftkit::testing::TempDir;

namespace {

std::vector<std::uint8_t> blob(std::initializer_list<int> bytes) {
  std::vector<std::uint8_t> v;
  for (int b : bytes) v.push_back(static_cast<std::uint8_t>(b));
  return v;
}

StoreConfig global_only(const TempDir& tmp) {
  StoreConfig cfg;
  cfg.global_root = tmp.sub("global");
  return cfg;
}

StoreConfig with_nodes(const TempDir& tmp, int num_nodes, NodeScheme scheme, int my_node = 0) {
  StoreConfig cfg;
  cfg.global_root = tmp.sub("global");
  cfg.layout.num_nodes = num_nodes;
  cfg.scheme = scheme;
  cfg.node_id = my_node;
  const std::string base = tmp.path();
  cfg.node_root_of = [base](int n) {
    auto p = fs::path(base) / ("node-" + std::to_string(n));
    fs::create_directories(p);
    return p.string();
  };
  cfg.node_root = cfg.node_root_of(my_node);
  return cfg;
}

}  // namespace

TEST_CASE("publishing v-1 produces the documented directory tree") {
  TempDir tmp;
  VersionStore store(global_only(tmp));
  store.open("CP1", StoreTier::kGlobal);
  store.publish_version("CP1", 1,
                        {{0, "a", blob({1, 2, 3})}, {0, "b", blob({4, 5})}},
                        StoreTier::kGlobal);
  const fs::path root = store.config().global_root;
  CHECK(fs::exists(root / "CP1" / "v-1" / "a"));
  CHECK(fs::exists(root / "CP1" / "v-1" / "b"));
  CHECK(fs::exists(root / "CP1" / "Metadata"));
  CHECK(store.latest_version("CP1", StoreTier::kGlobal) == 1);
}

TEST_CASE("out-of-order publication is rejected") {
  TempDir tmp;
  VersionStore store(global_only(tmp));
  store.open("cp", StoreTier::kGlobal);
  store.publish_version("cp", 1, {{0, "a", blob({1})}}, StoreTier::kGlobal);
  CHECK_THROWS_AS(store.publish_version("cp", 3, {{0, "a", blob({1})}}, StoreTier::kGlobal),
                  ConfigError);
  CHECK_THROWS_AS(store.publish_version("cp", 1, {{0, "a", blob({1})}}, StoreTier::kGlobal),
                  ConfigError);
}

TEST_CASE("retention keeps the newest two versions") {
  TempDir tmp;
  VersionStore store(global_only(tmp));
  store.open("cp", StoreTier::kGlobal);
  for (std::uint64_t v = 1; v <= 4; ++v) {
    store.publish_version("cp", v, {{0, "a", blob({static_cast<int>(v)})}}, StoreTier::kGlobal);
  }
  const fs::path dir = fs::path(store.config().global_root) / "cp";
  CHECK_FALSE(fs::exists(dir / "v-1"));
  CHECK_FALSE(fs::exists(dir / "v-2"));
  CHECK(fs::exists(dir / "v-3"));
  CHECK(fs::exists(dir / "v-4"));
}

TEST_CASE("round-trip through shared per-rank segments") {
  TempDir tmp;
  VersionStore store(global_only(tmp));
  store.open("cp", StoreTier::kGlobal);
  store.publish_version(
      "cp", 1, {{0, "x", blob({10, 11})}, {1, "x", blob({20})}, {0, "y", blob({7})}},
      StoreTier::kGlobal);
  auto r = store.load_latest("cp", {"x.rank-0", "x.rank-1", "y.rank-0"});
  REQUIRE(r.has_value());
  CHECK(r->version == 1);
  CHECK(read_file_bytes(r->files.at("x.rank-0")) == blob({10, 11}));
  CHECK(read_file_bytes(r->files.at("x.rank-1")) == blob({20}));
  CHECK(read_file_bytes(r->files.at("y.rank-0")) == blob({7}));
}

TEST_CASE("invalidate hides versions, is idempotent, and restarts numbering") {
  TempDir tmp;
  VersionStore store(global_only(tmp));
  store.open("cp", StoreTier::kGlobal);
  for (std::uint64_t v = 1; v <= 3; ++v) {
    store.publish_version("cp", v, {{0, "a", blob({static_cast<int>(v)})}}, StoreTier::kGlobal);
  }
  store.invalidate("cp");
  CHECK(store.latest_version("cp", StoreTier::kGlobal) == 0);
  CHECK_FALSE(store.load_latest("cp", {"a.rank-0"}).has_value());
  // Files are retained for inspection.
  CHECK(fs::exists(fs::path(store.config().global_root) / "cp" / "v-3" / "a"));

  store.invalidate("cp");
  CHECK(store.latest_version("cp", StoreTier::kGlobal) == 0);

  store.publish_version("cp", 1, {{0, "a", blob({9})}}, StoreTier::kGlobal);
  auto r = store.load_latest("cp", {"a.rank-0"});
  REQUIRE(r.has_value());
  CHECK(r->version == 1);
  CHECK(read_file_bytes(r->files.at("a.rank-0")) == blob({9}));
}

TEST_CASE("corrupted newest version falls back to the previous one") {
  TempDir tmp;
  VersionStore store(global_only(tmp));
  store.open("cp", StoreTier::kGlobal);
  store.publish_version("cp", 1, {{0, "a", blob({1, 1})}}, StoreTier::kGlobal);
  store.publish_version("cp", 2, {{0, "a", blob({2, 2})}}, StoreTier::kGlobal);

  const fs::path f = fs::path(store.config().global_root) / "cp" / "v-2" / "a";
  auto bytes = read_file_bytes(f.string());
  bytes.back() ^= 0xFF;
  write_file_bytes(f.string(), bytes);

  auto r = store.load_latest("cp", {"a.rank-0"});
  REQUIRE(r.has_value());
  CHECK(r->version == 1);
  CHECK(read_file_bytes(r->files.at("a.rank-0")) == blob({1, 1}));
}

TEST_CASE("node tier writes per-rank files and wins ties over the global tier") {
  TempDir tmp;
  VersionStore store(with_nodes(tmp, 2, NodeScheme::kLocal));
  store.open("cp", StoreTier::kGlobal);
  store.open("cp", StoreTier::kNodeLocal);
  store.publish_version("cp", 1, {{0, "a", blob({1})}}, StoreTier::kGlobal);
  store.publish_version("cp", 1, {{0, "a", blob({1})}}, StoreTier::kNodeLocal);
  store.publish_version("cp", 2, {{0, "a", blob({2})}}, StoreTier::kNodeLocal);

  CHECK(fs::exists(fs::path(store.config().node_root) / "cp" / "v-2" / "a.rank-0"));

  auto r = store.load_latest("cp", {"a.rank-0"});
  REQUIRE(r.has_value());
  CHECK(r->tier == StoreTier::kNodeLocal);
  CHECK(r->version == 2);
}

TEST_CASE("partner scheme copies each node's files to the ring neighbor") {
  TempDir tmp;
  // Four nodes; every rank r lives on node r for this test.
  StoreConfig cfg = with_nodes(tmp, 4, NodeScheme::kPartner, 2);
  VersionStore store(cfg);
  store.open("cp", StoreTier::kNodeLocal);
  // Stage files for nodes 2 and 3 by writing through per-node stores.
  for (int node : {0, 1, 2, 3}) {
    StoreConfig c = cfg;
    c.node_id = node;
    c.node_root = cfg.node_root_of(node);
    VersionStore s(c);
    s.begin_version("cp", 1, StoreTier::kNodeLocal);
    s.write_staged("cp", 1, StoreTier::kNodeLocal,
                   VersionStore::rank_file_name("a", node), [&](const std::string& p) {
                     write_file_bytes(p, blob({node, node}));
                   });
  }
  store.finish_version("cp", 1, StoreTier::kNodeLocal);

  // Node 2's files appear under node 3's root.
  const fs::path copy = fs::path(cfg.node_root_of(3)) / "cp" / "partner" / "node-2" / "v-1";
  CHECK(fs::exists(copy / "a.rank-2"));
  CHECK(read_file_bytes((copy / "a.rank-2").string()) == blob({2, 2}));
}

TEST_CASE("partner copy restores a lost node's files") {
  TempDir tmp;
  StoreConfig cfg = with_nodes(tmp, 4, NodeScheme::kPartner, 2);
  VersionStore store(cfg);
  store.open("cp", StoreTier::kNodeLocal);
  for (int node = 0; node < 4; ++node) {
    StoreConfig c = cfg;
    c.node_id = node;
    c.node_root = cfg.node_root_of(node);
    VersionStore s(c);
    s.begin_version("cp", 1, StoreTier::kNodeLocal);
    s.write_staged("cp", 1, StoreTier::kNodeLocal,
                   VersionStore::rank_file_name("a", node), [&](const std::string& p) {
                     write_file_bytes(p, blob({node, 100 + node}));
                   });
  }
  store.finish_version("cp", 1, StoreTier::kNodeLocal);

  // Node 2 dies and its storage evaporates.
  fs::remove_all(cfg.node_root_of(2));
  fs::create_directories(cfg.node_root_of(2));

  auto r = store.load_latest("cp", {"a.rank-2"});
  REQUIRE(r.has_value());
  CHECK(r->tier == StoreTier::kNodeLocal);
  CHECK(read_file_bytes(r->files.at("a.rank-2")) == blob({2, 102}));
}

TEST_CASE("xor parity reproduces the worked two-member example") {
  const std::vector<std::vector<std::uint8_t>> members = {blob({0x01, 0x02}), blob({0x0F})};
  const auto parity = build_xor_parity(members);
  CHECK(parity == blob({0x0E, 0x02}));
  const auto rebuilt = reconstruct_xor({members[0]}, parity, 1);
  CHECK(rebuilt == blob({0x0F}));
}

TEST_CASE("xor recovery over random groups with unequal lengths") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t group = 2 + rng() % 7;
    std::vector<std::vector<std::uint8_t>> members;
    for (std::size_t i = 0; i < group; ++i) {
      members.push_back(craftkit::testing::random_vector<std::uint8_t>(rng, 1 + rng() % 50));
    }
    const auto parity = build_xor_parity(members);
    const std::size_t lost = rng() % group;
    std::vector<std::vector<std::uint8_t>> survivors;
    for (std::size_t i = 0; i < group; ++i) {
      if (i != lost) survivors.push_back(members[i]);
    }
    CHECK(reconstruct_xor(survivors, parity, members[lost].size()) == members[lost]);
  }
}

TEST_CASE("partner-xor scheme rebuilds a lost node byte-exactly") {
  TempDir tmp;
  StoreConfig cfg = with_nodes(tmp, 4, NodeScheme::kPartnerXor, 0);
  VersionStore store(cfg);
  store.open("cp", StoreTier::kNodeLocal);
  std::mt19937_64 rng(5);
  std::map<int, std::vector<std::uint8_t>> original;
  for (int node = 0; node < 4; ++node) {
    StoreConfig c = cfg;
    c.node_id = node;
    c.node_root = cfg.node_root_of(node);
    VersionStore s(c);
    s.begin_version("cp", 1, StoreTier::kNodeLocal);
    original[node] = craftkit::testing::random_vector<std::uint8_t>(rng, 20 + node * 13);
    s.write_staged("cp", 1, StoreTier::kNodeLocal,
                   VersionStore::rank_file_name("a", node), [&](const std::string& p) {
                     write_file_bytes(p, original[node]);
                   });
  }
  store.finish_version("cp", 1, StoreTier::kNodeLocal);

  // Version 1 places the parity on node 1; lose a data member instead.
  fs::remove_all(cfg.node_root_of(2));
  fs::create_directories(cfg.node_root_of(2));

  auto r = store.load_latest("cp", {"a.rank-2"});
  REQUIRE(r.has_value());
  CHECK(read_file_bytes(r->files.at("a.rank-2")) == original[2]);

  // A second lost member makes the version unrecoverable from the node tier.
  fs::remove_all(cfg.node_root_of(3));
  fs::create_directories(cfg.node_root_of(3));
  CHECK_FALSE(store.load_latest("cp", {"a.rank-2", "a.rank-3"}).has_value());
}

namespace {

// Counts store I/O events and simulates a kill at one of them, optionally
// truncating the file at the crash point first.
struct CrashHook : IoHooks {
  struct Killed {};
  long countdown = -1;
  bool truncate = false;
  long seen = 0;

  void at(const char* point, const std::string& path) override {
    ++seen;
    if (countdown >= 0 && seen > countdown) {
      const bool mid_write = std::string(point) == "post-stage-write" ||
                             std::string(point) == "post-assemble" ||
                             std::string(point) == "post-metadata-write";
      if (truncate && mid_write && fs::exists(path) && fs::is_regular_file(path)) {
        const auto size = fs::file_size(path);
        if (size > 1) fs::resize_file(path, size / 2);
      }
      throw Killed{};
    }
  }
};

}  // namespace

TEST_CASE("a kill at any publication step leaves the previous version readable") {
  // Exhaustive over every hook point of one publication.
  TempDir tmp;
  CrashHook hook;
  StoreConfig cfg = global_only(tmp);
  cfg.hooks = &hook;

  // Count the events of a full publication once.
  {
    VersionStore store(cfg);
    store.open("probe", StoreTier::kGlobal);
    store.publish_version("probe", 1, {{0, "a", blob({1, 2, 3, 4})}, {0, "b", blob({5})}},
                          StoreTier::kGlobal);
  }
  const long total_events = hook.seen;
  REQUIRE(total_events > 5);

  for (int truncate = 0; truncate < 2; ++truncate) {
    for (long kill_at = 1; kill_at <= total_events; ++kill_at) {
      TempDir dir;
      CrashHook crash;
      StoreConfig c = global_only(dir);
      c.hooks = &crash;
      VersionStore store(c);
      store.open("cp", StoreTier::kGlobal);
      store.publish_version("cp", 1, {{0, "a", blob({1, 2, 3, 4})}, {0, "b", blob({5})}},
                            StoreTier::kGlobal);

      crash.countdown = kill_at;
      crash.truncate = truncate == 1;
      bool killed = false;
      try {
        store.publish_version("cp", 2, {{0, "a", blob({9, 9, 9, 9})}, {0, "b", blob({8})}},
                              StoreTier::kGlobal);
      } catch (const CrashHook::Killed&) {
        killed = true;
      }

      // Reopen as a fresh process would.
      StoreConfig clean = c;
      clean.hooks = nullptr;
      VersionStore reopened(clean);
      reopened.open("cp", StoreTier::kGlobal);
      auto r = reopened.load_latest("cp", {"a.rank-0", "b.rank-0"});
      REQUIRE(r.has_value());
      if (killed) {
        // Either the old version survived intact or the new one committed
        // completely before the kill point.
        if (r->version == 1) {
          CHECK(read_file_bytes(r->files.at("a.rank-0")) == blob({1, 2, 3, 4}));
          CHECK(read_file_bytes(r->files.at("b.rank-0")) == blob({5}));
        } else {
          CHECK(r->version == 2);
          CHECK(read_file_bytes(r->files.at("a.rank-0")) == blob({9, 9, 9, 9}));
          CHECK(read_file_bytes(r->files.at("b.rank-0")) == blob({8}));
        }
      }
    }
  }
}

TEST_CASE("stale staging directories are garbage collected on open") {
  TempDir tmp;
  StoreConfig cfg = global_only(tmp);
  VersionStore store(cfg);
  store.open("cp", StoreTier::kGlobal);
  store.publish_version("cp", 1, {{0, "a", blob({1})}}, StoreTier::kGlobal);
  const fs::path dir = fs::path(cfg.global_root) / "cp";
  fs::create_directories(dir / "v-2.tmp");
  write_file_bytes((dir / "v-2.tmp" / "junk").string(), blob({1, 2}));
  fs::create_directories(dir / "v-7");  // orphaned rename without metadata
  store.open("cp", StoreTier::kGlobal);
  CHECK_FALSE(fs::exists(dir / "v-2.tmp"));
  CHECK_FALSE(fs::exists(dir / "v-7"));
  CHECK(fs::exists(dir / "v-1"));
}

TEST_CASE("node-tier publication with replication is crash-atomic at every step") {
  // Exhaustive kill points over a two-node partner-scheme publication.
  auto build = [](const TempDir& tmp, IoHooks* hooks) {
    StoreConfig cfg = with_nodes(tmp, 2, NodeScheme::kPartner, 0);
    cfg.hooks = hooks;
    return cfg;
  };
  auto stage_both = [](const StoreConfig& cfg, std::uint64_t version, int salt) {
    for (int node = 0; node < 2; ++node) {
      StoreConfig c = cfg;
      c.node_id = node;
      c.node_root = cfg.node_root_of(node);
      c.hooks = nullptr;  // staging is not the publication under test
      VersionStore s(c);
      s.begin_version("cp", version, StoreTier::kNodeLocal);
      s.write_staged("cp", version, StoreTier::kNodeLocal,
                     VersionStore::rank_file_name("a", node), [&](const std::string& p) {
                       write_file_bytes(p, blob({salt, node, static_cast<int>(version)}));
                     });
    }
  };

  long total_events = 0;
  {
    TempDir tmp;
    CrashHook probe;
    StoreConfig cfg = build(tmp, &probe);
    VersionStore store(cfg);
    store.open("cp", StoreTier::kNodeLocal);
    stage_both(cfg, 1, 7);
    store.finish_version("cp", 1, StoreTier::kNodeLocal);
    total_events = probe.seen;
  }
  REQUIRE(total_events > 4);

  for (long kill_at = 1; kill_at <= total_events; ++kill_at) {
    TempDir tmp;
    CrashHook crash;
    StoreConfig cfg = build(tmp, &crash);
    VersionStore store(cfg);
    store.open("cp", StoreTier::kNodeLocal);
    stage_both(cfg, 1, 7);
    store.finish_version("cp", 1, StoreTier::kNodeLocal);

    stage_both(cfg, 2, 9);
    crash.seen = 0;
    crash.countdown = kill_at;
    bool killed = false;
    try {
      store.finish_version("cp", 2, StoreTier::kNodeLocal);
    } catch (const CrashHook::Killed&) {
      killed = true;
    }
    (void)killed;

    // Whatever the kill point: some version resolves completely and
    // byte-exactly. A publication torn between node roots may surface as
    // either version, never as a mixture.
    StoreConfig clean = cfg;
    clean.hooks = nullptr;
    VersionStore reopened(clean);
    reopened.open("cp", StoreTier::kNodeLocal);
    auto r = reopened.load_latest("cp", {"a.rank-0", "a.rank-1"});
    REQUIRE(r.has_value());
    const int salt = r->version == 1 ? 7 : 9;
    CHECK(read_file_bytes(r->files.at("a.rank-0")) ==
          blob({salt, 0, static_cast<int>(r->version)}));
    CHECK(read_file_bytes(r->files.at("a.rank-1")) ==
          blob({salt, 1, static_cast<int>(r->version)}));

    // The store stays usable: the group continues from the furthest node
    // root, stale roots accept the forward jump.
    std::uint64_t group_max = 0;
    for (int node = 0; node < 2; ++node) {
      StoreConfig c = clean;
      c.node_id = node;
      c.node_root = cfg.node_root_of(node);
      VersionStore s(c);
      group_max = std::max(group_max, s.latest_version("cp", StoreTier::kNodeLocal));
    }
    const std::uint64_t next = group_max + 1;
    stage_both(clean, next, 4);
    reopened.finish_version("cp", next, StoreTier::kNodeLocal);
    auto r2 = reopened.load_latest("cp", {"a.rank-0", "a.rank-1"});
    REQUIRE(r2.has_value());
    CHECK(r2->version == next);
    CHECK(read_file_bytes(r2->files.at("a.rank-0")) ==
          blob({4, 0, static_cast<int>(next)}));
  }
}
