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
#include <map>
#include <mutex>

#include "craftkit/aft_zone.hpp"
#include "craftkit/checkpoint.hpp"
#include "craftkit/sim_cluster.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace craftkit;
using craftkit::testing::TempDir;

namespace {

NodeStoreEnv one_node_store(const TempDir& tmp) {
  NodeStoreEnv env;
  env.node_id = 0;
  env.layout.num_nodes = 1;
  const std::string base = tmp.path();
  env.node_root_of = [base](int n) {
    auto p = fs::path(base) / ("node-" + std::to_string(n));
    fs::create_directories(p);
    return p.string();
  };
  env.node_root = env.node_root_of(0);
  env.scheme = NodeScheme::kLocal;
  return env;
}

CheckpointOptions tier_opts(const TempDir& tmp, bool with_node_tier) {
  CheckpointOptions o;
  EnvConfig env;
  env.cp_path = (fs::path(tmp.path()) / "global").string();
  fs::create_directories(env.cp_path);
  o.env = env;
  if (with_node_tier) o.node_store = one_node_store(tmp);
  return o;
}

// One deterministic program: returns its state after a fresh run plus a
// restart, so runs against different tiers can be compared.
std::pair<long, std::vector<double>> run_program(const TempDir& tmp, bool with_node_tier) {
  long iter = 0;
  std::vector<double> data(16, 0.0);
  {
    SingleProcessComm comm;
    Checkpoint cp("prog", comm, tier_opts(tmp, with_node_tier));
    cp.add("iter", &iter);
    cp.add("data", data.data(), data.size());
    cp.commit();
    for (iter = 1; iter <= 25; ++iter) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] += iter * (0.5 + i);
      cp.updateAndWrite(iter, 10);
    }
  }
  iter = 0;
  std::fill(data.begin(), data.end(), 0.0);
  SingleProcessComm comm;
  Checkpoint cp("prog", comm, tier_opts(tmp, with_node_tier));
  cp.add("iter", &iter);
  cp.add("data", data.data(), data.size());
  cp.commit();
  REQUIRE(cp.restartIfNeeded());
  return {iter, data};
}

}  // namespace

TEST_CASE("a restore from the node tier equals a restore from the global tier") {
  TempDir node_run, global_run;
  const auto from_node = run_program(node_run, true);
  const auto from_global = run_program(global_run, false);
  CHECK(from_node.first == from_global.first);
  CHECK(from_node.second == from_global.second);
  // The tiered run really used node-local storage, the other one really did not.
  CHECK(fs::exists(fs::path(node_run.path()) / "node-0" / "prog" / "v-2"));
  CHECK_FALSE(fs::exists(fs::path(global_run.path()) / "node-0"));
  CHECK_FALSE(fs::exists(fs::path(node_run.path()) / "global" / "prog" / "v-1"));
}

TEST_CASE("disableSCR routes a checkpoint to the global tier only") {
  TempDir tmp;
  SingleProcessComm comm;
  Checkpoint cp("offnode", comm, tier_opts(tmp, true));
  long v = 3;
  cp.add("v", &v);
  cp.disableSCR();
  cp.commit();
  cp.updateAndWrite();
  CHECK(fs::exists(fs::path(tmp.path()) / "global" / "offnode" / "v-1"));
  CHECK_FALSE(fs::exists(fs::path(tmp.path()) / "node-0" / "offnode"));
}

TEST_CASE("disableSCR after commit is rejected") {
  TempDir tmp;
  SingleProcessComm comm;
  Checkpoint cp("late", comm, tier_opts(tmp, true));
  long v = 0;
  cp.add("v", &v);
  cp.commit();
  CHECK_THROWS_AS(cp.disableSCR(), ConfigError);
}

TEST_CASE("only one checkpoint of a nested pair may keep the node tier") {
  TempDir tmp;
  SingleProcessComm comm;
  Checkpoint parent("P", comm, tier_opts(tmp, true));
  Checkpoint child("C", comm, tier_opts(tmp, true));
  CHECK_THROWS_AS(parent.register_child(child), ConfigError);
  parent.disableSCR();
  parent.register_child(child);  // accepted once the parent opts out
  CHECK(parent.scr_enabled() == false);
  CHECK(child.scr_enabled() == true);
}

TEST_CASE("CRAFT_USE_SCR=0 disables the node tier globally") {
  TempDir tmp;
  auto o = tier_opts(tmp, true);
  o.env->use_scr = false;
  SingleProcessComm comm;
  Checkpoint cp("noscr", comm, o);
  long v = 1;
  cp.add("v", &v);
  cp.commit();
  CHECK_FALSE(cp.scr_enabled());
  cp.updateAndWrite();
  CHECK(fs::exists(fs::path(tmp.path()) / "global" / "noscr" / "v-1"));
  CHECK_FALSE(fs::exists(fs::path(tmp.path()) / "node-0" / "noscr"));
}

TEST_CASE("environment is captured at creation; later changes have no effect") {
  TempDir tmp;
  ::setenv("CRAFT_CP_PATH", (fs::path(tmp.path()) / "first").string().c_str(), 1);
  ::setenv("CRAFT_ENABLE", "1", 1);
  fs::create_directories(fs::path(tmp.path()) / "first");
  SingleProcessComm comm;
  Checkpoint cp("envcp", comm);  // snapshot taken here
  ::setenv("CRAFT_CP_PATH", (fs::path(tmp.path()) / "second").string().c_str(), 1);
  ::setenv("CRAFT_ENABLE", "0", 1);
  long v = 9;
  cp.add("v", &v);
  cp.commit();
  CHECK(cp.updateAndWrite().should_write);  // still enabled, still under "first"
  CHECK(fs::exists(fs::path(tmp.path()) / "first" / "envcp" / "v-1"));
  CHECK_FALSE(fs::exists(fs::path(tmp.path()) / "second"));
  ::unsetenv("CRAFT_CP_PATH");
  ::unsetenv("CRAFT_ENABLE");
}

TEST_CASE("an unusable base path surfaces as a storage error") {
  TempDir tmp;
  const std::string file_not_dir = tmp.path() + "/plainfile";
  { std::ofstream f(file_not_dir); f << "x"; }
  CheckpointOptions o;
  EnvConfig env;
  env.cp_path = file_not_dir;  // a file where a directory is required
  o.env = env;
  SingleProcessComm comm;
  CHECK_THROWS_AS(Checkpoint("cp", comm, o), StorageError);
}

TEST_CASE("ranks with diverged storage settle on one common restart version") {
  // Two nodes, one rank each, node-local LOCAL scheme. After two versions,
  // node 1 loses its newest one; both ranks must restore version 1.
  TempDir tmp;
  const std::string store_base = tmp.sub("nodes");
  const std::string global = tmp.sub("global");

  auto entry = [&](bool populate, std::map<int, long>* restored) {
    return [&, populate, restored](SimTransport& t) {
      run_aft_zone(t, {}, [&](ProcessGroup& g) {
        CheckpointOptions o;
        EnvConfig env;
        env.cp_path = global;
        o.env = env;
        Checkpoint cp("div", g, o);
        long iter = 0;
        cp.add("iter", &iter);
        cp.commit();
        const bool r = cp.restartIfNeeded();
        if (populate) {
          for (iter = 1; iter <= 2; ++iter) cp.updateAndWrite(iter, 1);
        } else if (restored != nullptr) {
          static std::mutex mu;
          std::lock_guard<std::mutex> lk(mu);
          (*restored)[g.rank()] = r ? iter : -1;
        }
      });
    };
  };

  {
    SimCluster sim({2, 1, 0, 3}, store_base);
    sim.run(entry(true, nullptr));
  }
  // Node 1 loses v-2; its rank can only serve v-1 now.
  fs::remove_all(fs::path(store_base) / "node-1" / "div" / "v-2");

  std::map<int, long> restored;
  SimCluster sim({2, 1, 0, 3}, store_base);
  sim.run(entry(false, &restored));
  REQUIRE(restored.size() == 2);
  CHECK(restored.at(0) == 1);  // not 2, although rank 0 still holds v-2
  CHECK(restored.at(1) == 1);
}

namespace {

// Zone body shared by the node-tier recovery scenarios: a checkpointed
// counter loop over node-local storage with a node killed mid-run.
struct NodeTierScenario {
  NodeScheme scheme = NodeScheme::kLocal;
  SpawnPolicy spawn = SpawnPolicy::kReuse;
  bool wipe_failed_root = false;  // model real hardware loss
  long restored_iter = -2;        // filled by the post-failure pass
};

void run_node_tier_scenario(const TempDir& tmp, NodeTierScenario& sc) {
  const std::string store_base = tmp.sub("nodes");
  const std::string global = tmp.sub("global");
  SimCluster sim({3, 2, 1, 77}, store_base);
  sim.set_node_scheme(sc.scheme);
  RecoveryConfig cfg;
  cfg.policy = RecoveryPolicy::kNonShrinking;
  cfg.spawn = sc.spawn;
  std::atomic<bool> fired{false};
  std::mutex mu;
  sim.run([&](SimTransport& t) {
    run_aft_zone(t, cfg, [&](ProcessGroup& g) {
      CheckpointOptions o;
      EnvConfig env;
      env.cp_path = global;
      o.env = env;
      Checkpoint cp("ntier", g, o);
      long iter = 0;
      cp.add("iter", &iter);
      cp.commit();
      const bool restored = cp.restartIfNeeded();
      if (restored) {
        std::lock_guard<std::mutex> lk(mu);
        sc.restored_iter = std::max(sc.restored_iter, iter);
      }
      while (iter < 20) {
        ++iter;
        cp.updateAndWrite(iter, 5);
        if (t.node_of(t.self()) == 0 && iter == 12 && !fired.exchange(true)) {
          t.inject_failure({true, 1});
          if (sc.wipe_failed_root) {
            std::filesystem::remove_all(sim.node_root(1));
          }
        }
        g.barrier();
      }
    });
  });
}

}  // namespace

TEST_CASE("reuse replacements restore from the surviving node-local storage") {
  TempDir tmp;
  NodeTierScenario sc;
  sc.scheme = NodeScheme::kLocal;
  sc.spawn = SpawnPolicy::kReuse;
  run_node_tier_scenario(tmp, sc);
  // Checkpoints went to the node tier only; the restore after the failure
  // read version 2 (iteration 10), which only the node roots hold.
  CHECK(sc.restored_iter == 10);
  CHECK(fs::exists(fs::path(tmp.path()) / "nodes" / "node-1" / "ntier"));
  CHECK_FALSE(fs::exists(fs::path(tmp.path()) / "global" / "ntier" / "v-1"));
}

TEST_CASE("partner copies restore a wiped node for replacements on a reserve node") {
  TempDir tmp;
  NodeTierScenario sc;
  sc.scheme = NodeScheme::kPartner;
  sc.spawn = SpawnPolicy::kNoReuse;
  sc.wipe_failed_root = true;
  run_node_tier_scenario(tmp, sc);
  CHECK(sc.restored_iter == 10);
}

TEST_CASE("a wiped node under the local scheme forces a uniform older restore") {
  // Without redundancy the wiped node's ranks can serve nothing; every rank,
  // survivors included, must agree on restoring nothing rather than split.
  TempDir tmp;
  NodeTierScenario sc;
  sc.scheme = NodeScheme::kLocal;
  sc.spawn = SpawnPolicy::kNoReuse;
  sc.wipe_failed_root = true;
  run_node_tier_scenario(tmp, sc);
  CHECK(sc.restored_iter == -2);  // nobody restored; the body redid all work
}
