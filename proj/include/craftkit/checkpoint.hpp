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

#include <complex>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "craftkit/async_writer.hpp"
#include "craftkit/checkpointable.hpp"
#include "craftkit/comm.hpp"
#include "craftkit/env.hpp"
#include "craftkit/store.hpp"

namespace craftkit {

struct WriteDecision {
  bool should_write = false;
  std::uint64_t version = 0;  // version written, or the next candidate when skipped
};

// Construction knobs; by default everything comes from the CRAFT_*
// environment, captured once at creation.
struct CheckpointOptions {
  std::optional<EnvConfig> env;
  std::optional<NodeStoreEnv> node_store;  // overrides the comm's runtime info
  IoHooks* hooks = nullptr;
  int retention = 2;
  int write_delay_ms_global = 0;
  int write_delay_ms_node = 0;
};

// A named, committed collection of checkpointable entries bound to a process
// group. Typical use:
//
//   Checkpoint cp("myCP", comm);
//   cp.add("iteration", &iteration);
//   cp.add("data", data.data(), data.size());
//   cp.commit();
//   cp.restartIfNeeded();
//   for (; iteration <= n; ++iteration) {
//     ...
//     cp.updateAndWrite(iteration, cpFreq);
//   }
class Checkpoint {
 public:
  Checkpoint(std::string name, CpComm& comm, const CheckpointOptions& options = {});
  ~Checkpoint();

  Checkpoint(const Checkpoint&) = delete;
  Checkpoint& operator=(const Checkpoint&) = delete;

  // --- registration -------------------------------------------------------

  template <typename T>
  void add(const std::string& key, T* scalar) {
    add_entry(key, std::make_shared<ScalarEntry<T>>(scalar, async_mode_));
  }

  template <typename T>
  void add(const std::string& key, T* array, std::size_t n) {
    add_entry(key, std::make_shared<ArrayEntry<T>>(array, n, async_mode_));
  }

  template <typename T>
  void add(const std::string& key, T** rows, std::size_t n, std::size_t m,
           std::int64_t to_cp_col) {
    add_entry(key, std::make_shared<MultiArrayEntry<T>>(rows, n, m, to_cp_col, async_mode_));
  }

  void add(const std::string& key, PackedBufferEntry::PackFn pack,
           PackedBufferEntry::UnpackFn unpack, std::size_t packed_size) {
    add_entry(key, std::make_shared<PackedBufferEntry>(std::move(pack), std::move(unpack),
                                                       packed_size, async_mode_));
  }

  void add(const std::string& key, std::shared_ptr<Checkpointable> entry) {
    add_entry(key, std::move(entry));
  }

  void commit();
  bool committed() const { return committed_; }

  // Opt this checkpoint out of the node-local tier. In a nested pair only
  // one checkpoint may keep it.
  void disableSCR();
  bool scr_enabled() const { return scr_enabled_; }

  // Declares `child` as nested under this checkpoint: every successful write
  // of this checkpoint invalidates the child's stored versions.
  void register_child(Checkpoint& child);

  // --- the checkpoint cycle ------------------------------------------------

  // Writes a new version when the frequency gate passes. The two-argument
  // form writes only when iteration is a multiple of cpFreq; the bare form
  // writes every call. In async modes the data is handed to the background
  // writer and the call returns immediately after update()/handoff.
  WriteDecision updateAndWrite();
  WriteDecision updateAndWrite(long iteration, long cp_freq);

 private:
  WriteDecision write_impl(std::optional<long> iteration, std::optional<long> cp_freq);

 public:

  // Restores the latest valid version on the first call of a (re)started
  // run. Subsequent calls within the same run return false without reading.
  bool restartIfNeeded();

  // Blocks until any in-flight background write has completed and its
  // version is published. Surfaces background write failures.
  void wait();

  // --- observers -----------------------------------------------------------

  const std::string& name() const { return name_; }
  std::size_t entry_count() const { return entries_.size(); }
  // Run-local version counter: 0 until this run first restores or writes.
  std::uint64_t version_counter() const { return run_version_; }
  // Latest version recorded on storage, 0 when none.
  std::uint64_t latest_stored_version();
  AsyncMode async_mode() const { return async_mode_; }

 private:
  struct Entry {
    std::string key;
    std::shared_ptr<Checkpointable> payload;
  };

  void add_entry(const std::string& key, std::shared_ptr<Checkpointable> entry);
  StoreTier active_tier() const;
  std::uint64_t next_group_version(StoreTier tier);
  std::string entry_file_name(const std::string& key, StoreTier tier) const;
  std::vector<std::string> needed_files() const;
  void stage_all(std::uint64_t version, StoreTier tier);
  void collective_finish(std::uint64_t version, StoreTier tier);
  void complete_pending_publish();
  void invalidate_descendants();
  bool creates_cycle(const Checkpoint* candidate) const;

  std::string name_;
  CpComm* comm_;
  EnvConfig env_;
  AsyncMode async_mode_;
  bool scr_enabled_ = true;
  bool committed_ = false;
  bool node_tier_opened_ = false;
  std::uint64_t run_version_ = 0;
  std::vector<Entry> entries_;
  std::vector<Checkpoint*> children_;
  std::unique_ptr<VersionStore> store_;
  std::unique_ptr<AsyncWriter> writer_;

  struct PendingPublish {
    std::uint64_t version = 0;
    StoreTier tier = StoreTier::kGlobal;
    JobHandle handle;
  };
  std::optional<PendingPublish> pending_;

  std::string registry_key_;
};

}  // namespace craftkit
