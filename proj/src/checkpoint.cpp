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

#include "craftkit/checkpoint.hpp"

#include <algorithm>
#include <mutex>
#include <set>

#include "craftkit/errors.hpp"

namespace craftkit {

namespace {

// One live Checkpoint per (base path, name, rank); a second object with the
// same coordinates is almost certainly a bug in the application.
std::mutex g_registry_mu;
std::set<std::string> g_registry;

bool valid_component(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  if (s.find('/') != std::string::npos || s.find('\\') != std::string::npos) return false;
  if (s.find('\0') != std::string::npos) return false;
  return true;
}

bool valid_key(const std::string& s) {
  if (!valid_component(s)) return false;
  // Reserved suffixes used by the store's file naming.
  if (s.find(".rank-") != std::string::npos) return false;
  if (s.find(".part-") != std::string::npos) return false;
  if (s == "Metadata" || s == "Manifest") return false;
  return true;
}

}  // namespace

Checkpoint::Checkpoint(std::string name, CpComm& comm, const CheckpointOptions& options)
    : name_(std::move(name)), comm_(&comm) {
  if (!valid_component(name_)) {
    throw ConfigError("checkpoint name is not a valid directory name: '" + name_ + "'");
  }
  env_ = options.env ? *options.env : EnvConfig::from_environment();
  async_mode_ = env_.async_mode();

  StoreConfig scfg;
  scfg.global_root = env_.cp_path;
  scfg.retention = options.retention;
  scfg.hooks = options.hooks;
  scfg.write_delay_ms_global = options.write_delay_ms_global;
  scfg.write_delay_ms_node = options.write_delay_ms_node;

  std::optional<NodeStoreEnv> node = options.node_store ? options.node_store : comm_->node_store();
  if (node && env_.use_scr) {
    scfg.node_root = node->node_root;
    scfg.node_id = node->node_id;
    scfg.layout = node->layout;
    scfg.node_root_of = node->node_root_of;
    scfg.scheme = node->scheme;
  } else {
    scr_enabled_ = false;
  }

  registry_key_ = scfg.global_root + "\x1f" + name_ + "\x1f" + std::to_string(comm_->rank());
  {
    std::lock_guard<std::mutex> lk(g_registry_mu);
    if (!g_registry.insert(registry_key_).second) {
      throw ConfigError("a checkpoint named '" + name_ + "' already exists under this path");
    }
  }

  if (env_.enable) {
    try {
      store_ = std::make_unique<VersionStore>(scfg);
      store_->open(name_, StoreTier::kGlobal);
      // The node tier is opened at first use: disableSCR() may still opt
      // this checkpoint out of it.
    } catch (...) {
      std::lock_guard<std::mutex> lk(g_registry_mu);
      g_registry.erase(registry_key_);
      throw;
    }
  }
}

Checkpoint::~Checkpoint() {
  if (pending_) {
    // No collective work in a destructor; the staged data is just abandoned
    // and garbage-collected later. Publication requires wait().
    pending_->handle.await();
  }
  std::lock_guard<std::mutex> lk(g_registry_mu);
  g_registry.erase(registry_key_);
}

void Checkpoint::add_entry(const std::string& key, std::shared_ptr<Checkpointable> entry) {
  if (committed_) {
    throw ConfigError("checkpoint '" + name_ + "' is committed; no data can be added");
  }
  if (!valid_key(key)) {
    throw ConfigError("entry key is not a valid file name stem: '" + key + "'");
  }
  for (const auto& e : entries_) {
    if (e.key == key) throw ConfigError("duplicate entry key '" + key + "'");
  }
  entries_.push_back({key, std::move(entry)});
}

void Checkpoint::commit() {
  if (committed_) return;
  if (entries_.empty()) {
    throw ConfigError("checkpoint '" + name_ + "' has no entries; nothing to restore");
  }
  if (async_mode_ == AsyncMode::kAsyncCopy) {
    for (const auto& e : entries_) {
      if (!e.payload->has_shadow()) {
        throw ConfigError("entry '" + e.key +
                          "' provides no update() snapshot, required for async-copy writes");
      }
    }
  }
  committed_ = true;
}

void Checkpoint::disableSCR() {
  if (committed_) throw ConfigError("disableSCR must be called before commit");
  scr_enabled_ = false;
}

bool Checkpoint::creates_cycle(const Checkpoint* candidate) const {
  if (candidate == this) return true;
  for (const Checkpoint* c : candidate->children_) {
    if (creates_cycle(c)) return true;
  }
  return false;
}

void Checkpoint::register_child(Checkpoint& child) {
  if (&child == this || creates_cycle(&child)) {
    throw ConfigError("nesting cycle: '" + child.name_ + "' under '" + name_ + "'");
  }
  if (std::find(children_.begin(), children_.end(), &child) != children_.end()) return;
  if (scr_enabled_ && child.scr_enabled_ && store_ && !store_->config().node_root.empty()) {
    throw ConfigError("only one checkpoint in a nested pair may use the node-local tier; "
                      "call disableSCR() on '" + name_ + "' or '" + child.name_ + "'");
  }
  children_.push_back(&child);
}

StoreTier Checkpoint::active_tier() const {
  if (scr_enabled_ && store_ && !store_->config().node_root.empty()) {
    return StoreTier::kNodeLocal;
  }
  return StoreTier::kGlobal;
}

std::uint64_t Checkpoint::next_group_version(StoreTier tier) {
  const std::uint64_t local = store_->latest_version(name_, tier);
  if (tier == StoreTier::kGlobal || comm_->size() == 1) {
    // One shared metadata file: every rank reads the same number.
    return local + 1;
  }
  // Node roots can disagree after a publication torn across nodes; the
  // group continues from the furthest root.
  const std::uint64_t group_max = ~comm_->allreduce_min(~local);
  return group_max + 1;
}

std::string Checkpoint::entry_file_name(const std::string& key, StoreTier tier) const {
  if (tier == StoreTier::kGlobal) {
    return key + ".part-" + std::to_string(comm_->rank());
  }
  return VersionStore::rank_file_name(key, comm_->rank());
}

std::vector<std::string> Checkpoint::needed_files() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) {
    names.push_back(VersionStore::rank_file_name(e.key, comm_->rank()));
  }
  return names;
}

void Checkpoint::stage_all(std::uint64_t version, StoreTier tier) {
  store_->begin_version(name_, version, tier);
  for (const auto& e : entries_) {
    store_->write_staged(name_, version, tier, entry_file_name(e.key, tier),
                         [&](const std::string& path) { e.payload->write(path); });
  }
}

void Checkpoint::collective_finish(std::uint64_t version, StoreTier tier) {
  // All ranks have staged before anything becomes visible, and the version
  // plus child invalidation are visible everywhere before anyone proceeds.
  comm_->barrier();
  if (comm_->rank() == 0) {
    store_->finish_version(name_, version, tier);
    invalidate_descendants();
  }
  comm_->barrier();
}

void Checkpoint::invalidate_descendants() {
  for (Checkpoint* child : children_) {
    if (child->store_) child->store_->invalidate(child->name_);
    child->invalidate_descendants();
  }
}

void Checkpoint::complete_pending_publish() {
  if (!pending_) return;
  const JobResult r = pending_->handle.await();
  const std::uint64_t version = pending_->version;
  const StoreTier tier = pending_->tier;
  pending_.reset();
  if (r.state == JobState::kFailed) {
    throw StorageError("background checkpoint write of '" + name_ + "' failed: " + r.error);
  }
  collective_finish(version, tier);
}

WriteDecision Checkpoint::updateAndWrite() { return write_impl(std::nullopt, std::nullopt); }

WriteDecision Checkpoint::updateAndWrite(long iteration, long cp_freq) {
  return write_impl(iteration, cp_freq);
}

WriteDecision Checkpoint::write_impl(std::optional<long> iteration, std::optional<long> cp_freq) {
  if (!committed_) {
    throw ConfigError("checkpoint '" + name_ + "' must be committed before updateAndWrite");
  }
  if (cp_freq && *cp_freq < 1) {
    throw ConfigError("cpFreq must be >= 1, got " + std::to_string(*cp_freq));
  }
  if (!env_.enable) return {false, 0};

  const StoreTier tier = active_tier();
  if (tier == StoreTier::kNodeLocal && !node_tier_opened_) {
    store_->open(name_, StoreTier::kNodeLocal);
    node_tier_opened_ = true;
  }
  if (cp_freq && *iteration % *cp_freq != 0) {
    // Skipped iteration: leave any background write running so it overlaps
    // the whole checkpoint interval.
    const std::uint64_t next =
        pending_ ? pending_->version + 1 : store_->latest_version(name_, tier) + 1;
    return {false, next};
  }

  // Finish the previous asynchronous version first; versions appear in
  // submission order with no gaps.
  complete_pending_publish();
  const std::uint64_t version = next_group_version(tier);

  for (const auto& e : entries_) e.payload->update();

  if (async_mode_ == AsyncMode::kSync) {
    stage_all(version, tier);
    collective_finish(version, tier);
    run_version_ += 1;
    return {true, version};
  }

  if (!writer_) writer_ = std::make_unique<AsyncWriter>();
  JobHandle handle = writer_->submit([this, version, tier] { stage_all(version, tier); });
  pending_ = PendingPublish{version, tier, std::move(handle)};
  run_version_ += 1;
  return {true, version};
}

bool Checkpoint::restartIfNeeded() {
  if (!committed_) {
    throw ConfigError("checkpoint '" + name_ + "' must be committed before restartIfNeeded");
  }
  if (!env_.enable || !env_.read_cp_on_restart) return false;
  // A non-zero run-local version means this is a repeated inner-loop entry
  // within a live run; only the first entry of a (re)started run reads.
  if (run_version_ != 0) return false;

  // All ranks must restore the very same version even when their storage
  // disagrees (a lost node may leave some ranks one version behind). Settle
  // on the newest version every rank can fully resolve.
  std::vector<std::uint64_t> candidates = store_->resolvable_versions(name_, needed_files());
  std::optional<ResolvedVersion> resolved;
  for (;;) {
    const std::uint64_t my_top = candidates.empty() ? 0 : candidates.front();
    const std::uint64_t version = comm_->allreduce_min(my_top);
    if (version == 0) return false;
    const bool mine = std::find(candidates.begin(), candidates.end(), version) !=
                      candidates.end();
    const bool everyone = comm_->allreduce_and(mine ? 1 : 0) != 0;
    if (everyone) {
      resolved = store_->load_version_any_tier(name_, version, needed_files());
      if (!resolved) {
        throw StorageError("checkpoint '" + name_ + "' version " + std::to_string(version) +
                           " vanished between validation and read");
      }
      break;
    }
    // Someone cannot serve this version; nothing at or above it is usable.
    candidates.erase(std::remove_if(candidates.begin(), candidates.end(),
                                    [version](std::uint64_t v) { return v >= version; }),
                     candidates.end());
  }

  for (const auto& e : entries_) {
    e.payload->read(resolved->files.at(VersionStore::rank_file_name(e.key, comm_->rank())));
  }
  run_version_ = resolved->version;
  return true;
}

void Checkpoint::wait() {
  complete_pending_publish();
}

std::uint64_t Checkpoint::latest_stored_version() {
  if (!store_) return 0;
  std::uint64_t latest = store_->latest_version(name_, StoreTier::kGlobal);
  if (!store_->config().node_root.empty()) {
    latest = std::max(latest, store_->latest_version(name_, StoreTier::kNodeLocal));
  }
  return latest;
}

}  // namespace craftkit
