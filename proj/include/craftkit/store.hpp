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

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace craftkit {

// Versioned checkpoint persistence.
//
// Published layout, per tier root:
//
//   <root>/<checkpoint-name>/v-<k>/<key>             (global tier: one shared
//                                                     file of per-rank segments)
//   <root>/<checkpoint-name>/v-<k>/<key>.rank-<r>    (node tier: per-rank files)
//   <root>/<checkpoint-name>/Metadata
//
// Metadata is plain text: `latest=<k>`, `retention=<r>`, then one
// `manifest v-<k> <file> <crc32-hex> <size>` line per published file.
// Publication is crash-atomic: files are staged under v-<k>.tmp, renamed into
// place, and the Metadata rewrite (write-temp + rename) is the commit point.

enum class StoreTier { kGlobal, kNodeLocal };

enum class NodeScheme { kLocal, kPartner, kPartnerXor };

const char* to_string(StoreTier t);
const char* to_string(NodeScheme s);

// Node topology used by the node-local tier's redundancy schemes. The partner
// map is a ring; by default all nodes form a single XOR group.
struct NodeLayout {
  int num_nodes = 1;
  std::vector<std::vector<int>> xor_groups;

  int partner_of(int node) const { return (node + 1) % num_nodes; }

  std::vector<int> xor_group_of(int node) const {
    for (const auto& g : xor_groups) {
      for (int n : g) {
        if (n == node) return g;
      }
    }
    std::vector<int> all(static_cast<std::size_t>(num_nodes));
    for (int i = 0; i < num_nodes; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
};

// Crash-injection hooks for the fault harness. `at` is called at every
// mutating step of a publication with a label and the affected path; a hook
// may throw to model a process killed at that exact point (after optionally
// truncating the file to model a partial write).
struct IoHooks {
  virtual ~IoHooks() = default;
  virtual void at(const char* point, const std::string& path) = 0;
};

struct StoreConfig {
  std::string global_root = ".";
  // Node-local tier. Empty node_root disables the tier for this process.
  std::string node_root;
  int node_id = 0;
  NodeLayout layout;
  // Maps node id -> that node's storage root. Required for PARTNER and
  // PARTNER_XOR replication and for cross-node recovery.
  std::function<std::string(int)> node_root_of;
  NodeScheme scheme = NodeScheme::kLocal;
  int retention = 2;
  IoHooks* hooks = nullptr;  // not owned
  // Artificial per-file write latency, for overhead benchmarks.
  int write_delay_ms_global = 0;
  int write_delay_ms_node = 0;
};

struct StoreMetadata {
  std::string name;
  std::uint64_t latest_version = 0;  // 0 = no valid version
  int retention = 2;
  // filename -> (crc32, size), keyed per version.
  std::map<std::uint64_t, std::map<std::string, std::pair<std::uint32_t, std::uint64_t>>> manifest;
};

// A version resolved for reading. Every file listed has been checksum
// verified; reconstructed files point into a scratch directory.
struct ResolvedVersion {
  std::uint64_t version = 0;
  StoreTier tier = StoreTier::kGlobal;
  std::map<std::string, std::string> files;  // plain file name -> readable path
};

// XOR single-erasure parity over padded member payloads.
std::vector<std::uint8_t> build_xor_parity(
    const std::vector<std::vector<std::uint8_t>>& members);
std::vector<std::uint8_t> reconstruct_xor(
    const std::vector<std::vector<std::uint8_t>>& survivors,
    std::span<const std::uint8_t> parity, std::size_t missing_length);

class VersionStore {
 public:
  explicit VersionStore(StoreConfig cfg);

  const StoreConfig& config() const { return cfg_; }

  // Creates the checkpoint directory if needed and garbage-collects staging
  // leftovers and version directories that are not reachable through the
  // metadata. Returns current metadata for the tier.
  StoreMetadata open(const std::string& name, StoreTier tier);

  std::uint64_t latest_version(const std::string& name, StoreTier tier);

  // --- staged publication ------------------------------------------------
  // All ranks write their files into the staging directory; after the
  // caller's coordination point a single rank runs finish_version, which
  // assembles shared files, replicates per the scheme, and atomically
  // publishes the version.

  // Returns the staging directory, creating it if needed.
  std::string begin_version(const std::string& name, std::uint64_t version, StoreTier tier);

  // Wraps one staged file write with fault hooks, artificial latency and
  // fsync. `writer` receives the final staging path.
  void write_staged(const std::string& name, std::uint64_t version, StoreTier tier,
                    const std::string& filename,
                    const std::function<void(const std::string&)>& writer);

  StoreMetadata finish_version(const std::string& name, std::uint64_t version, StoreTier tier);

  // Convenience used by tests: publishes byte blobs as rank files in one call.
  // Pass rank = -1 for a file without a rank suffix.
  struct FileData {
    int rank;
    std::string key;
    std::vector<std::uint8_t> bytes;
  };
  StoreMetadata publish_version(const std::string& name, std::uint64_t version,
                                const std::vector<FileData>& files, StoreTier tier);

  // Marks every tier's metadata for `name` as holding no valid version.
  // Files are retained. Idempotent.
  StoreMetadata invalidate(const std::string& name);

  // --- reading -----------------------------------------------------------

  // Finds the newest version, across tiers, for which every file in `needed`
  // resolves with a valid checksum; node tier wins ties. Node-tier resolution
  // falls back to partner copies and XOR reconstruction for lost nodes.
  std::optional<ResolvedVersion> load_latest(const std::string& name,
                                             const std::vector<std::string>& needed);
  std::optional<ResolvedVersion> load_version(const std::string& name, StoreTier tier,
                                              std::uint64_t version,
                                              const std::vector<std::string>& needed);
  // Resolves `version` from whichever tier holds it, node tier first.
  std::optional<ResolvedVersion> load_version_any_tier(const std::string& name,
                                                       std::uint64_t version,
                                                       const std::vector<std::string>& needed);
  // Versions fully resolvable right now, newest first. Restart coordination
  // intersects these lists across ranks.
  std::vector<std::uint64_t> resolvable_versions(const std::string& name,
                                                 const std::vector<std::string>& needed);

  // Node-tier file name for an entry key; the global tier uses the bare key.
  static std::string rank_file_name(const std::string& key, int rank);

  // Assembles the global tier's shared per-key file out of the staged
  // `<key>.part-<r>` segment files. Exposed for tests.
  static void assemble_shared_file(const std::string& dir, const std::string& key,
                                   const std::vector<int>& ranks);
  static std::vector<std::uint8_t> extract_shared_segment(const std::string& path, int rank);

 private:
  std::string tier_root(StoreTier tier, int node = -1) const;
  std::string cp_dir(const std::string& name, StoreTier tier, int node = -1) const;
  std::string version_dir(const std::string& name, std::uint64_t version, StoreTier tier,
                          int node = -1) const;
  std::string metadata_path(const std::string& name, StoreTier tier, int node = -1) const;

  StoreMetadata read_metadata_file(const std::string& path, const std::string& name) const;
  void write_metadata_file(const std::string& path, const StoreMetadata& md) const;

  void hook(const char* point, const std::string& path) const;
  void gc(const std::string& name, StoreTier tier, int node = -1);
  std::vector<std::uint64_t> candidate_versions(const std::string& name);

  void finish_global(const std::string& name, std::uint64_t version);
  void finish_node(const std::string& name, std::uint64_t version);
  void finish_one_root(const std::string& name, std::uint64_t version, StoreTier tier, int node);
  void replicate_partner(const std::string& name, std::uint64_t version, int node);
  void write_xor_parity(const std::string& name, std::uint64_t version,
                        const std::vector<int>& group);

  std::optional<ResolvedVersion> resolve_node_version(const std::string& name,
                                                      std::uint64_t version,
                                                      const std::vector<std::string>& needed);

  StoreConfig cfg_;
};

}  // namespace craftkit
