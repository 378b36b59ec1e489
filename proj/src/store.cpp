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

#include "craftkit/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "craftkit/crc32.hpp"
#include "craftkit/errors.hpp"
#include "craftkit/serialization.hpp"

namespace fs = std::filesystem;

namespace craftkit {

namespace {

constexpr char kMetadataFile[] = "Metadata";
constexpr char kSharedMagic[4] = {'C', 'K', 'S', 'F'};

std::mutex& metadata_mutex(const std::string& path) {
  static std::mutex registry_mu;
  static std::unordered_map<std::string, std::mutex> registry;
  std::lock_guard<std::mutex> lk(registry_mu);
  return registry[path];
}

void fsync_path(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

void remove_tree_quiet(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
}

bool parse_version_dir(const std::string& stem, std::uint64_t& version) {
  if (stem.rfind("v-", 0) != 0) return false;
  const std::string num = stem.substr(2);
  if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) return false;
  version = std::stoull(num);
  return true;
}

std::string version_dir_name(std::uint64_t v) { return "v-" + std::to_string(v); }

std::string crc_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

void put_u16_le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

struct XorTable {
  struct FileRec {
    std::string name;
    std::uint64_t size = 0;
    std::uint32_t crc = 0;
  };
  std::vector<int> members;                 // nodes covered by the parity
  std::map<int, std::uint64_t> payload_len;
  std::map<int, std::vector<FileRec>> files;  // per member, concatenation order
};

std::optional<XorTable> read_xor_table(const fs::path& dir) {
  std::ifstream f(dir / "table");
  if (!f) return std::nullopt;
  XorTable t;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "member") {
      int n = 0;
      std::uint64_t len = 0;
      if (ls >> n >> len) {
        t.members.push_back(n);
        t.payload_len[n] = len;
      }
    } else if (tag == "file") {
      int n = 0;
      XorTable::FileRec rec;
      std::string crc;
      if (ls >> n >> rec.name >> rec.size >> crc) {
        rec.crc = static_cast<std::uint32_t>(std::stoul(crc, nullptr, 16));
        t.files[n].push_back(rec);
      }
    }
  }
  return t;
}

// Writes bytes to `path` atomically via a unique temp name, so concurrent
// producers of identical content cannot expose torn files.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp =
      path + ".w" + std::to_string(static_cast<unsigned long>(::getpid()));
  write_file_bytes(tmp, bytes);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StorageError("rename failed: " + path + ": " + ec.message());
}

}  // namespace

const char* to_string(StoreTier t) { return t == StoreTier::kGlobal ? "global" : "node-local"; }

const char* to_string(NodeScheme s) {
  switch (s) {
    case NodeScheme::kLocal: return "LOCAL";
    case NodeScheme::kPartner: return "PARTNER";
    case NodeScheme::kPartnerXor: return "PARTNER-XOR";
  }
  return "?";
}

std::vector<std::uint8_t> build_xor_parity(
    const std::vector<std::vector<std::uint8_t>>& members) {
  std::size_t maxlen = 0;
  for (const auto& m : members) maxlen = std::max(maxlen, m.size());
  std::vector<std::uint8_t> parity(maxlen, 0);
  for (const auto& m : members) {
    for (std::size_t i = 0; i < m.size(); ++i) parity[i] ^= m[i];
  }
  return parity;
}

std::vector<std::uint8_t> reconstruct_xor(
    const std::vector<std::vector<std::uint8_t>>& survivors,
    std::span<const std::uint8_t> parity, std::size_t missing_length) {
  if (missing_length > parity.size()) {
    throw CorruptionError("xor parity shorter than missing payload");
  }
  std::vector<std::uint8_t> out(parity.begin(), parity.end());
  for (const auto& s : survivors) {
    if (s.size() > out.size()) {
      throw CorruptionError("xor survivor payload longer than parity");
    }
    for (std::size_t i = 0; i < s.size(); ++i) out[i] ^= s[i];
  }
  out.resize(missing_length);
  return out;
}

VersionStore::VersionStore(StoreConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.retention < 1) throw ConfigError("store retention must be >= 1");
}

void VersionStore::hook(const char* point, const std::string& path) const {
  if (cfg_.hooks != nullptr) cfg_.hooks->at(point, path);
}

std::string VersionStore::tier_root(StoreTier tier, int node) const {
  if (tier == StoreTier::kGlobal) return cfg_.global_root;
  if (node < 0 || node == cfg_.node_id) {
    if (cfg_.node_root.empty()) throw StorageError("node-local tier not configured");
    return cfg_.node_root;
  }
  if (!cfg_.node_root_of) throw StorageError("no node root mapping configured");
  return cfg_.node_root_of(node);
}

std::string VersionStore::cp_dir(const std::string& name, StoreTier tier, int node) const {
  return (fs::path(tier_root(tier, node)) / name).string();
}

std::string VersionStore::version_dir(const std::string& name, std::uint64_t version,
                                      StoreTier tier, int node) const {
  return (fs::path(cp_dir(name, tier, node)) / version_dir_name(version)).string();
}

std::string VersionStore::metadata_path(const std::string& name, StoreTier tier, int node) const {
  return (fs::path(cp_dir(name, tier, node)) / kMetadataFile).string();
}

StoreMetadata VersionStore::read_metadata_file(const std::string& path,
                                               const std::string& name) const {
  StoreMetadata md;
  md.name = name;
  md.retention = cfg_.retention;
  std::ifstream f(path);
  if (!f) return md;
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("latest=", 0) == 0) {
      md.latest_version = std::stoull(line.substr(7));
    } else if (line.rfind("retention=", 0) == 0) {
      md.retention = std::stoi(line.substr(10));
    } else if (line.rfind("manifest ", 0) == 0) {
      std::istringstream ls(line.substr(9));
      std::string vdir, fname, crc;
      std::uint64_t size = 0;
      if (!(ls >> vdir >> fname >> crc >> size)) continue;
      std::uint64_t v = 0;
      if (!parse_version_dir(vdir, v)) continue;
      md.manifest[v][fname] = {static_cast<std::uint32_t>(std::stoul(crc, nullptr, 16)), size};
    }
  }
  return md;
}

void VersionStore::write_metadata_file(const std::string& path, const StoreMetadata& md) const {
  std::ostringstream out;
  out << "latest=" << md.latest_version << "\n";
  out << "retention=" << md.retention << "\n";
  for (const auto& [v, files] : md.manifest) {
    for (const auto& [fname, cs] : files) {
      out << "manifest " << version_dir_name(v) << " " << fname << " " << crc_hex(cs.first)
          << " " << cs.second << "\n";
    }
  }
  const std::string tmp = path + ".mtmp";
  const std::string text = out.str();
  hook("pre-metadata-write", tmp);
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw StorageError("cannot write metadata: " + tmp);
    f << text;
    f.flush();
    if (!f) throw StorageError("metadata write failed: " + tmp);
  }
  hook("post-metadata-write", tmp);
  fsync_path(tmp);
  hook("pre-metadata-rename", path);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StorageError("metadata rename failed: " + path + ": " + ec.message());
  hook("post-metadata-rename", path);
  fsync_path(fs::path(path).parent_path().string());
}

StoreMetadata VersionStore::open(const std::string& name, StoreTier tier) {
  const std::string dir = cp_dir(name, tier);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StorageError("cannot create checkpoint directory " + dir + ": " + ec.message());
  gc(name, tier);
  return read_metadata_file(metadata_path(name, tier), name);
}

void VersionStore::gc(const std::string& name, StoreTier tier, int node) {
  const std::string dir = cp_dir(name, tier, node);
  std::error_code iter_ec;
  if (!fs::exists(dir)) return;
  const StoreMetadata md = read_metadata_file(metadata_path(name, tier, node), name);
  for (const auto& e : fs::directory_iterator(dir, iter_ec)) {
    const std::string stem = e.path().filename().string();
    if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, ".tmp") == 0) {
      remove_tree_quiet(e.path());
      continue;
    }
    if (stem.find(".mtmp") != std::string::npos || stem.find(".w") != std::string::npos) {
      // leftover atomic-write temporaries
      std::error_code rec;
      if (fs::is_regular_file(e.path(), rec)) fs::remove(e.path(), rec);
      continue;
    }
    std::uint64_t v = 0;
    if (parse_version_dir(stem, v) && md.manifest.find(v) == md.manifest.end()) {
      remove_tree_quiet(e.path());
    }
  }
  if (tier == StoreTier::kGlobal) {
    // Scratch space holds extracted segments and reconstructed files, keyed
    // by version; trim entries that fell out of the retention window.
    const fs::path scratch = fs::path(dir) / ".scratch";
    if (fs::exists(scratch)) {
      for (const auto& e : fs::directory_iterator(scratch, iter_ec)) {
        const std::string stem = e.path().filename().string();
        const auto dash = stem.rfind("v-");
        std::uint64_t v = 0;
        if (dash != std::string::npos && parse_version_dir(stem.substr(dash), v) &&
            v + static_cast<std::uint64_t>(cfg_.retention) <= md.latest_version) {
          remove_tree_quiet(e.path());
        }
      }
    }
  }
}

std::uint64_t VersionStore::latest_version(const std::string& name, StoreTier tier) {
  return read_metadata_file(metadata_path(name, tier), name).latest_version;
}

std::string VersionStore::begin_version(const std::string& name, std::uint64_t version,
                                        StoreTier tier) {
  const StoreMetadata md = read_metadata_file(metadata_path(name, tier), name);
  // The global tier has one metadata file, so numbering is strictly
  // sequential. A node root may lag behind its peers when a publication was
  // torn mid-way across nodes; it accepts any forward jump.
  const bool ok = tier == StoreTier::kGlobal ? version == md.latest_version + 1
                                             : version > md.latest_version;
  if (!ok) {
    throw ConfigError("publish version " + std::to_string(version) + " out of order, latest is " +
                      std::to_string(md.latest_version));
  }
  const std::string staging = version_dir(name, version, tier) + ".tmp";
  std::error_code ec;
  fs::create_directories(staging, ec);
  if (ec) throw StorageError("cannot create staging " + staging + ": " + ec.message());
  return staging;
}

void VersionStore::write_staged(const std::string& name, std::uint64_t version, StoreTier tier,
                                const std::string& filename,
                                const std::function<void(const std::string&)>& writer) {
  const std::string staging = version_dir(name, version, tier) + ".tmp";
  const std::string path = (fs::path(staging) / filename).string();
  const int delay =
      tier == StoreTier::kGlobal ? cfg_.write_delay_ms_global : cfg_.write_delay_ms_node;
  if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
  hook("pre-stage-write", path);
  writer(path);
  hook("post-stage-write", path);
  fsync_path(path);
  hook("post-stage-fsync", path);
}

void VersionStore::assemble_shared_file(const std::string& dir, const std::string& key,
                                        const std::vector<int>& ranks) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kSharedMagic), std::end(kSharedMagic));
  put_u16_le(out, 1);
  put_u16_le(out, 0);
  put_u32_le(out, static_cast<std::uint32_t>(ranks.size()));
  std::vector<std::vector<std::uint8_t>> segments;
  segments.reserve(ranks.size());
  std::uint64_t offset = 12 + static_cast<std::uint64_t>(ranks.size()) * 20;
  std::vector<std::uint8_t> table;
  for (int r : ranks) {
    const std::string part = (fs::path(dir) / (key + ".part-" + std::to_string(r))).string();
    segments.push_back(read_file_bytes(part));
    put_u32_le(table, static_cast<std::uint32_t>(r));
    put_u64_le(table, offset);
    put_u64_le(table, segments.back().size());
    offset += segments.back().size();
  }
  out.insert(out.end(), table.begin(), table.end());
  for (const auto& s : segments) out.insert(out.end(), s.begin(), s.end());
  write_file_bytes((fs::path(dir) / key).string(), out);
  for (int r : ranks) {
    std::error_code ec;
    fs::remove(fs::path(dir) / (key + ".part-" + std::to_string(r)), ec);
  }
}

std::vector<std::uint8_t> VersionStore::extract_shared_segment(const std::string& path, int rank) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kSharedMagic, 4) != 0) {
    throw CorruptionError("bad shared-file header: " + path);
  }
  const std::uint32_t nranks = get_u32_le(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(nranks) * 20) {
    throw CorruptionError("truncated shared-file table: " + path);
  }
  for (std::uint32_t i = 0; i < nranks; ++i) {
    const std::uint8_t* rec = bytes.data() + 12 + i * 20;
    if (static_cast<int>(get_u32_le(rec)) != rank) continue;
    const std::uint64_t off = get_u64_le(rec + 4);
    const std::uint64_t len = get_u64_le(rec + 12);
    if (off + len > bytes.size()) throw CorruptionError("shared segment out of range: " + path);
    return {bytes.begin() + static_cast<std::ptrdiff_t>(off),
            bytes.begin() + static_cast<std::ptrdiff_t>(off + len)};
  }
  throw CorruptionError("rank " + std::to_string(rank) + " not present in " + path);
}

void VersionStore::finish_global(const std::string& name, std::uint64_t version) {
  const std::string staging = version_dir(name, version, StoreTier::kGlobal) + ".tmp";
  if (!fs::exists(staging)) throw StorageError("no staged version at " + staging);

  std::map<std::string, std::vector<int>> parts;
  for (const auto& e : fs::directory_iterator(staging)) {
    const std::string fname = e.path().filename().string();
    const auto pos = fname.rfind(".part-");
    if (pos == std::string::npos) continue;
    parts[fname.substr(0, pos)].push_back(std::stoi(fname.substr(pos + 6)));
  }
  for (auto& [key, ranks] : parts) {
    std::sort(ranks.begin(), ranks.end());
    assemble_shared_file(staging, key, ranks);
    hook("post-assemble", (fs::path(staging) / key).string());
  }
  finish_one_root(name, version, StoreTier::kGlobal, -1);
}

void VersionStore::finish_node(const std::string& name, std::uint64_t version) {
  std::vector<int> staged_nodes;
  for (int n = 0; n < cfg_.layout.num_nodes; ++n) {
    const std::string staging = version_dir(name, version, StoreTier::kNodeLocal, n) + ".tmp";
    if (fs::exists(staging)) staged_nodes.push_back(n);
  }
  if (staged_nodes.empty()) throw StorageError("no staged node-tier version for " + name);

  // Redundancy is produced from the staged data, before any rename, so a
  // crash leaves either nothing visible or a fully replicated version.
  if (cfg_.scheme == NodeScheme::kPartnerXor) {
    std::set<std::vector<int>> groups;
    for (int n : staged_nodes) groups.insert(cfg_.layout.xor_group_of(n));
    for (const auto& g : groups) write_xor_parity(name, version, g);
  } else if (cfg_.scheme == NodeScheme::kPartner) {
    for (int n : staged_nodes) replicate_partner(name, version, n);
  }
  for (int n : staged_nodes) {
    finish_one_root(name, version, StoreTier::kNodeLocal, n);
  }
}

void VersionStore::finish_one_root(const std::string& name, std::uint64_t version, StoreTier tier,
                                   int node) {
  const std::string staging = version_dir(name, version, tier, node) + ".tmp";
  const std::string final_dir = version_dir(name, version, tier, node);
  const std::string md_path = metadata_path(name, tier, node);
  std::lock_guard<std::mutex> lk(metadata_mutex(md_path));

  StoreMetadata md = read_metadata_file(md_path, name);
  const bool ok = tier == StoreTier::kGlobal ? version == md.latest_version + 1
                                             : version > md.latest_version;
  if (!ok) {
    throw ConfigError("publish version " + std::to_string(version) + " out of order, latest is " +
                      std::to_string(md.latest_version));
  }

  std::map<std::string, std::pair<std::uint32_t, std::uint64_t>> files;
  for (const auto& e : fs::directory_iterator(staging)) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(e.path().string());
    files[e.path().filename().string()] = {crc32(bytes.data(), bytes.size()), bytes.size()};
  }
  if (files.empty()) throw StorageError("staged version is empty: " + staging);

  // A directory with this number can exist after an invalidation restarted
  // the numbering, or after a crash between rename and metadata commit.
  // Either way it is unreferenced and gives way to the new version.
  if (fs::exists(final_dir)) remove_tree_quiet(final_dir);

  hook("pre-version-rename", final_dir);
  std::error_code ec;
  fs::rename(staging, final_dir, ec);
  if (ec) throw StorageError("version rename failed: " + final_dir + ": " + ec.message());
  hook("post-version-rename", final_dir);
  fsync_path(cp_dir(name, tier, node));

  StoreMetadata next = md;
  next.latest_version = version;
  next.retention = cfg_.retention;
  next.manifest[version] = std::move(files);
  std::vector<std::uint64_t> kept;
  for (std::uint64_t v = version; v > 0; --v) {
    if (kept.size() >= static_cast<std::size_t>(cfg_.retention)) break;
    if (next.manifest.count(v) > 0) kept.push_back(v);
  }
  std::vector<std::uint64_t> dropped;
  for (const auto& [v, _] : next.manifest) {
    if (std::find(kept.begin(), kept.end(), v) == kept.end()) dropped.push_back(v);
  }
  for (std::uint64_t v : dropped) next.manifest.erase(v);

  write_metadata_file(md_path, next);

  for (std::uint64_t v : dropped) {
    hook("pre-gc-remove", version_dir(name, v, tier, node));
    remove_tree_quiet(version_dir(name, v, tier, node));
  }
}

void VersionStore::replicate_partner(const std::string& name, std::uint64_t version, int node) {
  const int partner = cfg_.layout.partner_of(node);
  if (partner == node) return;
  const std::string src = version_dir(name, version, StoreTier::kNodeLocal, node) + ".tmp";
  const fs::path copy_base = fs::path(tier_root(StoreTier::kNodeLocal, partner)) / name /
                             "partner" / ("node-" + std::to_string(node));
  const fs::path dst_dir = copy_base / version_dir_name(version);
  remove_tree_quiet(dst_dir);
  std::error_code ec;
  fs::create_directories(dst_dir, ec);
  if (ec) throw StorageError("cannot create partner dir " + dst_dir.string());
  StoreMetadata md;
  md.name = name;
  md.latest_version = version;
  md.retention = cfg_.retention;
  for (const auto& e : fs::directory_iterator(src)) {
    fs::copy_file(e.path(), dst_dir / e.path().filename(), fs::copy_options::overwrite_existing,
                  ec);
    if (ec) throw StorageError("partner copy failed: " + e.path().string());
    const std::vector<std::uint8_t> bytes = read_file_bytes((dst_dir / e.path().filename()).string());
    md.manifest[version][e.path().filename().string()] = {crc32(bytes.data(), bytes.size()),
                                                          bytes.size()};
  }
  // The copied metadata lets the partner copy be validated after the source
  // node is lost. It becomes reachable only once the source commits.
  write_metadata_file((copy_base / kMetadataFile).string(), md);
  for (const auto& e : fs::directory_iterator(copy_base)) {
    std::uint64_t v = 0;
    if (parse_version_dir(e.path().filename().string(), v) &&
        v + static_cast<std::uint64_t>(cfg_.retention) <= version) {
      remove_tree_quiet(e.path());
    }
  }
}

void VersionStore::write_xor_parity(const std::string& name, std::uint64_t version,
                                    const std::vector<int>& group) {
  if (group.size() < 2) return;
  const int holder = group[static_cast<std::size_t>(version % group.size())];
  XorTable table;
  std::vector<std::vector<std::uint8_t>> payloads;
  for (int n : group) {
    if (n == holder) continue;
    const std::string src = version_dir(name, version, StoreTier::kNodeLocal, n) + ".tmp";
    if (!fs::exists(src)) continue;
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(src)) {
      names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    std::vector<std::uint8_t> payload;
    for (const auto& fname : names) {
      const std::vector<std::uint8_t> bytes = read_file_bytes((fs::path(src) / fname).string());
      table.files[n].push_back({fname, bytes.size(), crc32(bytes.data(), bytes.size())});
      payload.insert(payload.end(), bytes.begin(), bytes.end());
    }
    table.members.push_back(n);
    table.payload_len[n] = payload.size();
    payloads.push_back(std::move(payload));
  }
  if (payloads.empty()) return;
  const std::vector<std::uint8_t> parity = build_xor_parity(payloads);

  const fs::path xor_base = fs::path(tier_root(StoreTier::kNodeLocal, holder)) / name / "xor";
  const fs::path dir = xor_base / version_dir_name(version);
  remove_tree_quiet(dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StorageError("cannot create xor dir " + dir.string());
  write_file_bytes((dir / "parity").string(), parity);
  std::ostringstream t;
  t << "version " << version << "\n";
  for (int n : table.members) t << "member " << n << " " << table.payload_len[n] << "\n";
  for (int n : table.members) {
    for (const auto& f : table.files[n]) {
      t << "file " << n << " " << f.name << " " << f.size << " " << crc_hex(f.crc) << "\n";
    }
  }
  {
    std::ofstream f(dir / "table");
    f << t.str();
    f.flush();
    if (!f) throw StorageError("cannot write xor table " + dir.string());
  }
  for (const auto& e : fs::directory_iterator(xor_base)) {
    std::uint64_t v = 0;
    if (parse_version_dir(e.path().filename().string(), v) &&
        v + static_cast<std::uint64_t>(cfg_.retention) <= version) {
      remove_tree_quiet(e.path());
    }
  }
}

StoreMetadata VersionStore::finish_version(const std::string& name, std::uint64_t version,
                                           StoreTier tier) {
  if (tier == StoreTier::kGlobal) {
    finish_global(name, version);
  } else {
    finish_node(name, version);
  }
  return read_metadata_file(metadata_path(name, tier), name);
}

StoreMetadata VersionStore::publish_version(const std::string& name, std::uint64_t version,
                                            const std::vector<FileData>& files, StoreTier tier) {
  begin_version(name, version, tier);
  for (const auto& f : files) {
    const int rank = f.rank < 0 ? 0 : f.rank;
    const std::string fname = tier == StoreTier::kGlobal
                                  ? f.key + ".part-" + std::to_string(rank)
                                  : rank_file_name(f.key, rank);
    write_staged(name, version, tier, fname,
                 [&](const std::string& path) { write_file_bytes(path, f.bytes); });
  }
  return finish_version(name, version, tier);
}

StoreMetadata VersionStore::invalidate(const std::string& name) {
  StoreMetadata result;
  result.name = name;
  auto drop = [&](const std::string& md_path) {
    std::lock_guard<std::mutex> lk(metadata_mutex(md_path));
    if (!fs::exists(md_path)) return;
    StoreMetadata md = read_metadata_file(md_path, name);
    md.latest_version = 0;
    write_metadata_file(md_path, md);
    result = md;
  };
  const fs::path global_dir = fs::path(cfg_.global_root) / name;
  if (fs::exists(global_dir)) drop((global_dir / kMetadataFile).string());
  for (int n = 0; n < cfg_.layout.num_nodes; ++n) {
    std::string root;
    try {
      root = tier_root(StoreTier::kNodeLocal, n);
    } catch (const StorageError&) {
      continue;
    }
    const fs::path dir = fs::path(root) / name;
    if (!fs::exists(dir)) continue;
    drop((dir / kMetadataFile).string());
    const fs::path partner_base = dir / "partner";
    std::error_code ec;
    if (fs::exists(partner_base)) {
      for (const auto& e : fs::directory_iterator(partner_base, ec)) {
        drop((e.path() / kMetadataFile).string());
      }
    }
  }
  result.name = name;
  return result;
}

std::string VersionStore::rank_file_name(const std::string& key, int rank) {
  return key + ".rank-" + std::to_string(rank);
}

namespace {

bool split_rank_name(const std::string& fname, std::string& key, int& rank) {
  const auto pos = fname.rfind(".rank-");
  if (pos == std::string::npos) return false;
  key = fname.substr(0, pos);
  rank = std::stoi(fname.substr(pos + 6));
  return true;
}

}  // namespace

std::optional<ResolvedVersion> VersionStore::load_version(const std::string& name, StoreTier tier,
                                                          std::uint64_t version,
                                                          const std::vector<std::string>& needed) {
  if (version == 0) return std::nullopt;
  if (tier == StoreTier::kNodeLocal) return resolve_node_version(name, version, needed);

  const StoreMetadata md = read_metadata_file(metadata_path(name, StoreTier::kGlobal), name);
  if (version > md.latest_version) return std::nullopt;
  const auto vit = md.manifest.find(version);
  if (vit == md.manifest.end()) return std::nullopt;

  ResolvedVersion out;
  out.version = version;
  out.tier = StoreTier::kGlobal;
  const fs::path vdir = version_dir(name, version, StoreTier::kGlobal);
  const fs::path scratch = fs::path(cp_dir(name, StoreTier::kGlobal)) / ".scratch" /
                           ("global-" + version_dir_name(version));
  std::set<std::string> validated_containers;
  try {
    for (const auto& fname : needed) {
      std::string key;
      int rank = 0;
      if (!split_rank_name(fname, key, rank)) {
        key = fname;
        rank = 0;
      }
      const auto mit = vit->second.find(key);
      if (mit == vit->second.end()) return std::nullopt;
      const std::string container = (vdir / key).string();
      if (validated_containers.insert(container).second) {
        const std::vector<std::uint8_t> bytes = read_file_bytes(container);
        if (bytes.size() != mit->second.second ||
            crc32(bytes.data(), bytes.size()) != mit->second.first) {
          return std::nullopt;
        }
      }
      const std::vector<std::uint8_t> segment = extract_shared_segment(container, rank);
      std::error_code ec;
      fs::create_directories(scratch, ec);
      const std::string spath = (scratch / fname).string();
      write_file_atomic(spath, segment);
      out.files[fname] = spath;
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  return out;
}

std::optional<ResolvedVersion> VersionStore::resolve_node_version(
    const std::string& name, std::uint64_t version, const std::vector<std::string>& needed) {
  const int num_nodes = cfg_.layout.num_nodes;
  auto root_of = [&](int n) -> std::optional<std::string> {
    try {
      return tier_root(StoreTier::kNodeLocal, n);
    } catch (const StorageError&) {
      return std::nullopt;
    }
  };

  // Per-node manifests, read once.
  std::map<int, StoreMetadata> own_md;
  for (int n = 0; n < num_nodes; ++n) {
    if (auto r = root_of(n)) {
      own_md[n] = read_metadata_file((fs::path(*r) / name / kMetadataFile).string(), name);
    }
  }

  ResolvedVersion out;
  out.version = version;
  out.tier = StoreTier::kNodeLocal;
  const fs::path scratch = fs::path(cp_dir(name, StoreTier::kGlobal)) / ".scratch" /
                           ("node-" + version_dir_name(version));

  // Cache of files recovered for whole lost nodes (XOR route).
  std::map<int, std::map<std::string, std::string>> reconstructed;

  auto find_direct = [&](const std::string& fname) -> std::optional<std::string> {
    for (int i = 0; i < num_nodes; ++i) {
      const int n = (cfg_.node_id + i) % num_nodes;
      const auto mdit = own_md.find(n);
      if (mdit == own_md.end()) continue;
      if (version > mdit->second.latest_version) continue;
      const auto vit = mdit->second.manifest.find(version);
      if (vit == mdit->second.manifest.end()) continue;
      const auto fit = vit->second.find(fname);
      if (fit == vit->second.end()) continue;
      const auto root = root_of(n);
      const std::string path =
          (fs::path(*root) / name / version_dir_name(version) / fname).string();
      try {
        const std::vector<std::uint8_t> bytes = read_file_bytes(path);
        if (bytes.size() == fit->second.second &&
            crc32(bytes.data(), bytes.size()) == fit->second.first) {
          return path;
        }
      } catch (const Error&) {
      }
    }
    return std::nullopt;
  };

  auto find_partner = [&](const std::string& fname) -> std::optional<std::string> {
    for (int src = 0; src < num_nodes; ++src) {
      const int partner = cfg_.layout.partner_of(src);
      const auto root = root_of(partner);
      if (!root) continue;
      const fs::path base = fs::path(*root) / name / "partner" / ("node-" + std::to_string(src));
      const StoreMetadata md = read_metadata_file((base / kMetadataFile).string(), name);
      if (version > md.latest_version) continue;
      const auto vit = md.manifest.find(version);
      if (vit == md.manifest.end()) continue;
      const auto fit = vit->second.find(fname);
      if (fit == vit->second.end()) continue;
      const std::string path = (base / version_dir_name(version) / fname).string();
      try {
        const std::vector<std::uint8_t> bytes = read_file_bytes(path);
        if (bytes.size() == fit->second.second &&
            crc32(bytes.data(), bytes.size()) == fit->second.first) {
          return path;
        }
      } catch (const Error&) {
      }
    }
    return std::nullopt;
  };

  // Rebuilds all files of `lost` from the group parity; returns the file map.
  auto xor_recover_node = [&](int lost) -> const std::map<std::string, std::string>* {
    if (auto it = reconstructed.find(lost); it != reconstructed.end()) return &it->second;
    for (int h = 0; h < num_nodes; ++h) {
      const auto hroot = root_of(h);
      if (!hroot) continue;
      const fs::path xdir = fs::path(*hroot) / name / "xor" / version_dir_name(version);
      const auto table = read_xor_table(xdir);
      if (!table) continue;
      if (std::find(table->members.begin(), table->members.end(), lost) == table->members.end()) {
        continue;
      }
      // Concatenate every other member's published payload.
      std::vector<std::vector<std::uint8_t>> survivors;
      bool complete = true;
      for (int m : table->members) {
        if (m == lost) continue;
        const auto mroot = root_of(m);
        if (!mroot) {
          complete = false;
          break;
        }
        std::vector<std::uint8_t> payload;
        for (const auto& rec : table->files.at(m)) {
          const std::string p =
              (fs::path(*mroot) / name / version_dir_name(version) / rec.name).string();
          try {
            std::vector<std::uint8_t> bytes = read_file_bytes(p);
            if (bytes.size() != rec.size || crc32(bytes.data(), bytes.size()) != rec.crc) {
              complete = false;
              break;
            }
            payload.insert(payload.end(), bytes.begin(), bytes.end());
          } catch (const Error&) {
            complete = false;
            break;
          }
        }
        if (!complete) break;
        survivors.push_back(std::move(payload));
      }
      if (!complete) continue;  // two or more members gone: unrecoverable here
      std::vector<std::uint8_t> parity;
      try {
        parity = read_file_bytes((xdir / "parity").string());
      } catch (const Error&) {
        continue;
      }
      std::vector<std::uint8_t> payload;
      try {
        payload = reconstruct_xor(survivors, parity, table->payload_len.at(lost));
      } catch (const Error&) {
        continue;
      }
      // Split the payload back into files and verify each piece.
      std::map<std::string, std::string> files;
      std::size_t off = 0;
      bool ok = true;
      std::error_code ec;
      fs::create_directories(scratch, ec);
      for (const auto& rec : table->files.at(lost)) {
        if (off + rec.size > payload.size()) {
          ok = false;
          break;
        }
        std::span<const std::uint8_t> piece(payload.data() + off, rec.size);
        if (crc32(piece.data(), piece.size()) != rec.crc) {
          ok = false;
          break;
        }
        const std::string spath = (scratch / rec.name).string();
        write_file_atomic(spath, piece);
        files[rec.name] = spath;
        off += rec.size;
      }
      if (!ok) continue;
      auto [it, _] = reconstructed.emplace(lost, std::move(files));
      return &it->second;
    }
    return nullptr;
  };

  auto find_xor = [&](const std::string& fname) -> std::optional<std::string> {
    // Work out which node owned this file from any reachable table.
    for (int h = 0; h < num_nodes; ++h) {
      const auto hroot = root_of(h);
      if (!hroot) continue;
      const auto table = read_xor_table(fs::path(*hroot) / name / "xor" / version_dir_name(version));
      if (!table) continue;
      for (int m : table->members) {
        for (const auto& rec : table->files.at(m)) {
          if (rec.name != fname) continue;
          if (const auto* files = xor_recover_node(m)) {
            const auto fit = files->find(fname);
            if (fit != files->end()) return fit->second;
          }
        }
      }
    }
    return std::nullopt;
  };

  for (const auto& fname : needed) {
    std::optional<std::string> path = find_direct(fname);
    if (!path && cfg_.scheme == NodeScheme::kPartner) path = find_partner(fname);
    if (!path && cfg_.scheme == NodeScheme::kPartnerXor) path = find_xor(fname);
    if (!path) return std::nullopt;
    out.files[fname] = *path;
  }
  return out;
}

std::vector<std::uint64_t> VersionStore::resolvable_versions(
    const std::string& name, const std::vector<std::string>& needed) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t v : candidate_versions(name)) {
    if (load_version_any_tier(name, v, needed)) out.push_back(v);
  }
  return out;
}

std::optional<ResolvedVersion> VersionStore::load_version_any_tier(
    const std::string& name, std::uint64_t version, const std::vector<std::string>& needed) {
  const bool node_tier = !cfg_.node_root.empty() || static_cast<bool>(cfg_.node_root_of);
  if (node_tier) {
    if (auto r = load_version(name, StoreTier::kNodeLocal, version, needed)) return r;
  }
  return load_version(name, StoreTier::kGlobal, version, needed);
}

std::vector<std::uint64_t> VersionStore::candidate_versions(const std::string& name) {
  // Candidate versions, newest first; the node tier wins ties.
  std::set<std::uint64_t> node_versions;
  const bool node_tier = !cfg_.node_root.empty() || static_cast<bool>(cfg_.node_root_of);
  if (node_tier) {
    for (int n = 0; n < cfg_.layout.num_nodes; ++n) {
      std::string root;
      try {
        root = tier_root(StoreTier::kNodeLocal, n);
      } catch (const StorageError&) {
        continue;
      }
      const fs::path dir = fs::path(root) / name;
      const StoreMetadata md = read_metadata_file((dir / kMetadataFile).string(), name);
      for (const auto& [v, _] : md.manifest) {
        if (v <= md.latest_version && v > 0) node_versions.insert(v);
      }
      const fs::path partner_base = dir / "partner";
      std::error_code ec;
      if (fs::exists(partner_base)) {
        for (const auto& e : fs::directory_iterator(partner_base, ec)) {
          const StoreMetadata pmd = read_metadata_file((e.path() / kMetadataFile).string(), name);
          for (const auto& [v, _] : pmd.manifest) {
            if (v <= pmd.latest_version && v > 0) node_versions.insert(v);
          }
        }
      }
    }
  }
  const StoreMetadata gmd = read_metadata_file(metadata_path(name, StoreTier::kGlobal), name);
  std::set<std::uint64_t> global_versions;
  for (const auto& [v, _] : gmd.manifest) {
    if (v <= gmd.latest_version && v > 0) global_versions.insert(v);
  }

  std::set<std::uint64_t> all;
  all.insert(node_versions.begin(), node_versions.end());
  all.insert(global_versions.begin(), global_versions.end());
  return {all.rbegin(), all.rend()};
}

std::optional<ResolvedVersion> VersionStore::load_latest(const std::string& name,
                                                         const std::vector<std::string>& needed) {
  for (std::uint64_t v : candidate_versions(name)) {
    if (auto r = load_version_any_tier(name, v, needed)) return r;
  }
  return std::nullopt;
}

}  // namespace craftkit
