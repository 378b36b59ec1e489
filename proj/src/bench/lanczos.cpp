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

#include "craftkit/bench/lanczos.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <thread>

#include "craftkit/bench/sparse_matrix.hpp"
#include "craftkit/bench/tridiag.hpp"

namespace craftkit::bench {

namespace {

constexpr std::uint32_t kTagHalo = 0x0101;
constexpr std::uint32_t kTagReduce = 0x0102;
constexpr std::uint32_t kTagBcast = 0x0103;

std::vector<std::uint8_t> pack_doubles(const std::vector<double>& v) {
  std::vector<std::uint8_t> out(v.size() * sizeof(double));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<double> unpack_doubles(const std::vector<std::uint8_t>& bytes) {
  std::vector<double> v(bytes.size() / sizeof(double));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

struct RowPartition {
  int lo = 0;
  int hi = 0;
  int count() const { return hi - lo; }
};

RowPartition partition_of(int n, int size, int rank) {
  RowPartition p;
  p.lo = static_cast<int>(static_cast<long>(n) * rank / size);
  p.hi = static_cast<int>(static_cast<long>(n) * (rank + 1) / size);
  return p;
}

int owner_of(int n, int size, int row) {
  // Inverse of partition_of for contiguous block partitions.
  for (int r = 0; r < size; ++r) {
    const RowPartition p = partition_of(n, size, r);
    if (row >= p.lo && row < p.hi) return r;
  }
  return size - 1;
}

// Rank-ordered global sum: deterministic, bit-identical across replays.
double reduce_sum(ProcessGroup& g, double local) {
  const int size = g.size();
  if (size == 1) return local;
  if (g.rank() == 0) {
    double total = local;
    std::vector<double> parts(static_cast<std::size_t>(size), 0.0);
    parts[0] = local;
    for (int r = 1; r < size; ++r) {
      const Message m = g.recv(r, kTagReduce);
      parts[static_cast<std::size_t>(r)] = unpack_doubles(m.bytes).at(0);
    }
    total = 0.0;
    for (int r = 0; r < size; ++r) total += parts[static_cast<std::size_t>(r)];
    for (int r = 1; r < size; ++r) g.send(r, kTagBcast, pack_doubles({total}));
    return total;
  }
  g.send(0, kTagReduce, pack_doubles({local}));
  const Message m = g.recv(0, kTagBcast);
  return unpack_doubles(m.bytes).at(0);
}

}  // namespace

LanczosResult run_lanczos(ProcessGroup& group, const LanczosParams& params,
                          const std::function<void(long)>& at_iteration) {
  const int n = params.n;
  const int size = group.size();
  const int rank = group.rank();
  if (n < size) throw ConfigError("matrix smaller than the process group");

  const SeededSparseMatrix matrix(n, params.nnz_per_row, params.matrix_seed);
  const RowPartition mine = partition_of(n, size, rank);

  // My rows' nonzero columns, and the exchange pattern they induce. Both
  // sides of each exchange derive the same sorted index lists from the
  // seeded structure, so no negotiation round is needed.
  std::vector<std::vector<std::pair<int, double>>> rows;
  rows.reserve(static_cast<std::size_t>(mine.count()));
  for (int i = mine.lo; i < mine.hi; ++i) rows.push_back(matrix.row(i));

  std::map<int, std::vector<int>> need;   // owner rank -> remote columns I read
  std::map<int, std::vector<int>> serve;  // peer rank -> my columns they read
  for (const auto& row : rows) {
    for (const auto& [j, v] : row) {
      (void)v;
      if (j < mine.lo || j >= mine.hi) {
        auto& lst = need[owner_of(n, size, j)];
        if (lst.empty() || lst.back() != j) lst.push_back(j);
      }
    }
  }
  for (auto& [p, lst] : need) {
    std::sort(lst.begin(), lst.end());
    lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
  }
  for (int peer = 0; peer < size; ++peer) {
    if (peer == rank) continue;
    const RowPartition theirs = partition_of(n, size, peer);
    std::vector<int> cols;
    for (int j = mine.lo; j < mine.hi; ++j) {
      for (int i = theirs.lo; i < theirs.hi; ++i) {
        if (matrix.has_edge(i, j)) {
          cols.push_back(j);
          break;
        }
      }
    }
    if (!cols.empty()) serve[peer] = std::move(cols);
  }

  // Checkpointed state.
  long j = 0;
  std::vector<double> alpha(static_cast<std::size_t>(params.iters) + 2, 0.0);
  std::vector<double> beta(static_cast<std::size_t>(params.iters) + 2, 0.0);
  std::vector<double> v_cur(static_cast<std::size_t>(mine.count()), 0.0);
  std::vector<double> v_prev(static_cast<std::size_t>(mine.count()), 0.0);
  const double inv_norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& x : v_cur) x = inv_norm;

  const bool checkpointing = params.cp_freq > 0;
  std::unique_ptr<Checkpoint> cp;
  LanczosResult result;
  Transport& t = group.transport();

  if (checkpointing) {
    cp = std::make_unique<Checkpoint>(params.cp_name, group, params.cp_options);
    cp->add("iteration", &j);
    cp->add("alpha", alpha.data(), alpha.size());
    cp->add("beta", beta.data(), beta.size());
    cp->add("v_cur", v_cur.data(), v_cur.size());
    cp->add("v_prev", v_prev.data(), v_prev.size());
    cp->commit();
    const std::uint64_t t0 = t.now();
    result.restored = cp->restartIfNeeded();
    result.oh_res_units = t.now() - t0;
  }

  std::vector<double> w(static_cast<std::size_t>(mine.count()), 0.0);

  while (j < params.iters) {
    const long k = j + 1;
    if (at_iteration) at_iteration(k);
    if (params.compute_delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(params.compute_delay_ms));
    }

    // Halo exchange of v_cur, then the local sparse mat-vec.
    std::map<int, double> halo;
    for (const auto& [peer, cols] : serve) {
      std::vector<double> values;
      values.reserve(cols.size());
      for (int c : cols) values.push_back(v_cur[static_cast<std::size_t>(c - mine.lo)]);
      group.send(peer, kTagHalo, pack_doubles(values));
    }
    for (const auto& [peer, cols] : need) {
      const Message m = group.recv(peer, kTagHalo);
      const std::vector<double> values = unpack_doubles(m.bytes);
      for (std::size_t i = 0; i < cols.size(); ++i) halo[cols[i]] = values[i];
    }
    for (int i = mine.lo; i < mine.hi; ++i) {
      double acc = 0.0;
      for (const auto& [col, value] : rows[static_cast<std::size_t>(i - mine.lo)]) {
        const double x = (col >= mine.lo && col < mine.hi)
                             ? v_cur[static_cast<std::size_t>(col - mine.lo)]
                             : halo.at(col);
        acc += value * x;
      }
      w[static_cast<std::size_t>(i - mine.lo)] = acc;
    }

    double local_dot = 0.0;
    for (int i = 0; i < mine.count(); ++i) {
      local_dot += w[static_cast<std::size_t>(i)] * v_cur[static_cast<std::size_t>(i)];
    }
    const double a = reduce_sum(group, local_dot);

    const double b_prev = beta[static_cast<std::size_t>(k)];
    for (int i = 0; i < mine.count(); ++i) {
      w[static_cast<std::size_t>(i)] -= a * v_cur[static_cast<std::size_t>(i)] +
                                        b_prev * v_prev[static_cast<std::size_t>(i)];
    }

    double local_norm2 = 0.0;
    for (double x : w) local_norm2 += x * x;
    const double b_next = std::sqrt(reduce_sum(group, local_norm2));

    alpha[static_cast<std::size_t>(k)] = a;
    beta[static_cast<std::size_t>(k + 1)] = b_next;
    j = k;
    ++result.executed_steps;

    if (b_next == 0.0) {
      result.breakdown = true;
      break;
    }
    for (int i = 0; i < mine.count(); ++i) {
      v_prev[static_cast<std::size_t>(i)] = v_cur[static_cast<std::size_t>(i)];
      v_cur[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / b_next;
    }

    if (checkpointing) {
      const std::uint64_t t0 = t.now();
      if (cp->updateAndWrite(j, params.cp_freq).should_write) ++result.checkpoints_written;
      result.oh_cp_units += t.now() - t0;
    }
  }

  if (checkpointing) {
    const std::uint64_t t0 = t.now();
    cp->wait();
    result.oh_cp_units += t.now() - t0;
  }

  result.iterations_done = j;
  result.min_eigenvalue =
      tridiag_min_eigenvalue(std::span<const double>(alpha.data() + 1, static_cast<std::size_t>(j)),
                             std::span<const double>(beta.data() + 2, static_cast<std::size_t>(j - 1)));
  return result;
}

}  // namespace craftkit::bench
