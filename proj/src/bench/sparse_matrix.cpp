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

#include "craftkit/bench/sparse_matrix.hpp"

#include <algorithm>

#include "craftkit/errors.hpp"

namespace craftkit::bench {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = a * 0x9E3779B97F4A7C15ull + 0x517CC1B727220A95ull;
  h ^= b + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  h *= 0xFF51AFD7ED558CCDull;
  h ^= c + (h >> 33);
  h *= 0xC4CEB9FE1A85EC53ull;
  return h ^ (h >> 33);
}

}  // namespace

SeededSparseMatrix::SeededSparseMatrix(int n, int nnz_per_row, std::uint64_t seed)
    : n_(n), target_nnz_(nnz_per_row), seed_(seed) {
  if (n < 1) throw ConfigError("matrix size must be positive");
  if (nnz_per_row < 1 || nnz_per_row > n) throw ConfigError("nnz per row out of range");
}

bool SeededSparseMatrix::has_edge(int i, int j) const {
  if (i == j) return false;
  const int lo = std::min(i, j);
  const int hi = std::max(i, j);
  if (n_ < 2 || target_nnz_ < 2) return false;
  const std::uint64_t h = mix(seed_, static_cast<std::uint64_t>(lo) << 20 | static_cast<std::uint64_t>(hi), 0xED6Eull);
  return h % static_cast<std::uint64_t>(n_ - 1) < static_cast<std::uint64_t>(target_nnz_ - 1);
}

double SeededSparseMatrix::edge_value(int i, int j) const {
  const int lo = std::min(i, j);
  const int hi = std::max(i, j);
  const std::uint64_t h = mix(seed_, static_cast<std::uint64_t>(lo) << 20 | static_cast<std::uint64_t>(hi), 0x7A1ull);
  return (static_cast<double>(h % 2001ull) - 1000.0) / 1000.0;
}

double SeededSparseMatrix::diagonal(int i) const {
  const std::uint64_t h = mix(seed_, static_cast<std::uint64_t>(i), 0xD1A6ull);
  return 4.0 + static_cast<double>(h % 2000ull) / 1000.0;
}

std::vector<std::pair<int, double>> SeededSparseMatrix::row(int i) const {
  std::vector<std::pair<int, double>> out;
  for (int j = 0; j < n_; ++j) {
    if (j == i) {
      out.emplace_back(j, diagonal(i));
    } else if (has_edge(i, j)) {
      out.emplace_back(j, edge_value(i, j));
    }
  }
  return out;
}

std::vector<std::vector<double>> SeededSparseMatrix::dense() const {
  std::vector<std::vector<double>> a(static_cast<std::size_t>(n_),
                                     std::vector<double>(static_cast<std::size_t>(n_), 0.0));
  for (int i = 0; i < n_; ++i) {
    for (const auto& [j, v] : row(i)) a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
  }
  return a;
}

}  // namespace craftkit::bench
