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
#include <utility>
#include <vector>

namespace craftkit::bench {

// Sparse symmetric matrix generated on the fly from a seed: any process can
// evaluate any entry without communication or file input. The pattern is
// hash-driven, the diagonal dominant, so the spectrum is well separated.
class SeededSparseMatrix {
 public:
  SeededSparseMatrix(int n, int nnz_per_row, std::uint64_t seed);

  int size() const { return n_; }

  bool has_edge(int i, int j) const;     // off-diagonal structure, symmetric
  double edge_value(int i, int j) const; // defined where has_edge
  double diagonal(int i) const;

  // Entries of one row, diagonal included, by ascending column. O(n) scan.
  std::vector<std::pair<int, double>> row(int i) const;

  // Dense form, for oracle comparisons at small sizes.
  std::vector<std::vector<double>> dense() const;

 private:
  int n_;
  int target_nnz_;
  std::uint64_t seed_;
};

}  // namespace craftkit::bench
