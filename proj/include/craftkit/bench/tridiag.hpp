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

#include <span>
#include <vector>

namespace craftkit::bench {

// Eigenvalues of a symmetric tridiagonal matrix by the implicit-shift QL
// method. `diag` holds d_0..d_{n-1}; `subdiag` holds e_0..e_{n-2}. Returns
// the eigenvalues in ascending order.
std::vector<double> tridiag_eigenvalues(std::span<const double> diag,
                                        std::span<const double> subdiag);

// Smallest eigenvalue of the Lanczos tridiagonal built from alpha_1..alpha_j
// and beta_2..beta_j.
double tridiag_min_eigenvalue(std::span<const double> alpha, std::span<const double> beta);

}  // namespace craftkit::bench
