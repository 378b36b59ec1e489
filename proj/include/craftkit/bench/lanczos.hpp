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

#include <functional>
#include <string>

#include "craftkit/checkpoint.hpp"
#include "craftkit/process_group.hpp"

namespace craftkit::bench {

struct LanczosParams {
  int n = 200;
  int nnz_per_row = 5;
  std::uint64_t matrix_seed = 1;
  long iters = 200;
  long cp_freq = 20;           // 0 disables checkpointing entirely
  int compute_delay_ms = 0;    // artificial per-iteration work, benchmarks only
  std::string cp_name = "lanczosCP";
  CheckpointOptions cp_options;
};

struct LanczosResult {
  double min_eigenvalue = 0.0;
  long iterations_done = 0;
  bool breakdown = false;      // the invariant subspace closed early
  bool restored = false;       // this incarnation resumed from a checkpoint
  long executed_steps = 0;     // steps run here, redone work included
  long checkpoints_written = 0;
  std::uint64_t oh_cp_units = 0;   // blocking time in updateAndWrite/wait
  std::uint64_t oh_res_units = 0;  // blocking time in restartIfNeeded
};

// One rank's share of the Lanczos iteration: row-partitioned matrix and
// vectors, halo exchange for the sparse mat-vec, rank-ordered reductions so
// every run of the same trace is bit-identical. State lives in a checkpoint
// and re-entering the body resumes from the latest version.
//
//   w      <- A v_j            (distributed, halo exchange)
//   alpha  <- w . v_j          (reduction)
//   w      <- w - alpha v_j - beta_j v_{j-1}
//   beta'  <- ||w||            (reduction)
//   v_{j+1} <- w / beta'
//
// `at_iteration` runs at every loop head with the iteration about to
// execute; benchmarks use it for deterministic failure injection.
LanczosResult run_lanczos(ProcessGroup& group, const LanczosParams& params,
                          const std::function<void(long)>& at_iteration = nullptr);

}  // namespace craftkit::bench
