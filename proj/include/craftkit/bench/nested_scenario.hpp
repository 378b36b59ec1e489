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

#include <optional>
#include <string>

namespace craftkit::bench {

// The two-level nested-checkpoint program: an outer loop of 2 iterations
// checkpointing every iteration (CL1), an inner loop of 30 iterations
// checkpointing every 10 (CL2), CL2 nested under CL1. A simulated process
// failure is injected at one of five canonical stages; the program is then
// re-run and reports which state each level restored.
//
//   stage 1: first outer round, before the inner checkpoint   -> (-, -)
//   stage 2: first outer round, after inner iteration 10      -> (-, 10)
//   stage 3: first outer round, after inner iteration 20      -> (-, 20)
//   stage 4: second outer round, before the inner checkpoint  -> (1, -)
//   stage 5: second outer round, after inner iteration 10     -> (1, 10)

struct NestedStageResult {
  std::optional<long> l1;  // completed outer iterations restored
  std::optional<long> l2;  // completed inner iterations restored
  std::uint64_t l1_version = 0;  // store version restored (0 = none)
  std::uint64_t l2_version = 0;
  bool completed = false;  // the re-run finished the whole program
  bool consistent = false; // final state matches an uninterrupted run
};

NestedStageResult run_nested_scenario(const std::string& cp_dir, int stage);

}  // namespace craftkit::bench
