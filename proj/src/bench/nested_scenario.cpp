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

#include "craftkit/bench/nested_scenario.hpp"

#include <utility>

#include "craftkit/checkpoint.hpp"
#include "craftkit/errors.hpp"

namespace craftkit::bench {

namespace {

constexpr long kOuterIters = 2;
constexpr long kOuterFreq = 1;
constexpr long kInnerIters = 30;
constexpr long kInnerFreq = 10;

// Simulated process death inside the scenario.
struct Died {};

struct RunReport {
  bool l1_restored = false;
  bool l2_restored = false;
  long l1_value = 0;
  long l2_value = 0;
  std::uint64_t l1_version = 0;
  std::uint64_t l2_version = 0;
  bool completed = false;
  long final_outer = 0;
  double final_sum = 0.0;
};

RunReport run_once(const std::string& dir, std::optional<std::pair<long, long>> die_at) {
  SingleProcessComm comm;
  CheckpointOptions opt;
  EnvConfig env;
  env.cp_path = dir;
  opt.env = env;

  Checkpoint cl1("CL1", comm, opt);
  Checkpoint cl2("CL2", comm, opt);
  cl1.register_child(cl2);

  long l1done = 0;
  long l2done = 0;
  double l1sum = 0.0;
  double l2sum = 0.0;
  cl1.add("l1done", &l1done);
  cl1.add("l1sum", &l1sum);
  cl1.commit();
  cl2.add("l2done", &l2done);
  cl2.add("l2sum", &l2sum);
  cl2.commit();

  RunReport rep;
  rep.l1_restored = cl1.restartIfNeeded();
  rep.l1_value = l1done;
  if (rep.l1_restored) rep.l1_version = cl1.version_counter();

  bool first_inner_entry = true;
  while (l1done < kOuterIters) {
    const bool restored = cl2.restartIfNeeded();
    if (first_inner_entry) {
      rep.l2_restored = restored;
      rep.l2_value = l2done;
      if (restored) rep.l2_version = cl2.version_counter();
      first_inner_entry = false;
    }
    while (l2done < kInnerIters) {
      if (die_at && l1done == die_at->first && l2done == die_at->second) throw Died{};
      l2sum += static_cast<double>((l1done + 1) * 1000 + (l2done + 1));
      ++l2done;
      cl2.updateAndWrite(l2done, kInnerFreq);
    }
    l1sum += l2sum;
    l2sum = 0.0;
    l2done = 0;
    ++l1done;
    cl1.updateAndWrite(l1done, kOuterFreq);
  }
  rep.completed = true;
  rep.final_outer = l1done;
  rep.final_sum = l1sum;
  return rep;
}

}  // namespace

NestedStageResult run_nested_scenario(const std::string& cp_dir, int stage) {
  static constexpr std::pair<long, long> kStagePoints[] = {
      {0, 5},   // I:  before any checkpoint exists
      {0, 15},  // II: after the inner level wrote iteration 10
      {0, 25},  // III
      {1, 5},   // IV: after the outer level wrote, child invalidated
      {1, 15},  // V
  };
  if (stage < 1 || stage > 5) throw ConfigError("nested scenario stage must be in 1..5");

  try {
    run_once(cp_dir, kStagePoints[stage - 1]);
  } catch (const Died&) {
    // the injected failure
  }
  const RunReport rerun = run_once(cp_dir, std::nullopt);

  NestedStageResult out;
  if (rerun.l1_restored) out.l1 = rerun.l1_value;
  if (rerun.l2_restored) out.l2 = rerun.l2_value;
  out.l1_version = rerun.l1_version;
  out.l2_version = rerun.l2_version;
  out.completed = rerun.completed;
  // Uninterrupted totals: two outer rounds of sum_{i=1..30} (r*1000 + i).
  const double expected = (30 * 1000.0 + 465.0) + (30 * 2000.0 + 465.0);
  out.consistent = rerun.completed && rerun.final_outer == kOuterIters &&
                   rerun.final_sum == expected;
  return out;
}

}  // namespace craftkit::bench
