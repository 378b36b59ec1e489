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

namespace craftkit {

enum class RecoveryPolicy { kNonShrinking, kShrinking };
enum class SpawnPolicy { kNoReuse, kReuse };
enum class AsyncMode { kSync, kAsyncCopy, kAsyncZeroCopy };

// Snapshot of the CRAFT_* environment variables. Taken once, at Checkpoint
// creation or at zone entry; later changes to the environment have no effect
// on objects that already captured a snapshot.
struct EnvConfig {
  std::string cp_path = ".";        // CRAFT_CP_PATH
  bool enable = true;               // CRAFT_ENABLE
  bool write_async = false;         // CRAFT_WRITE_ASYNC
  bool write_async_zero_copy = false;  // CRAFT_WRITE_ASYNC_ZERO_COPY
  bool read_cp_on_restart = true;   // CRAFT_READ_CP_ON_RESTART
  bool use_scr = true;              // CRAFT_USE_SCR
  std::string async_thread_pin_cpulist;  // CRAFT_ASYNC_THREAD_PIN_CPULIST (parsed, no-op)
  RecoveryPolicy recovery_policy = RecoveryPolicy::kNonShrinking;  // CRAFT_COMM_RECOVERY_POLICY
  SpawnPolicy spawn_policy = SpawnPolicy::kNoReuse;                // CRAFT_COMM_SPAWN_POLICY

  AsyncMode async_mode() const {
    if (!write_async) return AsyncMode::kSync;
    return write_async_zero_copy ? AsyncMode::kAsyncZeroCopy : AsyncMode::kAsyncCopy;
  }

  static EnvConfig from_environment();
};

const char* to_string(RecoveryPolicy p);
const char* to_string(SpawnPolicy p);
std::optional<RecoveryPolicy> parse_recovery_policy(const std::string& s);
std::optional<SpawnPolicy> parse_spawn_policy(const std::string& s);

}  // namespace craftkit
