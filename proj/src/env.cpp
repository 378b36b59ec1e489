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

#include "craftkit/env.hpp"

#include <cstdio>
#include <cstdlib>

#include "craftkit/errors.hpp"

namespace craftkit {

namespace {

bool env_flag(const char* name, bool dflt) {
  const char* v = std::getenv(name);
  if (v == nullptr || v[0] == '\0') return dflt;
  return std::string(v) != "0";
}

}  // namespace

EnvConfig EnvConfig::from_environment() {
  EnvConfig cfg;
  if (const char* p = std::getenv("CRAFT_CP_PATH"); p != nullptr && p[0] != '\0') {
    cfg.cp_path = p;
  }
  cfg.enable = env_flag("CRAFT_ENABLE", true);
  cfg.write_async = env_flag("CRAFT_WRITE_ASYNC", false);
  cfg.write_async_zero_copy = env_flag("CRAFT_WRITE_ASYNC_ZERO_COPY", false);
  cfg.read_cp_on_restart = env_flag("CRAFT_READ_CP_ON_RESTART", true);
  cfg.use_scr = env_flag("CRAFT_USE_SCR", true);
  if (const char* p = std::getenv("CRAFT_ASYNC_THREAD_PIN_CPULIST"); p != nullptr) {
    // Accepted for compatibility; pinning itself is not performed.
    cfg.async_thread_pin_cpulist = p;
    std::fprintf(stderr, "craftkit: CRAFT_ASYNC_THREAD_PIN_CPULIST=%s parsed (pinning not applied)\n", p);
  }
  if (const char* p = std::getenv("CRAFT_COMM_RECOVERY_POLICY"); p != nullptr && p[0] != '\0') {
    auto parsed = parse_recovery_policy(p);
    if (!parsed) throw ConfigError(std::string("invalid CRAFT_COMM_RECOVERY_POLICY: ") + p);
    cfg.recovery_policy = *parsed;
  }
  if (const char* p = std::getenv("CRAFT_COMM_SPAWN_POLICY"); p != nullptr && p[0] != '\0') {
    auto parsed = parse_spawn_policy(p);
    if (!parsed) throw ConfigError(std::string("invalid CRAFT_COMM_SPAWN_POLICY: ") + p);
    cfg.spawn_policy = *parsed;
  }
  return cfg;
}

const char* to_string(RecoveryPolicy p) {
  return p == RecoveryPolicy::kShrinking ? "SHRINKING" : "NON-SHRINKING";
}

const char* to_string(SpawnPolicy p) {
  return p == SpawnPolicy::kReuse ? "REUSE" : "NO-REUSE";
}

std::optional<RecoveryPolicy> parse_recovery_policy(const std::string& s) {
  if (s == "NON-SHRINKING") return RecoveryPolicy::kNonShrinking;
  if (s == "SHRINKING") return RecoveryPolicy::kShrinking;
  return std::nullopt;
}

std::optional<SpawnPolicy> parse_spawn_policy(const std::string& s) {
  if (s == "NO-REUSE") return SpawnPolicy::kNoReuse;
  if (s == "REUSE") return SpawnPolicy::kReuse;
  return std::nullopt;
}

}  // namespace craftkit
