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
#include <optional>
#include <string>

#include "craftkit/store.hpp"

namespace craftkit {

// Node-local storage made available to a process by its runtime (simulated
// cluster or launcher). Absent when the process runs without a cluster.
struct NodeStoreEnv {
  std::string node_root;
  int node_id = 0;
  NodeLayout layout;
  std::function<std::string(int)> node_root_of;
  NodeScheme scheme = NodeScheme::kLocal;
};

// The slice of a process group the checkpoint core needs: identity plus a
// few collectives. Group failures surface as ProcFailedError / RevokedError
// from the collectives and are handled by the fault-tolerance layer, not
// here. The reductions let every rank commit to one common restart version
// even when their storage disagrees.
class CpComm {
 public:
  virtual ~CpComm() = default;

  virtual int rank() const = 0;
  virtual int size() const = 0;
  virtual void barrier() = 0;
  virtual std::uint64_t allreduce_min(std::uint64_t value) { return value; }
  virtual std::uint64_t allreduce_and(std::uint64_t value) { return value; }

  virtual std::optional<NodeStoreEnv> node_store() const { return std::nullopt; }
};

// Degenerate group for plain single-process checkpointing.
class SingleProcessComm final : public CpComm {
 public:
  int rank() const override { return 0; }
  int size() const override { return 1; }
  void barrier() override {}
};

}  // namespace craftkit
