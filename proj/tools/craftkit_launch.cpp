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

// Launches a program as a local cluster of OS processes with failure
// detection and respawn support:
//
//   craftkit-launch --nodes 4 --ranks-per-node 1 --reserve 1 -- ./worker args...

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include "craftkit/hub.hpp"

int main(int argc, char** argv) {
  CLI::App app{"craftkit process launcher"};
  craftkit::Hub::Options opt;
  std::string scheme = "LOCAL";
  bool quiet = false;
  app.add_option("--nodes", opt.spec.num_nodes, "number of simulated nodes")->required();
  app.add_option("--ranks-per-node", opt.spec.ranks_per_node, "ranks hosted per node")
      ->default_val(1);
  app.add_option("--reserve", opt.spec.reserve_nodes, "spare nodes for non-shrinking recovery")
      ->default_val(0);
  app.add_option("--node-store", opt.node_store_base,
                 "base directory for node-local checkpoint storage");
  app.add_option("--node-scheme", scheme, "LOCAL, PARTNER or PARTNER-XOR")->default_val("LOCAL");
  app.add_option("--heartbeat-ms", opt.heartbeat_interval_ms, "heartbeat interval")
      ->default_val(100);
  app.add_flag("--quiet", quiet, "suppress launcher log lines");
  app.allow_extras();  // everything after -- is the program

  CLI11_PARSE(app, argc, argv);
  opt.program = app.remaining();
  while (!opt.program.empty() && opt.program.front() == "--") {
    opt.program.erase(opt.program.begin());
  }
  if (opt.program.empty()) {
    std::fprintf(stderr, "craftkit-launch: no program given after --\n");
    return 2;
  }
  opt.verbose = !quiet;
  if (scheme == "PARTNER") {
    opt.scheme = craftkit::NodeScheme::kPartner;
  } else if (scheme == "PARTNER-XOR") {
    opt.scheme = craftkit::NodeScheme::kPartnerXor;
  } else if (scheme == "LOCAL") {
    opt.scheme = craftkit::NodeScheme::kLocal;
  } else {
    std::fprintf(stderr, "craftkit-launch: unknown node scheme '%s'\n", scheme.c_str());
    return 2;
  }
  if (!opt.node_store_base.empty()) {
    std::filesystem::create_directories(opt.node_store_base);
  }

  try {
    craftkit::Hub hub(std::move(opt));
    return hub.serve();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "craftkit-launch: %s\n", e.what());
    return 1;
  }
}
