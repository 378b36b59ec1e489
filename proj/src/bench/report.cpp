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

#include "craftkit/bench/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "craftkit/errors.hpp"

namespace craftkit::bench {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using nlohmann::json;

json to_json_object(const OverheadReport& r) {
  return json{{"scenario", r.scenario},
              {"units", r.units},
              {"seed", r.seed},
              {"nodes", r.nodes},
              {"ranks_per_node", r.ranks_per_node},
              {"reserve_nodes", r.reserve_nodes},
              {"iters", r.iters},
              {"cp_freq", r.cp_freq},
              {"policy", r.policy},
              {"spawn", r.spawn},
              {"tier", r.tier},
              {"async_mode", r.async_mode},
              {"completions", r.completions},
              {"recoveries", r.recoveries},
              {"total_units", r.total_units},
              {"oh_cp", r.oh_cp},
              {"oh_res", r.oh_res},
              {"oh_rec", r.oh_rec},
              {"redo_iterations", r.redo_iterations},
              {"checkpoints_written", r.checkpoints_written},
              {"min_eigenvalue", r.min_eigenvalue},
              {"avg_cp_units", r.avg_cp_units},
              {"phase_revoke_shrink", r.phase_revoke_shrink},
              {"phase_spawn_info", r.phase_spawn_info},
              {"phase_spawn_merge", r.phase_spawn_merge},
              {"phase_rank_redistribution", r.phase_rank_redistribution},
              {"phase_resource_management", r.phase_resource_management}};
}

}  // namespace

std::string to_csv(const OverheadReport& r) {
  std::ostringstream out;
  out << "scenario,units,seed,nodes,ranks_per_node,reserve_nodes,iters,cp_freq,policy,spawn,"
         "tier,async_mode,completions,recoveries,total_units,oh_cp,oh_res,oh_rec,"
         "redo_iterations,checkpoints_written,min_eigenvalue,avg_cp_units,"
         "phase_revoke_shrink,phase_spawn_info,phase_spawn_merge,phase_rank_redistribution,"
         "phase_resource_management\n";
  out << r.scenario << ',' << r.units << ',' << r.seed << ',' << r.nodes << ','
      << r.ranks_per_node << ',' << r.reserve_nodes << ',' << r.iters << ',' << r.cp_freq << ','
      << r.policy << ',' << r.spawn << ',' << r.tier << ',' << r.async_mode << ','
      << r.completions << ',' << r.recoveries << ',' << r.total_units << ',' << r.oh_cp << ','
      << r.oh_res << ',' << r.oh_rec << ',' << r.redo_iterations << ','
      << r.checkpoints_written << ',' << fmt_double(r.min_eigenvalue) << ','
      << fmt_double(r.avg_cp_units) << ',' << r.phase_revoke_shrink << ',' << r.phase_spawn_info
      << ',' << r.phase_spawn_merge << ',' << r.phase_rank_redistribution << ','
      << r.phase_resource_management << '\n';
  return out.str();
}

std::string to_json(const OverheadReport& r) { return to_json_object(r).dump(2) + "\n"; }

OverheadReport report_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  OverheadReport r;
  r.scenario = j.at("scenario").get<std::string>();
  r.units = j.at("units").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.nodes = j.at("nodes").get<int>();
  r.ranks_per_node = j.at("ranks_per_node").get<int>();
  r.reserve_nodes = j.at("reserve_nodes").get<int>();
  r.iters = j.at("iters").get<long>();
  r.cp_freq = j.at("cp_freq").get<long>();
  r.policy = j.at("policy").get<std::string>();
  r.spawn = j.at("spawn").get<std::string>();
  r.tier = j.at("tier").get<std::string>();
  r.async_mode = j.at("async_mode").get<std::string>();
  r.completions = j.at("completions").get<int>();
  r.recoveries = j.at("recoveries").get<int>();
  r.total_units = j.at("total_units").get<std::uint64_t>();
  r.oh_cp = j.at("oh_cp").get<std::uint64_t>();
  r.oh_res = j.at("oh_res").get<std::uint64_t>();
  r.oh_rec = j.at("oh_rec").get<std::uint64_t>();
  r.redo_iterations = j.at("redo_iterations").get<long>();
  r.checkpoints_written = j.at("checkpoints_written").get<long>();
  r.min_eigenvalue = j.at("min_eigenvalue").get<double>();
  r.avg_cp_units = j.at("avg_cp_units").get<double>();
  r.phase_revoke_shrink = j.at("phase_revoke_shrink").get<std::uint64_t>();
  r.phase_spawn_info = j.at("phase_spawn_info").get<std::uint64_t>();
  r.phase_spawn_merge = j.at("phase_spawn_merge").get<std::uint64_t>();
  r.phase_rank_redistribution = j.at("phase_rank_redistribution").get<std::uint64_t>();
  r.phase_resource_management = j.at("phase_resource_management").get<std::uint64_t>();
  return r;
}

void write_report_file(const OverheadReport& report, const std::string& path,
                       const std::string& format) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw StorageError("cannot write report: " + path);
  if (format == "csv") {
    f << to_csv(report);
  } else if (format == "json") {
    f << to_json(report);
  } else {
    throw ConfigError("unknown report format: " + format);
  }
  f.flush();
  if (!f) throw StorageError("report write failed: " + path);
}

}  // namespace craftkit::bench
