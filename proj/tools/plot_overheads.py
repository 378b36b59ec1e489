#!/usr/bin/env python3
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#  http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Renders craftkit-bench report CSVs as text bar charts.

Usage:  plot_overheads.py report1.csv [report2.csv ...]

With several reports the checkpoint overheads are compared side by side,
which is the usual way to look at sync / async / node-level runs of the
same trace.
"""

import csv
import sys

BAR_WIDTH = 50

OVERHEAD_FIELDS = ["oh_cp", "oh_res", "oh_rec"]
PHASE_FIELDS = [
    "phase_revoke_shrink",
    "phase_spawn_info",
    "phase_spawn_merge",
    "phase_rank_redistribution",
    "phase_resource_management",
]


def load(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise SystemExit(f"{path}: empty report")
    return rows[0]


def bar(value, maximum):
    if maximum <= 0:
        return ""
    return "#" * max(1 if value > 0 else 0, int(BAR_WIDTH * value / maximum))


def main(argv):
    if len(argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    reports = [(path, load(path)) for path in argv[1:]]

    label = lambda r: f"{r['scenario']}/{r['async_mode']}/{r['tier']}"
    print(f"{'run':<32} {'units':<8} " + " ".join(f"{f:>12}" for f in OVERHEAD_FIELDS))
    for path, r in reports:
        print(f"{label(r):<32} {r['units']:<8} "
              + " ".join(f"{int(r[f]):>12}" for f in OVERHEAD_FIELDS))
    print()

    peak = max(int(r["oh_cp"]) for _, r in reports)
    print(f"checkpoint overhead (oh_cp, {reports[0][1]['units']}):")
    for path, r in reports:
        print(f"  {label(r):<30} {int(r['oh_cp']):>12} {bar(int(r['oh_cp']), peak)}")
    print()

    for path, r in reports:
        if int(r["recoveries"]) == 0:
            continue
        print(f"recovery breakdown for {label(r)} ({r['units']}):")
        peak_phase = max(int(r[f]) for f in PHASE_FIELDS) or 1
        for f in PHASE_FIELDS:
            name = f.removeprefix("phase_").replace("_", " ")
            print(f"  {name:<24} {int(r[f]):>12} {bar(int(r[f]), peak_phase)}")
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
