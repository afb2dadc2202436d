# Copyright 2025 The Taxon developers
#
# This file is part of Taxon. Taxon is free software: you can
# redistribute it and/or modify it under the terms of the GNU General
# Public License as published by the Free Software Foundation, either
# version 3 of the License, or (at your option) any later version.
#
# Taxon is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY
# or FITNESS FOR A PARTICULAR PURPOSE. See the GNU General Public
# License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Taxon. If not, see <https://www.gnu.org/licenses/>.

"""
This module writes metric reports: report.json with the metrics, their
numerators and denominators and the run provenance, and report.md with
a results table in the layout

  | Method | HCA | Acc_leaf | HCA (L) | TKs |

Several reports can be put side by side in one table (compare_reports),
for example the ablation modes of the same question set.
"""

import json

from taxon.errors import ConfigError
from taxon.metrics import MetricReport


# Mapping from run mode label to name used in tables
def mode_name(mode):
    return {"full_two_stage": "Two-stage",
            "no_reasoning":   "w/o reasoning",
            "no_first_stage": "w/o first stage",
            "direct_listing": "Direct listing",
            "leaf_condition": "Leaf condition",
            "open_set":       "Open-set"}.get(mode, mode)


def _percent(value):
    return "-" if value is None else "%.2f" % (100.0 * value)


def _tokens(value):
    return "-" if value is None else "%.1f" % value


def _row(label, report):
    return "| %s | %s | %s | %s | %s |" % (label, _percent(report.hca), _percent(report.acc_leaf),
                                         _percent(report.hca_given_leaf), _tokens(report.avg_tokens))


def save_report_json(report, filename, provenance=None, mode=None):
    "Write report (and provenance) as JSON"
    data = report.to_dict()
    if mode is not None:
        data["mode"] = mode
    if provenance is not None:
        data["provenance"] = provenance
    with open(filename, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def load_report_json(filename):
    with open(filename, "r", encoding="utf-8") as f:
        data = json.load(f)
    return MetricReport.from_dict(data), data.get("mode"), data.get("provenance")


def render_report(report, label, level_names=None, provenance=None):
    "Render single report as markdown"

    lines = ["| Method | HCA | Acc_leaf | HCA (L) | TKs |",
             "|---|---|---|---|---|",
             _row(label, report),
             "",
             "| Level | Accuracy | Correct | Total |",
             "|---|---|---|---|"]
    for j, accuracy in enumerate(report.per_level_acc):
        name = level_names[j] if level_names and j < len(level_names) else str(j)
        lines.append("| %s | %s | %d | %d |" % (name, _percent(accuracy),
                                               report.per_level_counts[j],
                                               report.per_level_totals[j]))
    lines.append("")
    lines.append("Images: %d, answered questions: %d, generated tokens: %d."
                 % (report.n, report.predictions, report.total_tokens))

    if provenance is not None:
        lines.append("")
        lines.append("<!-- %s -->" % json.dumps(provenance, sort_keys=True))

    return "\n".join(lines) + "\n"


def compare_reports(reports, labels, provenance=None, note=None):
    "Render several reports as rows of one markdown table"
    if len(reports) != len(labels):
        raise ConfigError("Got %d reports but %d labels." % (len(reports), len(labels)))
    lines = ["| Method | HCA | Acc_leaf | HCA (L) | TKs |",
             "|---|---|---|---|---|"]
    lines += [_row(label, report) for label, report in zip(labels, reports)]
    if note:
        lines += ["", note]
    if provenance is not None:
        lines += ["", "<!-- %s -->" % json.dumps(provenance, sort_keys=True)]
    return "\n".join(lines) + "\n"


def save_report_markdown(text, filename):
    with open(filename, "w", encoding="utf-8") as f:
        f.write(text)
