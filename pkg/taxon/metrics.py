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
A library of functions to compute the evaluation metrics from a list
of evaluation records:

  hca              hierarchical consistent accuracy (all levels correct)
  acc_leaf         accuracy at the deepest level
  hca_given_leaf   HCA restricted to records with a correct leaf
  per_level_acc    accuracy at each level index
  avg_tokens       generated tokens per answered question (TKs)

Failed records count as incorrect at every level. Any run can be
restricted to the images where another run got the leaf right before
computing metrics (leaf_correct_images, restrict_records).
"""

from dataclasses import asdict, dataclass, field

from taxon.errors import ConfigError, EmptyRecords

# Default metrics computed for a report
default_metrics = ["hca", "acc_leaf", "hca_given_leaf", "per_level_acc", "avg_tokens"]


@dataclass
class MetricReport:
    hca: float
    acc_leaf: float
    hca_given_leaf: float
    per_level_acc: list
    avg_tokens: float
    n: int
    hca_count: int = 0
    leaf_count: int = 0
    per_level_counts: list = field(default_factory=list)
    per_level_totals: list = field(default_factory=list)
    total_tokens: int = 0
    predictions: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in values.items() if k in names})


def _check(records):
    if not records:
        raise EmptyRecords("No evaluation records.")


def _all_correct(record):
    return not record.failed and len(record.levels) > 0 and all(e.correct for e in record.levels)


def _leaf_correct(record):
    return not record.failed and len(record.levels) > 0 and record.levels[-1].correct


def compute_metrics(names, records):
    return dict((name, compute_metric(name, records)) for name in names)


def compute_metric(name, records):
    try:
        function = globals()["compute_" + name]
    except KeyError:
        raise ConfigError('Unknown metric "%s".' % name) from None
    return function(records)


# Hierarchical consistent accuracy
def compute_hca(records):
    _check(records)
    return sum(1 for r in records if _all_correct(r)) / len(records)


# Leaf accuracy
def compute_acc_leaf(records):
    _check(records)
    return sum(1 for r in records if _leaf_correct(r)) / len(records)


# HCA given a correct leaf
def compute_hca_given_leaf(records):
    _check(records)
    leaf_correct = [r for r in records if _leaf_correct(r)]
    if not leaf_correct:
        return None
    return sum(1 for r in leaf_correct if _all_correct(r)) / len(leaf_correct)


def _per_level_counts(records):
    counts, totals = [], []
    for record in records:
        for entry in record.levels:
            while len(totals) <= entry.level:
                counts.append(0)
                totals.append(0)
            totals[entry.level] += 1
            if entry.correct and not record.failed:
                counts[entry.level] += 1
    return counts, totals


# Per-level accuracy
def compute_per_level_acc(records):
    _check(records)
    counts, totals = _per_level_counts(records)
    return [c / t if t > 0 else None for c, t in zip(counts, totals)]


# Average generated tokens per answered question
def compute_avg_tokens(records):
    _check(records)
    predictions = sum(len(r.levels) for r in records)
    if predictions == 0:
        raise EmptyRecords("Records contain no predictions.")
    return sum(sum(r.token_counts) for r in records) / predictions


# Aliases used in the public interface
hca = compute_hca
acc_leaf = compute_acc_leaf
hca_given_leaf = compute_hca_given_leaf
per_level_accuracy = compute_per_level_acc
avg_tokens = compute_avg_tokens


def leaf_correct_images(records):
    "Set of image references whose leaf was predicted correctly"
    return set(r.image_ref for r in records if _leaf_correct(r))


def restrict_records(records, image_refs):
    """Keep the records of the given images, e.g. to score one run on the
    images where another run got the leaf right"""
    image_refs = set(image_refs)
    return [r for r in records if r.image_ref in image_refs]


def compute_report(records):
    "Compute all metrics together with their numerators and denominators"

    _check(records)

    counts, totals = _per_level_counts(records)
    predictions = sum(len(r.levels) for r in records)
    total_tokens = sum(sum(r.token_counts) for r in records)
    hca_count = sum(1 for r in records if _all_correct(r))
    leaf_count = sum(1 for r in records if _leaf_correct(r))
    n = len(records)

    return MetricReport(hca=hca_count / n,
                        acc_leaf=leaf_count / n,
                        hca_given_leaf=hca_count / leaf_count if leaf_count else None,
                        per_level_acc=[c / t if t > 0 else None for c, t in zip(counts, totals)],
                        avg_tokens=total_tokens / predictions if predictions else 0.0,
                        n=n,
                        hca_count=hca_count,
                        leaf_count=leaf_count,
                        per_level_counts=counts,
                        per_level_totals=totals,
                        total_tokens=total_tokens,
                        predictions=predictions)
