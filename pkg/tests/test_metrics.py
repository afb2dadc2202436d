import json

import numpy
import pytest

from taxon.errors import ConfigError, EmptyRecords
from taxon.metrics import (acc_leaf, avg_tokens, compute_metric, compute_metrics,
                           compute_report, default_metrics, hca, hca_given_leaf,
                           leaf_correct_images, per_level_accuracy, restrict_records)
from taxon.orchestrator import EvalRecord, LevelEntry
from taxon.report import (compare_reports, load_report_json, render_report,
                          save_report_json)

eps = 1e-12


def make_record(bits, tokens, failed=False, name="x"):
    levels = [LevelEntry(j, "label%d" % j, None, None, bool(b)) for j, b in enumerate(bits)]
    return EvalRecord(name, "leaf", "full_two_stage", levels, token_counts=list(tokens),
                      failed=failed)


def random_records(rng):
    records = []
    for i in range(rng.integers(1, 20)):
        depth = rng.integers(1, 8)
        bits = rng.random(depth) < rng.uniform(0.3, 1.0)
        tokens = rng.integers(0, 200, size=rng.integers(1, depth + 2))
        records.append(make_record(bits, tokens, failed=rng.random() < 0.05, name="img%d" % i))
    return records


def oracle(records):
    "Brute-force metrics"
    indicators = [[e.correct and not r.failed for e in r.levels] for r in records]
    n = len(records)
    hca = sum(all(bits) for bits in indicators) / n
    leaf = [bits for bits in indicators if bits[-1]]
    acc_leaf = len(leaf) / n
    given = sum(all(bits) for bits in leaf) / len(leaf) if leaf else None
    per_level = []
    for j in range(max(len(bits) for bits in indicators)):
        column = [bits[j] for bits in indicators if len(bits) > j]
        per_level.append(sum(column) / len(column))
    tokens = sum(sum(r.token_counts) for r in records) / sum(len(bits) for bits in indicators)
    return hca, acc_leaf, given, per_level, tokens


def test_oracle_equivalence():
    "Test metrics against brute force on random record sets"
    rng = numpy.random.default_rng(0)
    for _ in range(1000):
        records = random_records(rng)
        expected = oracle(records)
        report = compute_report(records)
        assert (hca(records), acc_leaf(records), hca_given_leaf(records),
                per_level_accuracy(records), avg_tokens(records)) == expected
        assert (report.hca, report.acc_leaf, report.hca_given_leaf,
                report.per_level_acc, report.avg_tokens) == expected


def test_invariants():
    "Test HCA bounds, product identity and permutation invariance"
    rng = numpy.random.default_rng(1)
    for _ in range(1000):
        records = random_records(rng)
        report = compute_report(records)
        assert 0.0 <= report.hca <= report.acc_leaf <= 1.0
        if report.hca_given_leaf is not None:
            assert abs(report.hca_given_leaf * report.acc_leaf - report.hca) < eps
        else:
            assert report.hca == 0.0
        shuffled = [records[i] for i in rng.permutation(len(records))]
        assert hca(shuffled) == report.hca
        assert acc_leaf(shuffled) == report.acc_leaf


def test_examples():
    "Test metrics on small hand-computed examples"
    records = [make_record([1, 1, 1], [10]), make_record([1, 0, 1], [10]),
               make_record([1, 1, 0], [10]), make_record([0, 0, 0], [10])]
    assert hca(records) == 0.25
    assert acc_leaf(records) == 0.5
    assert hca_given_leaf(records) == 0.5
    assert per_level_accuracy(records) == [0.75, 0.5, 0.5]
    assert hca_given_leaf([make_record([1, 0], [1])]) is None


def test_tokens_per_question():
    "Test average tokens per answered question"
    assert avg_tokens([make_record([1], [90, 3])]) == 93.0
    assert avg_tokens([make_record([1] * 7, [10] * 8)]) == 80.0 / 7


def test_failed_records():
    "Test that failed records are incorrect at every level"
    records = [make_record([1, 1], [5]), make_record([1, 1], [5], failed=True)]
    assert hca(records) == 0.5
    assert per_level_accuracy(records) == [0.5, 0.5]


def test_empty_records():
    "Test empty input"
    for name in default_metrics:
        with pytest.raises(EmptyRecords):
            compute_metric(name, [])
    with pytest.raises(EmptyRecords):
        compute_report([])


def test_dispatch():
    "Test metric dispatch by name"
    records = [make_record([1, 1], [4]), make_record([0, 1], [6])]
    values = compute_metrics(default_metrics, records)
    assert values == {"hca": 0.5, "acc_leaf": 1.0, "hca_given_leaf": 0.5,
                      "per_level_acc": [0.5, 1.0], "avg_tokens": 2.5}
    with pytest.raises(ConfigError):
        compute_metric("f1", records)


def test_report_files(tmp_path):
    "Test report.json and report.md"
    records = [make_record([1, 1], [4]), make_record([0, 1], [6])]
    report = compute_report(records)
    filename = str(tmp_path / "report.json")
    stamp = {"tool": "taxon", "version": "1.0.0", "config_hash": "abc", "seed": 0}
    save_report_json(report, filename, stamp, "full_two_stage")
    loaded, mode, provenance = load_report_json(filename)
    assert loaded == report
    assert mode == "full_two_stage" and provenance == stamp
    with open(filename) as f:
        data = json.load(f)
    assert (data["hca_count"], data["leaf_count"], data["predictions"]) == (1, 2, 4)

    text = render_report(report, "Two-stage", ["kingdom", "phylum"], stamp)
    lines = text.splitlines()
    assert lines[0] == "| Method | HCA | Acc_leaf | HCA (L) | TKs |"
    assert lines[2] == "| Two-stage | 50.00 | 100.00 | 50.00 | 2.5 |"
    assert "| kingdom | 50.00 | 1 | 2 |" in lines


def test_compare_reports():
    "Test comparison table"
    good = compute_report([make_record([1, 1], [4])])
    bad = compute_report([make_record([1, 0], [4])])
    lines = compare_reports([good, bad], ["A", "B"]).splitlines()
    assert lines[2] == "| A | 100.00 | 100.00 | 100.00 | 2.0 |"
    assert lines[3] == "| B | 0.00 | 0.00 | - | 2.0 |"
    with pytest.raises(ConfigError):
        compare_reports([good], ["A", "B"])

    text = compare_reports([good, bad], ["A", "B"], {"seed": 2}, "Restricted to 1 images.")
    assert text.splitlines()[-3:] == ["Restricted to 1 images.", "", '<!-- {"seed": 2} -->']


def test_condition_on_other_run():
    "Test scoring one run on the images where another run got the leaf right"
    listing = [make_record([1, 1, 1], [5], name="a"), make_record([1, 0, 1], [5], name="b"),
               make_record([1, 1, 0], [5], name="c"),
               make_record([1, 1, 1], [5], failed=True, name="d")]
    assert leaf_correct_images(listing) == {"a", "b"}

    conditioned = [make_record([1, 1, 1], [5], name="a"), make_record([0, 1, 1], [5], name="b"),
                   make_record([1, 1, 1], [5], name="c"), make_record([1, 1, 1], [5], name="d")]
    assert hca(conditioned) == 0.75
    subset = restrict_records(conditioned, leaf_correct_images(listing))
    assert [r.image_ref for r in subset] == ["a", "b"]
    assert hca(subset) == 0.5
    assert restrict_records(conditioned, set()) == []
