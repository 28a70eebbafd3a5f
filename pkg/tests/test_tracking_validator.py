"""
Unit tests for tracking accuracy and the objective audit.

Tests validate:
- Accuracy under relabeling, id swaps and split clusters
- Input mismatches are rejected
- Audit replays pass for every engine and catch altered labels
- Audit reports conform to audit_report.schema.json
"""

import json

import pandas as pd
import pytest
from jsonschema import Draft202012Validator

from dynoclust_pipeline.agents.run_config import load_run_config, load_schema
from dynoclust_pipeline.agents.stream_io import labels_frame, read_labels, read_stream
from dynoclust_pipeline.agents.stream_runner import metrics_records, run_stream
from dynoclust_pipeline.agents.tracking_validator import (
    AccuracyInputError,
    consistent_accuracy,
    cost_audit,
    labels_for_batches,
    print_audit_summary,
)


def label_table(rows):
    return pd.DataFrame(rows, columns=["t", "id", "cluster"])


def two_step_tables(step_one_pred):
    """Two clusters of two points over two steps; step 1 predictions are given."""
    truth = label_table([(t, f"{t}-{i}", c) for t in (0, 1) for i, c in enumerate([0, 0, 1, 1])])
    pred = label_table(
        [(0, f"0-{i}", c) for i, c in enumerate([0, 0, 1, 1])]
        + [(1, f"1-{i}", c) for i, c in enumerate(step_one_pred)]
    )
    return pred, truth


@pytest.fixture
def audit_inputs(fixtures_dir):
    def run(config_name):
        run_config = load_run_config(fixtures_dir / config_name)
        batches = read_stream(fixtures_dir / "tiny_stream.jsonl")
        run = run_stream(batches, run_config)
        return run_config, batches, labels_frame(batches, run.labels), metrics_records(batches, run)
    return run


class TestConsistentAccuracy:
    """Tests for consistent_accuracy."""

    def test_identity(self, fixtures_dir):
        truth = read_labels(fixtures_dir / "tiny_truth.jsonl")
        report = consistent_accuracy(truth.copy(), truth)
        assert report.overall == 1.0
        assert report.per_step_accuracy == [1.0, 1.0, 1.0]
        assert report.consistency_removals == 0

    def test_relabeled_ids(self):
        pred, truth = two_step_tables([0, 0, 1, 1])
        pred["cluster"] = pred["cluster"].map({0: 5, 1: 7})
        report = consistent_accuracy(pred, truth)
        assert report.overall == 1.0
        assert report.matching[0] == [(5, 0), (7, 1)]

    def test_swapped_ids_lose_the_step(self):
        pred, truth = two_step_tables([1, 1, 0, 0])
        report = consistent_accuracy(pred, truth)
        assert report.per_step_accuracy == [1.0, 0.0]
        assert report.overall == 0.5
        assert report.consistency_removals == 2
        assert consistent_accuracy(pred, truth, enforce_consistency=False).overall == 1.0

    def test_split_cluster(self):
        pred, truth = two_step_tables([0, 2, 1, 1])
        report = consistent_accuracy(pred, truth, enforce_consistency=False)
        assert report.step_correct == [4, 3]
        assert report.overall == pytest.approx(7 / 8)

    def test_frame(self):
        pred, truth = two_step_tables([0, 0, 1, 1])
        frame = consistent_accuracy(pred, truth).to_frame()
        assert list(frame.columns) == ["t", "n_points", "correct", "accuracy"]
        assert frame["n_points"].tolist() == [4, 4]

    def test_missing_step(self):
        pred, truth = two_step_tables([0, 0, 1, 1])
        with pytest.raises(AccuracyInputError, match="steps present in only one file"):
            consistent_accuracy(pred[pred["t"] == 0], truth)

    def test_duplicate_rows(self):
        pred, truth = two_step_tables([0, 0, 1, 1])
        with pytest.raises(AccuracyInputError, match="duplicate"):
            consistent_accuracy(pd.concat([pred, pred.head(1)]), truth)


class TestLabelsForBatches:
    """Tests for labels_for_batches."""

    def test_missing_point(self, fixtures_dir):
        batches = read_stream(fixtures_dir / "tiny_stream.jsonl")
        truth = read_labels(fixtures_dir / "tiny_truth.jsonl")
        with pytest.raises(AccuracyInputError, match="No label"):
            labels_for_batches(batches, truth.iloc[1:])

    def test_extra_point(self, fixtures_dir):
        batches = read_stream(fixtures_dir / "tiny_stream.jsonl")
        truth = read_labels(fixtures_dir / "tiny_truth.jsonl")
        extra = pd.concat([truth, label_table([(9, "9-0", 0)])])
        with pytest.raises(AccuracyInputError, match="stream has 18"):
            labels_for_batches(batches, extra)


class TestCostAudit:
    """Tests for cost_audit."""

    @pytest.mark.parametrize("config_name,status", [
        ("config_dmeans.json", "PASS"),
        ("config_kdmeans.json", "PASS"),
        ("config_sdmeans.json", "PASS_WITH_WARNING"),
    ])
    def test_engine_output_passes(self, audit_inputs, config_name, status):
        run_config, batches, labels, metrics = audit_inputs(config_name)
        report = cost_audit(batches, labels, run_config, metrics)
        assert report["status"] == status
        assert report["summary"]["fail_count"] == 0
        assert len(report["replayed_objectives"]) == 3
        Draft202012Validator(load_schema("audit_report.schema.json")).validate(report)

    def test_sdmeans_checks(self, audit_inputs):
        run_config, batches, labels, metrics = audit_inputs("config_sdmeans.json")
        report = cost_audit(batches, labels, run_config, metrics)
        by_id = {c["check_id"]: c["status"] for c in report["checks"]}
        assert by_id == {
            "METRICS_STEP_COVERAGE": "PASS",
            "OBJECTIVE_MATCHES_REPLAY": "PASS",
            "EXACT_OBJECTIVE_MATCHES_REPLAY": "PASS",
            "PENALTY_VARIANT": "WARN",
            "RELAXED_BOUND_BELOW_OBJECTIVE": "PASS",
        }
        assert report["penalty_variant"] == "modified"

    @pytest.mark.parametrize("config_name", ["config_dmeans.json", "config_sdmeans.json"])
    def test_altered_label_fails(self, audit_inputs, config_name):
        run_config, batches, labels, metrics = audit_inputs(config_name)
        labels = labels.copy()
        labels.loc[0, "cluster"] = int(labels["cluster"].max()) + 1
        report = cost_audit(batches, labels, run_config, metrics)
        assert report["status"] == "FAIL"
        failing = [c for c in report["checks"] if c["status"] == "FAIL"]
        assert 0 in failing[0]["metrics"]["failing_steps"]

    def test_missing_metrics_step(self, audit_inputs):
        run_config, batches, labels, metrics = audit_inputs("config_dmeans.json")
        report = cost_audit(batches, labels, run_config, metrics[:2])
        assert report["status"] == "FAIL"
        assert report["checks"][0]["check_id"] == "METRICS_STEP_COVERAGE"

    def test_saved_report(self, audit_inputs, temp_dir, capsys):
        run_config, batches, labels, metrics = audit_inputs("config_dmeans.json")
        path = temp_dir / "qa" / "audit.json"
        report = cost_audit(batches, labels, run_config, metrics, output_path=path)
        with open(path) as f:
            assert json.load(f)["run_id"] == report["run_id"]
        print_audit_summary(report)
        out = capsys.readouterr().out
        assert "✓ Saved" in out
        assert "COST AUDIT SUMMARY" in out
