"""
Tracking Validator - Consistent-tracking accuracy and objective audits.

Accuracy: at every step, learned ids are matched to true ids by a maximum
overlap assignment. A learned↔true pair that contradicts a pair committed at
an earlier step is discarded before counting, so a tracker that swaps ids
between steps loses those points.

Audit: replays the engine's state fold from a written label file and
recomputes every step's objective, reporting the comparison as a QA report
with PASS / WARN / FAIL checks.
"""

import json
import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from dynoclust.core import (
    Batch,
    BatchResult,
    StreamState,
    advance_state,
    gamma_of,
    objective,
    update_center,
)
from dynoclust.kdmeans import kd_objective
from dynoclust.kernels import batch_context, build_gram_tables
from dynoclust.sparse_centers import KernelStreamState, advance_kernel_state
from dynoclust_pipeline.agents.run_config import RunConfig

logger = logging.getLogger(__name__)

AUDIT_SCHEMA_VERSION = "0.1.0"
AUDIT_RTOL = 1e-8


class AccuracyInputError(ValueError):
    """Predicted and true label tables do not cover the same points."""


@dataclass
class AccuracyReport:
    """Consistent-tracking accuracy of a predicted labeling."""
    per_step_accuracy: List[float]
    overall: float
    matching: List[List[Tuple[int, int]]]
    consistency_removals: int
    steps: List[int] = field(default_factory=list)
    step_points: List[int] = field(default_factory=list)
    step_correct: List[int] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.steps,
            "n_points": self.step_points,
            "correct": self.step_correct,
            "accuracy": self.per_step_accuracy,
        })


def _align(pred: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    for name, frame in (("pred", pred), ("truth", truth)):
        if frame.duplicated(["t", "id"]).any():
            raise AccuracyInputError(f"{name} has duplicate (t, id) rows")
    merged = truth.merge(pred, on=["t", "id"], how="outer",
                         suffixes=("_true", "_pred"), indicator=True)
    unmatched = merged[merged["_merge"] != "both"]
    if len(unmatched) or len(pred) != len(truth):
        missing_steps = sorted(set(truth["t"]) ^ set(pred["t"]))
        raise AccuracyInputError(
            f"pred has {len(pred)} points, truth has {len(truth)}; "
            f"{len(unmatched)} unmatched (t, id) rows; steps present in only one file: {missing_steps}"
        )
    merged = merged.astype({"cluster_true": int, "cluster_pred": int})
    return merged.sort_values("t", kind="stable")


def consistent_accuracy(
    pred: pd.DataFrame,
    truth: pd.DataFrame,
    enforce_consistency: bool = True,
) -> AccuracyReport:
    """
    Fraction of points whose learned cluster is consistently matched to their true cluster.

    Args:
        pred: Label table [t, id, cluster] from a clustering run
        truth: Truth table with the same (t, id) rows
        enforce_consistency: When False each step is scored independently

    Returns:
        AccuracyReport

    Raises:
        AccuracyInputError: If the two tables do not cover the same points
    """
    merged = _align(pred, truth)
    pred_to_true: Dict[int, int] = {}
    true_to_pred: Dict[int, int] = {}
    removals = 0
    report = AccuracyReport(per_step_accuracy=[], overall=0.0, matching=[], consistency_removals=0)

    for t, step in merged.groupby("t", sort=True):
        overlap = pd.crosstab(step["cluster_pred"], step["cluster_true"])
        counts = overlap.to_numpy()
        rows, cols = linear_sum_assignment(-counts)

        kept = []
        correct = 0
        for r, c in zip(rows, cols):
            if counts[r, c] == 0:
                continue
            p, q = int(overlap.index[r]), int(overlap.columns[c])
            if enforce_consistency and (
                pred_to_true.get(p, q) != q or true_to_pred.get(q, p) != p
            ):
                removals += 1
                continue
            kept.append((p, q))
            correct += int(counts[r, c])
        if enforce_consistency:
            for p, q in kept:
                pred_to_true[p] = q
                true_to_pred[q] = p

        report.steps.append(int(t))
        report.step_points.append(len(step))
        report.step_correct.append(correct)
        report.per_step_accuracy.append(correct / len(step))
        report.matching.append(kept)

    report.consistency_removals = removals
    report.overall = sum(report.step_correct) / sum(report.step_points)
    logger.debug(f"Accuracy {report.overall:.4f} over {len(report.steps)} steps, {removals} removals")
    return report


def labels_for_batches(batches: Sequence[Batch], labels: pd.DataFrame) -> List[np.ndarray]:
    """
    Label arrays in batch point order.

    Raises:
        AccuracyInputError: If a stream point has no label or labels name unknown points
    """
    lookup = {(int(t), str(pid)): int(c) for t, pid, c in labels[["t", "id", "cluster"]].itertuples(index=False)}
    arrays = []
    n_points = 0
    for batch in batches:
        ids = batch.point_ids or tuple(f"{batch.t}-{i}" for i in range(batch.n_points))
        try:
            arrays.append(np.array([lookup[(batch.t, pid)] for pid in ids], dtype=int))
        except KeyError as e:
            raise AccuracyInputError(f"No label for stream point (t, id) = {e.args[0]}")
        n_points += batch.n_points
    if len(lookup) != n_points:
        raise AccuracyInputError(f"Label file has {len(lookup)} points, stream has {n_points}")
    return arrays


def replay_objectives(
    batches: Sequence[Batch],
    labels: Sequence[np.ndarray],
    run_config: RunConfig,
) -> List[Dict]:
    """
    Recompute every step's objective from labels alone, folding state as the engine does.

    Returns:
        One dict per step: t, objective (exact), and for kernel engines
        objective_modified as well
    """
    cfg = run_config.params
    out = []
    if run_config.algorithm == "dmeans":
        state = StreamState.empty(batches[0].dim)
        for batch, lab in zip(batches, labels):
            old = {oc.id: oc for oc in state.old_clusters}
            centers = {}
            for cid in np.unique(lab):
                members = batch.points[lab == cid]
                oc = old.get(int(cid))
                if oc is None:
                    centers[int(cid)] = update_center(None, 0.0, members)
                else:
                    centers[int(cid)] = update_center(oc.phi, gamma_of(oc.weight, oc.staleness, cfg.tau), members)
            value = objective(batch, lab, centers, state, cfg)
            result = BatchResult(
                labels=lab, centers=centers, objective=value,
                active_set=frozenset(int(k) for k in np.unique(lab)), iterations=0,
                next_id=max(state.next_id, int(lab.max()) + 1),
            )
            state = advance_state(state, result, batch, cfg)
            out.append({"t": batch.t, "objective": value})
        return out

    spec = run_config.kernel
    state = KernelStreamState.empty(batches[0].dim)
    for batch, lab in zip(batches, labels):
        context = batch_context(spec, batch.points)
        gram = build_gram_tables(batch.points, state.centers, spec, context)
        exact = kd_objective(lab, state, gram, cfg)
        modified = kd_objective(lab, state, gram, cfg, penalty="modified")
        state, _, _ = advance_kernel_state(state, lab, batch.points, spec, cfg, context=context, t=batch.t)
        out.append({"t": batch.t, "objective": exact, "objective_modified": modified})
    return out


def _relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def _compare_check(check_id: str, what: str, pairs: List[Tuple[int, float, float]], rtol: float) -> Dict:
    gaps = [(t, _relative_gap(reported, audited)) for t, reported, audited in pairs]
    failing = [t for t, gap in gaps if gap > rtol]
    worst = max((gap for _, gap in gaps), default=0.0)
    if failing:
        return {
            "check_id": check_id,
            "status": "FAIL",
            "message": f"{what} differs from the replayed value at {len(failing)} step(s): {failing[:10]}",
            "metrics": {"max_relative_gap": worst, "failing_steps": failing},
        }
    return {
        "check_id": check_id,
        "status": "PASS",
        "message": f"{what} matches the replayed value at all {len(gaps)} steps (max relative gap {worst:.2e})",
        "metrics": {"max_relative_gap": worst},
    }


def cost_audit(
    batches: Sequence[Batch],
    labels: pd.DataFrame,
    run_config: RunConfig,
    metrics: Sequence[Dict],
    rtol: float = AUDIT_RTOL,
    output_path: Optional[Path] = None,
) -> Dict:
    """
    Audit reported objectives against a replay from the written labels.

    SD-Means reports the modified-penalty objective; the audit compares it
    against the modified replay, compares `objective_exact` against the exact
    replay, and flags the variant with a WARN check.

    Returns:
        QA report dict conforming to audit_report.schema.json
    """
    label_arrays = labels_for_batches(batches, labels)
    replayed = replay_objectives(batches, label_arrays, run_config)
    reported = {int(m["t"]): m for m in metrics}
    checks = []

    stream_steps = [b.t for b in batches]
    missing = [t for t in stream_steps if t not in reported]
    if missing:
        checks.append({
            "check_id": "METRICS_STEP_COVERAGE",
            "status": "FAIL",
            "message": f"Metrics missing for {len(missing)} step(s): {missing[:10]}",
        })
    else:
        checks.append({
            "check_id": "METRICS_STEP_COVERAGE",
            "status": "PASS",
            "message": f"Metrics present for all {len(stream_steps)} steps",
        })

    covered = [r for r in replayed if r["t"] in reported]
    if run_config.algorithm == "sdmeans":
        checks.append(_compare_check(
            "OBJECTIVE_MATCHES_REPLAY", "Reported (modified-penalty) objective",
            [(r["t"], float(reported[r["t"]]["objective"]), r["objective_modified"]) for r in covered], rtol,
        ))
        exact_pairs = [
            (r["t"], float(reported[r["t"]]["objective_exact"]), r["objective"])
            for r in covered if "objective_exact" in reported[r["t"]]
        ]
        checks.append(_compare_check("EXACT_OBJECTIVE_MATCHES_REPLAY", "Reported exact objective", exact_pairs, rtol))
        checks.append({
            "check_id": "PENALTY_VARIANT",
            "status": "WARN",
            "message": "Reported objective uses the modified revival penalty n/(gamma+n)*Q*dt",
            "metrics": {"penalty_variant": "modified"},
        })
        bounds = [(r["t"], float(reported[r["t"]]["relaxed_bound"]), float(reported[r["t"]]["objective"]))
                  for r in covered if "relaxed_bound" in reported[r["t"]]]
        violations = [t for t, bound, value in bounds if bound > value + rtol * max(1.0, abs(value))]
        checks.append({
            "check_id": "RELAXED_BOUND_BELOW_OBJECTIVE",
            "status": "FAIL" if violations else "PASS",
            "message": (f"Relaxed bound exceeds the objective at steps {violations[:10]}" if violations
                        else f"Relaxed bound <= objective at all {len(bounds)} steps"),
        })
    else:
        checks.append(_compare_check(
            "OBJECTIVE_MATCHES_REPLAY", "Reported objective",
            [(r["t"], float(reported[r["t"]]["objective"]), r["objective"]) for r in covered], rtol,
        ))

    return generate_audit_report(run_config, checks, replayed, output_path)


def generate_audit_report(
    run_config: RunConfig,
    checks: List[Dict],
    replayed: List[Dict],
    output_path: Optional[Path] = None,
) -> Dict:
    """
    Assemble the audit QA report and optionally save it.

    Status is FAIL if any check fails, PASS_WITH_WARNING if any warns.
    """
    fail_count = sum(1 for c in checks if c["status"] == "FAIL")
    warn_count = sum(1 for c in checks if c["status"] == "WARN")

    overall_status = "PASS"
    if fail_count > 0:
        overall_status = "FAIL"
    elif warn_count > 0:
        overall_status = "PASS_WITH_WARNING"

    report = {
        "schema_version": AUDIT_SCHEMA_VERSION,
        "run_id": str(uuid.uuid4()),
        "created_at": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        "algorithm": run_config.algorithm,
        "penalty_variant": "modified" if run_config.algorithm == "sdmeans" else "exact",
        "config": run_config.to_dict(),
        "status": overall_status,
        "checks": checks,
        "replayed_objectives": replayed,
        "warnings": [c["message"] for c in checks if c["status"] == "WARN"],
        "errors": [c["message"] for c in checks if c["status"] == "FAIL"],
        "summary": {
            "fail_count": fail_count,
            "warn_count": warn_count,
            "check_count": len(checks),
        },
    }

    if output_path:
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w") as f:
            json.dump(report, f, indent=2)
        print(f"✓ Saved audit report to {output_path}")

    return report


def print_audit_summary(report: Dict):
    """Print human-readable audit summary."""
    print("\n" + "=" * 80)
    print("COST AUDIT SUMMARY")
    print("=" * 80)
    print(f"Status: {report['status']}")
    print(f"Algorithm: {report['algorithm']} (penalty variant: {report['penalty_variant']})")
    print(f"Run ID: {report['run_id']}")

    print(f"\nChecks ({len(report['checks'])}):")
    icons = {"PASS": "✓", "WARN": "⚠", "FAIL": "✗"}
    for check in report["checks"]:
        print(f"  {icons.get(check['status'], '?')} {check['check_id']}: {check.get('message', '')}")

    if report["errors"]:
        print(f"\n❌ ERRORS ({len(report['errors'])}):")
        for error in report["errors"]:
            print(f"  - {error}")

    if report["warnings"]:
        print(f"\n⚠️  WARNINGS ({len(report['warnings'])}):")
        for warning in report["warnings"]:
            print(f"  - {warning}")

    print("=" * 80)
