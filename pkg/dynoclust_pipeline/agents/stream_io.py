"""
Stream IO - JSON Lines readers and writers for every DynoClust file.

Formats (one JSON object per line, floats in shortest round-trip form):
- stream:  {"t": int, "id": str, "x": [float, ...]}
- labels:  {"t": int, "id": str, "cluster": int}   (truth files use the same)
- metrics: {"t", "objective", "iters", "k_active", "k_total", "seconds", ...}
- events:  {"t": int, "event": "birth"|"death", "cluster": int}

A batch is a maximal run of lines with equal `t`; `t` must strictly
increase from one batch to the next.
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from dynoclust.core import Batch, BatchResult, StreamState
from dynoclust.sparse_centers import KernelStreamState

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ["t", "id", "cluster"]


class StreamFormatError(ValueError):
    """Malformed input line; `line_number` is 1-based."""

    def __init__(self, message: str, line_number: int, path: Optional[Path] = None):
        where = f"{path}:{line_number}" if path else f"line {line_number}"
        super().__init__(f"{where}: {message}")
        self.line_number = line_number
        self.path = path


def _iter_json_lines(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"No such input file: {path}")
    with open(path) as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise StreamFormatError(f"invalid JSON ({e.msg})", line_number, path)
            if not isinstance(record, dict):
                raise StreamFormatError("expected a JSON object", line_number, path)
            yield line_number, record


def _check_int(value, name: str, line_number: int, path: Path) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise StreamFormatError(f"'{name}' must be an integer, got {value!r}", line_number, path)
    return value


def read_stream(path: Union[str, Path]) -> List[Batch]:
    """
    Read a JSONL stream into batches.

    Raises:
        FileNotFoundError: If the file does not exist
        StreamFormatError: On the first malformed line (with its line number)
    """
    path = Path(path)
    batches: List[Batch] = []
    current_t, ids, rows = None, [], []
    dim = None
    seen_t = set()

    def flush():
        if rows:
            batches.append(Batch(t=current_t, points=np.array(rows, dtype=float), point_ids=tuple(ids)))

    for line_number, record in _iter_json_lines(path):
        missing = {"t", "id", "x"} - set(record)
        if missing:
            raise StreamFormatError(f"missing field(s) {sorted(missing)}", line_number, path)
        t = _check_int(record["t"], "t", line_number, path)
        if not isinstance(record["id"], str):
            raise StreamFormatError(f"'id' must be a string, got {record['id']!r}", line_number, path)
        x = record["x"]
        if (
            not isinstance(x, list)
            or not x
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x)
            or not all(math.isfinite(v) for v in x)
        ):
            raise StreamFormatError("'x' must be a nonempty list of finite numbers", line_number, path)
        if dim is None:
            dim = len(x)
        elif len(x) != dim:
            raise StreamFormatError(f"'x' has dimension {len(x)}, expected {dim}", line_number, path)

        if t != current_t:
            if t in seen_t or (current_t is not None and t < current_t):
                raise StreamFormatError(f"t={t} does not increase after t={current_t}", line_number, path)
            flush()
            current_t, ids, rows = t, [], []
            seen_t.add(t)
        ids.append(record["id"])
        rows.append([float(v) for v in x])

    flush()
    if not batches:
        raise StreamFormatError("stream is empty", 0, path)
    logger.info(f"Read {len(batches)} batches ({sum(b.n_points for b in batches)} points) from {path}")
    return batches


def read_labels(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a label or truth file.

    Returns:
        DataFrame with columns [t, id, cluster] in file order

    Raises:
        StreamFormatError: On malformed lines or duplicate (t, id) pairs
    """
    path = Path(path)
    records = []
    seen = set()
    for line_number, record in _iter_json_lines(path):
        missing = set(LABEL_COLUMNS) - set(record)
        if missing:
            raise StreamFormatError(f"missing field(s) {sorted(missing)}", line_number, path)
        t = _check_int(record["t"], "t", line_number, path)
        cluster = _check_int(record["cluster"], "cluster", line_number, path)
        if not isinstance(record["id"], str):
            raise StreamFormatError(f"'id' must be a string, got {record['id']!r}", line_number, path)
        key = (t, record["id"])
        if key in seen:
            raise StreamFormatError(f"duplicate point (t={t}, id={record['id']!r})", line_number, path)
        seen.add(key)
        records.append({"t": t, "id": record["id"], "cluster": cluster})
    return pd.DataFrame(records, columns=LABEL_COLUMNS)


def _dump_lines(records: Iterable[Dict]) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def stream_lines(batches: Sequence[Batch]) -> str:
    return _dump_lines(
        {"t": b.t, "id": pid, "x": row.tolist()}
        for b in batches
        for pid, row in zip(_ids(b), b.points)
    )


def labels_frame(batches: Sequence[Batch], labels: Sequence[np.ndarray]) -> pd.DataFrame:
    """Label table for batches and one label array per batch."""
    records = [
        {"t": b.t, "id": pid, "cluster": int(c)}
        for b, lab in zip(batches, labels)
        for pid, c in zip(_ids(b), lab)
    ]
    return pd.DataFrame(records, columns=LABEL_COLUMNS)


def label_lines(frame: pd.DataFrame) -> str:
    return _dump_lines(
        {"t": int(t), "id": str(pid), "cluster": int(c)}
        for t, pid, c in frame[LABEL_COLUMNS].itertuples(index=False)
    )


def metrics_record(batch: Batch, result: BatchResult, k_total: int, seconds: float) -> Dict:
    """One metrics line for a clustered batch."""
    record = {
        "t": batch.t,
        "objective": float(result.objective),
        "iters": int(result.iterations),
        "k_active": len(result.active_set),
        "k_total": int(k_total),
        "seconds": float(seconds),
        "converged": bool(result.converged),
    }
    for key in ("objective_exact", "relaxed_bound"):
        if key in result.extras:
            record[key] = float(result.extras[key])
    return record


def metrics_lines(records: Sequence[Dict]) -> str:
    return _dump_lines(records)


def read_metrics(path: Union[str, Path]) -> List[Dict]:
    """Read a metrics file (one record per batch)."""
    path = Path(path)
    records = []
    for line_number, record in _iter_json_lines(path):
        if "t" not in record or "objective" not in record:
            raise StreamFormatError("metrics line needs 't' and 'objective'", line_number, path)
        records.append(record)
    return records


def events_lines(events: Sequence[Dict]) -> str:
    return _dump_lines(events)


def state_document(state: Union[StreamState, KernelStreamState], algorithm: str) -> Dict:
    """
    JSON document for the final carried state.

    Vector centers for D-Means; support coefficients and points for the
    kernel engines.
    """
    if isinstance(state, StreamState):
        clusters = [
            {"id": oc.id, "weight": float(oc.weight), "staleness": int(oc.staleness),
             "center": np.asarray(oc.phi).tolist()}
            for oc in state.old_clusters
        ]
    else:
        clusters = [
            {"id": c.id, "weight": float(c.weight), "staleness": int(c.staleness),
             "coeffs": c.coeffs.tolist(), "support": c.support.tolist(),
             "achieved_eps": float(c.achieved_eps)}
            for c in state.centers
        ]
    return {"algorithm": algorithm, "dim": state.dim, "next_id": state.next_id, "clusters": clusters}


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(text)
    return path


def write_json(path: Union[str, Path], document: Dict) -> Path:
    return write_text(path, json.dumps(document, indent=2) + "\n")


def _ids(batch: Batch) -> Sequence[str]:
    if batch.point_ids is not None:
        return batch.point_ids
    return [f"{batch.t}-{i}" for i in range(batch.n_points)]
