#!/usr/bin/env python3
"""
DynoClust command-line front end: generate, cluster, evaluate, sweep, audit.

Usage:
    python -m scripts.run_dynoclust gen --kind gaussians --steps 30 --seed 1 \\
        --out data/stream.jsonl --truth-out data/truth.jsonl
    python -m scripts.run_dynoclust cluster --config config.json \\
        --in data/stream.jsonl --out data/labels.jsonl --metrics-out data/metrics.jsonl
    python -m scripts.run_dynoclust eval --pred data/labels.jsonl --truth data/truth.jsonl
    python -m scripts.run_dynoclust sweep --algo dmeans --grid-file grid.json \\
        --stream-cfg stream.json --trials 10 --out sweep.csv
    python -m scripts.run_dynoclust audit --config config.json --in data/stream.jsonl \\
        --labels data/labels.jsonl --metrics data/metrics.jsonl

Exit codes: 0 success, 1 audit failure, 2 bad input file, 3 bad config.
Output files are written only after the whole command succeeds.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from dynoclust_pipeline.agents.param_sweep import load_grid, summarize_sweep, sweep, write_sweep_table
from dynoclust_pipeline.agents.run_config import ConfigValidationError, load_run_config, resolve_seed, schema_errors
from dynoclust_pipeline.agents.stream_generator import stream_from_config
from dynoclust_pipeline.agents.stream_io import (
    StreamFormatError,
    events_lines,
    label_lines,
    labels_frame,
    metrics_lines,
    read_labels,
    read_metrics,
    read_stream,
    state_document,
    stream_lines,
    write_json,
    write_text,
)
from dynoclust_pipeline.agents.stream_runner import metrics_records, run_stream
from dynoclust_pipeline.agents.tracking_validator import (
    AccuracyInputError,
    consistent_accuracy,
    cost_audit,
    print_audit_summary,
)

logger = logging.getLogger("dynoclust")

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_BAD_CONFIG = 3

GENERATOR_FLAGS = (
    "steps", "seed", "n_clusters", "pts_per_cluster", "noise_sd",
    "walk_sd", "death_prob", "pts_per_step", "radii",
)


def _read_json_object(path: str, what: str) -> Dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No such {what} file: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"{path}: invalid JSON ({e.msg} at line {e.lineno})"])
    if not isinstance(data, dict):
        raise ConfigValidationError([f"{path}: expected a JSON object"])
    return data


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _read_json_object(args.stream_cfg, "stream config") if args.stream_cfg else {}
    if args.kind:
        cfg["kind"] = args.kind
    for name in GENERATOR_FLAGS:
        value = getattr(args, name)
        if value is not None:
            cfg[name] = value
    errors = schema_errors(cfg, "stream_config.schema.json")
    if errors:
        raise ConfigValidationError(errors)
    cfg["seed"] = resolve_seed(args.seed, cfg.get("seed"))

    try:
        stream = stream_from_config(cfg)
    except (TypeError, ValueError) as e:
        raise ConfigValidationError([str(e)])

    outputs = {args.out: stream_lines(stream.batches)}
    if args.truth_out:
        outputs[args.truth_out] = label_lines(labels_frame(stream.batches, stream.truth))
    if args.events_out:
        outputs[args.events_out] = events_lines(stream.events)
    for path, text in outputs.items():
        write_text(path, text)

    print("=" * 80)
    print(f"GENERATED {cfg['kind'].upper()} STREAM")
    print("=" * 80)
    print(f"  Steps:          {len(stream.batches)}")
    print(f"  Points:         {stream.n_points}")
    print(f"  True clusters:  {stream.n_true_clusters}")
    for path in outputs:
        print(f"✓ Saved {path}")
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config, seed=args.seed)
    batches = read_stream(args.input)
    run = run_stream(batches, run_config)

    outputs = {args.out: label_lines(labels_frame(batches, run.labels))}
    if args.metrics_out:
        outputs[args.metrics_out] = metrics_lines(metrics_records(batches, run))
    for path, text in outputs.items():
        write_text(path, text)
    if args.state_out:
        write_json(args.state_out, state_document(run.final_state, run_config.algorithm))

    print("=" * 80)
    print(f"CLUSTERED {len(batches)} BATCHES WITH {run_config.algorithm.upper()}")
    print("=" * 80)
    print(f"  Final clusters carried: {run.k_total[-1]}")
    print(f"  Total objective:        {sum(r.objective for r in run.results):.6g}")
    print(f"  Runtime:                {run.total_seconds:.2f}s")
    not_converged = [r for r in run.results if not r.converged]
    if not_converged:
        print(f"⚠ {len(not_converged)} batch(es) hit max_iters before converging")
    if run.flags:
        print(f"⚠ {len(run.flags)} numerical flag(s); see log")
    for path in list(outputs) + ([args.state_out] if args.state_out else []):
        print(f"✓ Saved {path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    report = consistent_accuracy(
        read_labels(args.pred),
        read_labels(args.truth),
        enforce_consistency=not args.no_consistency,
    )
    table = report.to_frame().astype({"t": object})
    overall = pd.DataFrame([{
        "t": "overall",
        "n_points": int(table["n_points"].sum()),
        "correct": int(table["correct"].sum()),
        "accuracy": report.overall,
    }])
    sys.stdout.write(pd.concat([table, overall], ignore_index=True).to_csv(index=False))
    logger.info(f"Overall accuracy {report.overall:.4f} ({report.consistency_removals} inconsistent pairs removed)")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = load_grid(args.grid_file)
    stream_cfg = _read_json_object(args.stream_cfg, "stream config")
    base_config = _read_json_object(args.base_config, "base config") if args.base_config else {}
    errors = []
    if args.trials < 1:
        errors.append(f"--trials must be >= 1, got {args.trials}")
    if args.workers < 1:
        errors.append(f"--workers must be >= 1, got {args.workers}")
    errors.extend(schema_errors(stream_cfg, "stream_config.schema.json"))
    if errors:
        raise ConfigValidationError(errors)
    if args.seed is not None:
        base_config["seed"] = args.seed

    table = sweep(args.algo, grid, args.trials, stream_cfg, base_config, workers=args.workers)
    write_sweep_table(table, args.out, parquet=args.parquet)

    print("\n" + "=" * 80)
    print(f"SWEEP SUMMARY ({args.algo}, {args.trials} trial(s) per cell)")
    print("=" * 80)
    print(summarize_sweep(table).to_string(index=False))
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config, seed=args.seed)
    batches = read_stream(args.input)
    report = cost_audit(
        batches,
        read_labels(args.labels),
        run_config,
        read_metrics(args.metrics),
        output_path=Path(args.out) if args.out else None,
    )
    print_audit_summary(report)
    return EXIT_AUDIT_FAILED if report["status"] == "FAIL" else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a synthetic stream with ground truth")
    gen.add_argument("--kind", choices=["gaussians", "rings"], help="Stream family")
    gen.add_argument("--stream-cfg", help="JSON generator config (flags override its keys)")
    gen.add_argument("--steps", type=int)
    gen.add_argument("--seed", type=int, help="Overrides DYNOCLUST_SEED and the stream config seed")
    gen.add_argument("--n-clusters", type=int, help="Gaussians: live clusters per step")
    gen.add_argument("--pts-per-cluster", type=int, help="Gaussians: points per cluster per step")
    gen.add_argument("--death-prob", type=float, help="Gaussians: per-step death probability")
    gen.add_argument("--pts-per-step", type=int, help="Rings: points per step over all rings")
    gen.add_argument("--radii", type=float, nargs="+", help="Rings: ring radii (0 is a blob)")
    gen.add_argument("--noise-sd", type=float)
    gen.add_argument("--walk-sd", type=float)
    gen.add_argument("--out", required=True, help="Stream JSONL output")
    gen.add_argument("--truth-out", help="Truth label JSONL output")
    gen.add_argument("--events-out", help="Birth/death event JSONL output")
    gen.set_defaults(handler=cmd_gen)

    cluster = sub.add_parser("cluster", help="Cluster a stream")
    cluster.add_argument("--config", required=True, help="Run config JSON")
    cluster.add_argument("--in", dest="input", required=True, help="Stream JSONL input")
    cluster.add_argument("--out", required=True, help="Label JSONL output")
    cluster.add_argument("--metrics-out", help="Per-step metrics JSONL output")
    cluster.add_argument("--state-out", help="Final carried-state JSON output")
    cluster.add_argument("--seed", type=int, help="Overrides DYNOCLUST_SEED and the config seed")
    cluster.set_defaults(handler=cmd_cluster)

    evaluate = sub.add_parser("eval", help="Consistent-tracking accuracy as CSV on stdout")
    evaluate.add_argument("--pred", required=True, help="Predicted label JSONL")
    evaluate.add_argument("--truth", required=True, help="Truth label JSONL")
    evaluate.add_argument("--no-consistency", action="store_true",
                          help="Score each step independently")
    evaluate.set_defaults(handler=cmd_eval)

    grid = sub.add_parser("sweep", help="Grid search over (lambda, t_q, k_tau)")
    grid.add_argument("--algo", required=True, choices=["dmeans", "kdmeans", "sdmeans"])
    grid.add_argument("--grid-file", required=True, help='JSON {"lambda": [...], "t_q": [...], "k_tau": [...]}')
    grid.add_argument("--stream-cfg", required=True, help="JSON generator config")
    grid.add_argument("--base-config", help="JSON run-config keys shared by every cell (kernel, budget, ...)")
    grid.add_argument("--trials", type=int, default=1)
    grid.add_argument("--workers", type=int, default=1)
    grid.add_argument("--seed", type=int, help="Base engine seed (trial i uses seed + i)")
    grid.add_argument("--out", required=True, help="CSV output")
    grid.add_argument("--parquet", action="store_true", help="Also write a Parquet copy")
    grid.set_defaults(handler=cmd_sweep)

    audit = sub.add_parser("audit", help="Recompute objectives from written labels")
    audit.add_argument("--config", required=True, help="Run config JSON used for clustering")
    audit.add_argument("--in", dest="input", required=True, help="Stream JSONL input")
    audit.add_argument("--labels", required=True, help="Label JSONL from cluster")
    audit.add_argument("--metrics", required=True, help="Metrics JSONL from cluster")
    audit.add_argument("--out", help="QA report JSON output")
    audit.add_argument("--seed", type=int)
    audit.set_defaults(handler=cmd_audit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    try:
        return args.handler(args)
    except (StreamFormatError, FileNotFoundError, AccuracyInputError) as e:
        logger.error(str(e))
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ConfigValidationError as e:
        logger.error(str(e))
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
