"""``trac`` command line: track, eval, synth and solve-demo.

Exit codes: 0 success, 1 monotonicity violation (solve-demo), 2 bad config
or spec, 3 unusable data, 4 tracking failure (partial results are written).
Set ``TRAC_LOG_LEVEL`` (e.g. ``DEBUG``) for more output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .bench.metrics import emit_curves, precision_curve, success_curve
from .bench.sequence import SequenceError, load_sequence, read_results, write_results, write_sequence
from .bench.synthetic import SyntheticSpec, SyntheticSpecError, generate
from .config import ConfigError, RunConfig
from .motion import TrackingFailure
from .solver import SolverConfig, SolverError, SparseProblem, TemporalTarget, solve
from .tracker import track_sequence

log = logging.getLogger("trac")

EXIT_OK = 0
EXIT_NOT_MONOTONE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRACKING = 4
MONOTONE_SLACK = 1e-10


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


# -- track ------------------------------------------------------------------

def _track_one(cfg: RunConfig, seq_path: str, out: Path) -> tuple[int, str]:
    try:
        seq = load_sequence(seq_path)
    except SequenceError as exc:
        return EXIT_DATA, f"{exc} (path: {exc.path})"
    out.mkdir(parents=True, exist_ok=True)
    done = []
    status, code, msg = "ok", EXIT_OK, ""
    try:
        track_sequence(seq.frames(), seq.boxes[0], cfg.tracker, on_result=done.append)
    except TrackingFailure as exc:
        status, code, msg = "tracking_failure", EXIT_TRACKING, f"{seq.name}: {exc}"
    except SequenceError as exc:
        status, code, msg = "data_error", EXIT_DATA, f"{exc} (path: {exc.path})"

    write_results(out / "results.csv", [r.box for r in done], [r.frame for r in done])
    diagnostics = [
        {"frame": r.frame, "solver_iterations": r.solver_iterations, "r": r.r,
         "reconstruction_error": r.reconstruction_error,
         "state": [float(v) for v in r.state.as_array()]}
        for r in done
    ]
    _dump(out / "diagnostics.json", diagnostics)
    _dump(out / "manifest.json", {
        "config": cfg.tracker_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.tracker.seed,
        "sequence": seq.name,
        "sequence_path": str(seq_path),
        "frames_total": len(seq),
        "frames_written": len(done),
        "status": status,
        "warnings": seq.warnings,
    })
    log.info("%s: %s, %d/%d frames -> %s", seq.name, status, len(done), len(seq), out)
    return code, msg


def cmd_track(config_path: Optional[str], sequence_paths, out_dir: Optional[str],
              seed: Optional[int] = None, jobs: int = 1) -> int:
    try:
        cfg = RunConfig.load(config_path) if config_path else RunConfig()
        if seed is not None:
            cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": seed})
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    seqs = list(sequence_paths) or cfg.sequences
    out_dir = out_dir or cfg.output_dir
    if not seqs:
        return _fail(EXIT_CONFIG, "no sequence given (argument or config 'sequences')")
    if not out_dir:
        return _fail(EXIT_CONFIG, "no output directory given (--out or config 'output_dir')")
    root = Path(out_dir)
    # one sequence writes straight into out_dir, several get a subfolder each
    outs = [root] if len(seqs) == 1 else [root / Path(s).name for s in seqs]
    with ThreadPoolExecutor(max(1, jobs)) as pool:
        results = list(pool.map(lambda a: _track_one(cfg, *a), zip(seqs, outs)))
    code = max(c for c, _ in results)
    for c, msg in results:
        if c:
            print(f"error: {msg}", file=sys.stderr)
    return code


# -- eval -------------------------------------------------------------------

def _eval_pair(results_csv: str, seq_path: str):
    boxes = read_results(results_csv)
    seq = load_sequence(seq_path)
    if len(boxes) != len(seq.boxes):
        raise SequenceError(
            f"{results_csv} has {len(boxes)} rows but {seq_path} has {len(seq.boxes)} frames",
            results_csv)
    return seq.name, boxes, seq.boxes


def cmd_eval(results_csvs, sequence_paths, out_dir: str, jobs: int = 1) -> int:
    """Precision and success curves pooled over every frame of every pair.

    ``summary.json`` schema::

        {"precision_at_20": float, "success_auc": float, "frames": int,
         "metadata": {"aggregation": "pooled-frames",
                      "sequences": {name: {"precision_at_20", "success_auc", "frames"}}}}
    """
    if len(results_csvs) != len(sequence_paths) or not results_csvs:
        return _fail(EXIT_CONFIG, "give one --sequence per results file")
    try:
        with ThreadPoolExecutor(max(1, jobs)) as pool:
            pairs = list(pool.map(lambda a: _eval_pair(*a), zip(results_csvs, sequence_paths)))
    except SequenceError as exc:
        return _fail(EXIT_DATA, f"{exc} (path: {exc.path})")
    per_seq = {}
    for name, res, gt in pairs:
        p, s = precision_curve(res, gt), success_curve(res, gt)
        per_seq[name] = {**p.summary, **s.summary}
    res = np.vstack([p[1] for p in pairs])
    gt = np.vstack([p[2] for p in pairs])
    meta = {"aggregation": "pooled-frames", "sequences": per_seq}
    emit_curves([precision_curve(res, gt), success_curve(res, gt)], out_dir, metadata=meta)
    summary = json.loads((Path(out_dir) / "summary.json").read_text())
    print(f"precision@20 {summary['precision_at_20']:.4f}  success AUC {summary['success_auc']:.4f}"
          f"  ({summary['frames']} frames)")
    return EXIT_OK


# -- synth ------------------------------------------------------------------

def cmd_synth(spec_json: Optional[str], out_dir: str, seed: Optional[int] = None) -> int:
    try:
        doc = json.loads(Path(spec_json).read_text()) if spec_json else {}
        if not isinstance(doc, dict):
            raise SyntheticSpecError("spec must be a JSON object")
        if seed is not None:
            doc["seed"] = seed
        spec = SyntheticSpec.from_dict(doc)
    except (OSError, json.JSONDecodeError, SyntheticSpecError, TypeError) as exc:
        return _fail(EXIT_CONFIG, f"invalid synthetic spec: {exc}")
    frames, boxes = generate(spec)
    write_sequence(out_dir, frames, boxes, spec.attributes)
    _dump(Path(out_dir) / "spec.json", spec.to_dict())
    log.info("wrote %d frames to %s", len(frames), out_dir)
    return EXIT_OK


# -- solve-demo -------------------------------------------------------------

def _matrix(v, name) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise SolverError(f"{name} must be a matrix or vector")
    return a


def load_problem(doc: dict) -> tuple[SparseProblem, SolverConfig]:
    """Problem document::

        {"dictionaries": [D^1, ...], "observations": [X^1, ...],
         "lambda1": 0.5, "lambda2": 0.0, "alpha": 0.1, "trivial": true,
         "temporal_targets": [{"coefficients": [w^1, ...], "lag": 1, "excluded": false}],
         "max_iters": 50, "tol": 1e-6}
    """
    known = {"dictionaries", "observations", "lambda1", "lambda2", "alpha", "trivial",
             "temporal_targets", "max_iters", "tol"}
    if not isinstance(doc, dict):
        raise SolverError("problem must be a JSON object")
    unknown = set(doc) - known
    if unknown:
        raise SolverError(f"unknown problem keys: {sorted(unknown)}")
    try:
        targets = [
            TemporalTarget([np.asarray(c, dtype=float) for c in t["coefficients"]],
                           int(t.get("lag", i + 1)), bool(t.get("excluded", False)))
            for i, t in enumerate(doc.get("temporal_targets", []))
        ]
        problem = SparseProblem(
            [_matrix(d, "dictionary") for d in doc["dictionaries"]],
            [_matrix(x, "observation") for x in doc["observations"]],
            lambda1=float(doc.get("lambda1", 0.5)),
            lambda2=float(doc.get("lambda2", 0.0)),
            alpha=float(doc.get("alpha", 0.1)),
            temporal_targets=targets,
            trivial=bool(doc.get("trivial", True)),
        )
        config = SolverConfig(max_iters=int(doc.get("max_iters", 50)), tol=float(doc.get("tol", 1e-6)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SolverError(f"malformed problem: {exc}") from exc
    return problem, config


def cmd_solve_demo(problem_json: Optional[str]) -> int:
    try:
        if problem_json:
            text = Path(problem_json).read_text()
        else:
            text = resources.files("trac").joinpath("data/demo_problem.json").read_text()
        problem, config = load_problem(json.loads(text))
    except (OSError, json.JSONDecodeError, SolverError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    sol = solve(problem, config)
    values = [sol.initial_objective] + list(sol.objective_trace)
    print(f"iter {0:4d}  objective {values[0]!r}")
    for i, v in enumerate(sol.objective_trace, start=1):
        print(f"iter {i:4d}  objective {v!r}")
    worst = max((b - a for a, b in zip(values, values[1:])), default=0.0)
    print(f"final objective {values[-1]!r}")
    print(f"iterations {sol.iterations}  converged {sol.converged}")
    if worst > MONOTONE_SLACK:
        print(f"NOT MONOTONE: objective rose by {worst!r}", file=sys.stderr)
        return EXIT_NOT_MONOTONE
    print("monotone: yes")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trac", description="Sparse multimodal particle-filter tracker.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="track OTB-layout sequences")
    t.add_argument("sequences", nargs="*", help="sequence folders (default: config 'sequences')")
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--out", help="output directory (default: config 'output_dir')")
    t.add_argument("--jobs", type=int, default=1, help="sequences tracked in parallel")
    t.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    e = sub.add_parser("eval", help="precision and success curves for results files")
    e.add_argument("--results", action="append", required=True, help="results CSV (repeatable)")
    e.add_argument("--sequence", action="append", required=True, help="matching sequence folder")
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("synth", help="render a synthetic sequence in OTB layout")
    s.add_argument("spec", nargs="?", help="synthetic spec JSON (default spec if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)

    d = sub.add_parser("solve-demo", help="run the solver and check the objective trace")
    d.add_argument("problem", nargs="?", help="problem JSON (bundled demo if omitted)")
    return p


def main(argv=None) -> int:
    level = os.environ.get("TRAC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "track":
        if args.print_config:
            try:
                cfg = RunConfig.load(args.config) if args.config else RunConfig()
            except ConfigError as exc:
                return _fail(EXIT_CONFIG, str(exc))
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        return cmd_track(args.config, args.sequences, args.out, args.seed, args.jobs)
    if args.command == "eval":
        return cmd_eval(args.results, args.sequence, args.out, args.jobs)
    if args.command == "synth":
        return cmd_synth(args.spec, args.out, args.seed)
    return cmd_solve_demo(args.problem)


if __name__ == "__main__":
    sys.exit(main())
