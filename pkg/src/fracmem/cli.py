"""Command-line front end: ``fracmem {simulate,gramian,steer,verify} SPEC ...``.

Problems are JSON files (validated against ``PROBLEM_SCHEMA``); time series
are written as CSV with 17 significant digits, undefined samples as empty
cells. Exit codes: 0 ok, 2 bad input, 3 numerical failure, 4 steering
tolerance missed, 5 singular Gramian or rank condition violated.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import (DimensionError, DomainError, FracMemError, OrderError, RankError,
                     SingularGramianError)
from .fraccalc import GridFn, TimeGrid
from .steering import (SteeringProblem, gramian, kalman_steering, optimal_control,
                       rank_steering, verify_steering)
from .system import Constant, Control, FracSystem, Sampled, memory, trajectory

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_TOLERANCE = 4
EXIT_SINGULAR = 5

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_rows = {"type": "array", "items": {"type": "array", "items": {"type": ["number", "null"]}}}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["n", "m", "A", "B", "alpha", "beta", "T", "N"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "A": _matrix,
        "B": _matrix,
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "beta": {"type": "number", "minimum": 0},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "N": {"type": "integer", "minimum": 8},
        "history": {
            "oneOf": [
                {"type": "object", "required": ["type", "a"],
                 "properties": {"type": {"const": "constant"}, "a": _vector},
                 "additionalProperties": False},
                {"type": "object", "required": ["type", "values"],
                 "properties": {"type": {"const": "sampled"}, "values": _rows,
                                "exponent": {"type": ["number", "null"]}},
                 "additionalProperties": False},
            ]
        },
        "b": _vector,
        "method": {"enum": ["gramian", "rank", "kalman"]},
        "bump_order": {"type": "integer", "minimum": 0},
        "control": {
            "type": "object",
            "properties": {"mode": {"enum": ["constant", "linear"]},
                           "values": _rows, "constant": _vector},
            "additionalProperties": False,
        },
    },
}


class InputError(Exception):
    """Invalid problem description or data file."""


def _fmt(x) -> str:
    x = float(x)
    return "" if not math.isfinite(x) else format(x, ".17g")


def _write_csv(path: Path, header, columns) -> None:
    rows = np.column_stack(columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def load_spec(path, grid_override=None) -> dict:
    """Read and validate a problem file; returns the parsed dict with the grid applied."""
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read problem file {path}: {exc}") from exc
    try:
        jsonschema.validate(spec, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"schema error at {where}: {exc.message}") from exc
    if grid_override is not None:
        spec["N"] = int(grid_override)
    n, m = spec["n"], spec["m"]
    A = np.asarray(spec["A"], dtype=float)
    B = np.asarray(spec["B"], dtype=float)
    if A.shape != (n, n):
        raise InputError(f"dimension error: A has shape {A.shape}, expected ({n}, {n})")
    if B.shape != (n, m):
        raise InputError(f"dimension error: B has shape {B.shape}, expected ({n}, {m})")
    if "b" in spec and len(spec["b"]) != n:
        raise InputError(f"dimension error: b has length {len(spec['b'])}, expected {n}")
    return spec


def build_system(spec: dict):
    """FracSystem and grid described by a validated spec."""
    n = spec["n"]
    grid = TimeGrid(float(spec["T"]), int(spec["N"]))
    alpha = float(spec["alpha"])
    hist = spec.get("history", {"type": "constant", "a": [0.0] * n})
    if hist["type"] == "constant":
        if len(hist["a"]) != n:
            raise InputError(f"dimension error: history a has length {len(hist['a'])}, expected {n}")
        history = Constant(hist["a"])
    else:
        rows = hist["values"]
        if len(rows) != grid.N + 1 or any(len(r) != n for r in rows):
            raise InputError(f"dimension error: sampled history needs {grid.N + 1} rows of length {n}")
        vals = np.array([[np.nan if v is None else v for v in r] for r in rows], dtype=float)
        if "exponent" in hist:
            exponent = hist["exponent"]
        else:
            exponent = -alpha if np.isnan(vals[0]).any() else None
        if exponent is None and np.isnan(vals).any():
            raise InputError("sampled history has undefined entries")
        history = Sampled(GridFn(grid, vals, exponent))
    return FracSystem(spec["A"], spec["B"], alpha, history), grid


def build_control(spec: dict, grid: TimeGrid) -> Control:
    m = spec["m"]
    c = spec.get("control")
    if c is None:
        return Control.zeros(grid, m)
    mode = c.get("mode", "constant")
    if "constant" in c:
        if len(c["constant"]) != m:
            raise InputError(f"dimension error: constant control needs {m} entries")
        return Control(grid, np.tile(np.asarray(c["constant"], dtype=float), (grid.N + 1, 1)), mode)
    rows = c.get("values")
    if rows is None or len(rows) != grid.N + 1 or any(len(r) != m for r in rows):
        raise InputError(f"dimension error: control needs {grid.N + 1} rows of length {m}")
    return Control(grid, np.array(rows, dtype=float), mode)


def _problem(spec, sys_, grid):
    if "b" not in spec:
        raise InputError("steering needs a target vector b")
    return SteeringProblem(sys_, float(spec["beta"]), grid.T, spec["b"], grid)


def _default_tol(b) -> float:
    return 1e-3 * (1.0 + float(np.max(np.abs(b)))) if len(b) else 1e-3


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec, args.grid)
    sys_, grid = build_system(spec)
    u = build_control(spec, grid)
    x = trajectory(sys_, u, grid)
    M = memory(sys_, float(spec["beta"]), u, grid)
    n, m = sys_.n, sys_.m
    header = (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"m_{i + 1}" for i in range(n)]
              + [f"u_{i + 1}" for i in range(m)])
    _write_csv(Path(args.out), header, [grid.nodes, x.values, M.values, u.values])
    if not args.quiet:
        print(f"wrote {grid.N + 1} rows to {args.out}")
    return EXIT_OK


def cmd_gramian(args) -> int:
    spec = load_spec(args.spec, args.grid)
    sys_, grid = build_system(spec)
    b = spec.get("b", [0.0] * sys_.n)
    p = SteeringProblem(sys_, float(spec["beta"]), grid.T, b, grid)
    G = gramian(p)
    out = {"Q": G.Q, "condition_estimate": G.condition_estimate,
           "min_eigenvalue_estimate": G.min_eigenvalue_estimate}
    sys.stdout.write(_dump_json(_jsonable(out)))
    return EXIT_OK


def _summary(spec, grid, r, method, report=None, wall=None):
    out = {
        "method": method,
        "residual": r["residual"] if isinstance(r, dict) else r.residual,
        "achieved": r["achieved"] if isinstance(r, dict) else r.achieved,
        "energy": r["energy"] if isinstance(r, dict) else r.energy,
        "alpha": float(spec["alpha"]),
        "beta": float(spec["beta"]),
        "grid": {"T": grid.T, "N": grid.N, "h": grid.h},
    }
    if report is not None:
        out.update(report)
    if wall is not None:
        out["wall_time"] = wall
    return _jsonable(out)


def _summary_path(out: Path) -> Path:
    return out.with_suffix(".json") if out.suffix != ".json" else out.with_suffix(".summary.json")


def cmd_steer(args) -> int:
    t0 = time.perf_counter()
    spec = load_spec(args.spec, args.grid)
    sys_, grid = build_system(spec)
    p = _problem(spec, sys_, grid)
    method = args.method or spec.get("method", "gramian")
    if method == "gramian":
        r = optimal_control(p)
    elif method == "rank":
        r = rank_steering(p)
    else:
        r = kalman_steering(p, spec.get("bump_order"))
    tol = args.tol if args.tol is not None else _default_tol(p.b)
    u = r.control
    out = Path(args.out)
    _write_csv(out, ["t"] + [f"u_{i + 1}" for i in range(u.m)], [grid.nodes, u.values])
    report = {
        "tolerance": tol,
        "gramian_condition": r.gramian.condition_estimate if r.gramian is not None else None,
        "energy_quadrature": r.extra.get("energy_quadrature"),
        "control": {"mode": u.mode, "end_exponent": u.end_exponent, "end_limit": u.end_limit},
    }
    if "predicted_defect" in r.extra:
        report["predicted_defect"] = r.extra["predicted_defect"]
    wall = time.perf_counter() - t0 if args.timing else None
    summary = _summary(spec, grid, r, r.method, report, wall)
    _summary_path(out).write_text(_dump_json(summary))
    if not args.quiet:
        sys.stdout.write(_dump_json(summary))
    return EXIT_OK if r.residual <= tol else EXIT_TOLERANCE


def load_control_csv(path, grid: TimeGrid, m: int, meta=None) -> Control:
    """Read a ``t, u_1..u_m`` CSV written by ``steer`` (or by hand)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read control file {path}: {exc}") from exc
    if not rows or [h.strip() for h in rows[0]] != ["t"] + [f"u_{i + 1}" for i in range(m)]:
        raise InputError(f"control CSV header must be t,u_1..u_{m}")
    body = rows[1:]
    if len(body) != grid.N + 1:
        raise InputError(f"grid mismatch: control has {len(body)} rows, grid has {grid.N + 1} nodes")
    try:
        data = np.array([[float(c) if c.strip() else np.nan for c in r] for r in body])
    except ValueError as exc:
        raise InputError(f"bad number in control CSV: {exc}") from exc
    if data.shape[1] != m + 1:
        raise InputError(f"control CSV needs {m + 1} columns")
    if not np.allclose(data[:, 0], grid.nodes, rtol=1e-12, atol=1e-12 * grid.T):
        raise InputError("grid mismatch: control times differ from the problem grid")
    meta = meta or {}
    mode = meta.get("mode", "linear")
    e = meta.get("end_exponent")
    if e is None and np.isnan(data[-1, 1:]).any():
        raise InputError("control is undefined at T but no end exponent is known")
    if np.isnan(data[:-1, 1:]).any():
        raise InputError("control has undefined samples before T")
    return Control(grid, data[:, 1:], mode, e, meta.get("end_limit"))


def cmd_verify(args) -> int:
    spec = load_spec(args.spec, args.grid)
    sys_, grid = build_system(spec)
    p = _problem(spec, sys_, grid)
    meta = None
    side = Path(args.summary) if args.summary else _summary_path(Path(args.control))
    if side.exists():
        try:
            meta = json.loads(side.read_text()).get("control")
        except ValueError as exc:
            raise InputError(f"cannot parse summary {side}: {exc}") from exc
    u = load_control_csv(args.control, grid, sys_.m, meta)
    report = verify_steering(p, u)
    tol = args.tol if args.tol is not None else _default_tol(p.b)
    rest = {k: v for k, v in report.items() if k not in ("residual", "achieved", "energy")}
    rest["tolerance"] = tol
    summary = _summary(spec, grid, report, "verify", rest)
    if not args.quiet:
        sys.stdout.write(_dump_json(summary))
    return EXIT_OK if report["residual"] <= tol else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracmem", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="problem description (JSON)")
        sp.add_argument("--grid", type=int, metavar="N", help="override the number of intervals")
        sp.add_argument("--quiet", action="store_true", help="suppress console output")
        sp.add_argument("--tol", type=float, help="residual tolerance (default 1e-3 (1 + |b|_inf))")
        sp.add_argument("--timing", action="store_true", help="record wall time in the summary")

    sp = sub.add_parser("simulate", help="trajectory and memory on the grid")
    common(sp)
    sp.add_argument("out", help="output CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gramian", help="print the beta-controllability Gramian")
    common(sp)
    sp.set_defaults(func=cmd_gramian)

    sp = sub.add_parser("steer", help="compute a steering control")
    common(sp)
    sp.add_argument("out", help="control CSV (a .json summary is written next to it)")
    sp.add_argument("--method", choices=["gramian", "rank", "kalman"])
    sp.set_defaults(func=cmd_steer)

    sp = sub.add_parser("verify", help="simulate an external control")
    common(sp)
    sp.add_argument("control", help="control CSV with header t,u_1..u_m")
    sp.add_argument("--summary", help="steer summary JSON (default: next to the CSV)")
    sp.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"fracmem: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DimensionError, OrderError, DomainError) as exc:
        print(f"fracmem: invalid problem ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SingularGramianError, RankError) as exc:
        print(f"fracmem: steering impossible ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (FracMemError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fracmem: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"fracmem: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
