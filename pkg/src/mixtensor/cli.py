"""Experiment runner.

Usage::

    python -m mixtensor run CONFIG [--jobs K] [--out DIR] [--seed-override N]
    python -m mixtensor summarize GLOB [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 solver failure.
See ``README.md`` for the configuration schema.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import glob
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, ContractViolation, ConvergenceFailure, NumericalError
from .minmin import MinMinProblem, joint_fgm_solve, minmin_solve
from .tensor import CompositeObjective, atmi3_restarted, atmi3_run, bilevel_restarted
from .trace import Trace, read_trace, write_rows
from .zoo import make_instance, reference_solve

__all__ = ["ExperimentConfig", "load_config", "run_experiment", "summarize", "main"]

METHODS = ("mixed_unconstrained", "mixed_compact", "joint_fgm", "atmi3_only", "bilevel_only")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

_PROBLEM_KEYS = {"seed": int, "m": int, "n": int, "mu_x": float, "mu_y": float,
                 "coupling": float, "sigma": float, "r_x": float, "r_y": float,
                 "y_scale": float, "l_b": float, "logcosh": float}
_SUMMARY_COLUMNS = ("cell", "method", "runs", "final_gap_median", "grad_x_calls_median",
                    "grad_y_calls_median", "hess_y_calls_median", "cost_median", "cost_iqr",
                    "relative_cost", "wall_ms_median")


@dataclass
class ExperimentConfig:
    """Parsed configuration; see the module docstring and README for the file format."""

    problem: dict
    methods: tuple
    eps: tuple
    repetitions: int = 1
    mode: str = "per_stage"
    slope_N: tuple = ()
    slope_distance: float = 1.0
    sweep_key: str | None = None
    sweep_values: tuple = ()
    out_dir: str = "out"
    source: str = "<config>"
    extra: dict = field(default_factory=dict)


def _line_of(text, section, key=None):
    """1-based line of ``[section]`` or of ``key`` inside it (0 if absent)."""
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section:
            k = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            if k == key:
                return i
    return 0


def _floats(raw):
    return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())


def load_config(path):
    """Read and validate an INI experiment file.

    Raises
    ------
    ConfigurationError
        With a ``path:line:`` prefix pointing at the offending entry.
    """
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigurationError(f"{path}:0: cannot read config ({err.strerror})") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as err:
        line = getattr(err, "lineno", 0) or 0
        msg = str(err).splitlines()[0]
        raise ConfigurationError(f"{path}:{line}: {msg}") from None

    def fail(section, key, msg):
        raise ConfigurationError(f"{path}:{_line_of(text, section, key)}: {msg}")

    for sec in ("problem", "run"):
        if not cp.has_section(sec):
            raise ConfigurationError(f"{path}:0: missing section [{sec}]")
    known = {"problem", "run", "sweep", "output"}
    for sec in cp.sections():
        if sec not in known:
            fail(sec, None, f"unknown section [{sec}]")

    problem = {}
    for key, raw in cp.items("problem"):
        if key not in _PROBLEM_KEYS:
            fail("problem", key, f"unknown problem key {key!r}")
        if raw.strip().lower() == "none":
            problem[key] = None
            continue
        try:
            problem[key] = _PROBLEM_KEYS[key](raw)
        except ValueError:
            fail("problem", key, f"{key} = {raw!r} is not a valid {_PROBLEM_KEYS[key].__name__}")
    for key in ("seed", "m", "n"):
        if problem.get(key) is None:
            fail("problem", None, f"[problem] needs {key}")
    if not problem["m"] >= problem["n"] >= 1:
        fail("problem", "m", "need m >= n >= 1")

    run = dict(cp.items("run"))
    allowed = {"methods", "eps", "repetitions", "mode", "slope_n", "slope_distance"}
    for key in run:
        if key not in allowed:
            fail("run", key, f"unknown run key {key!r}")
    methods = tuple(m.strip() for m in run.get("methods", "").split(",") if m.strip())
    if not methods:
        fail("run", "methods", "no methods given")
    for mth in methods:
        if mth not in METHODS:
            fail("run", "methods", f"unknown method {mth!r} (choose from {', '.join(METHODS)})")
    try:
        eps = _floats(run.get("eps", ""))
    except ValueError:
        fail("run", "eps", "eps must be a comma-separated list of numbers")
    if not eps:
        fail("run", "eps" if "eps" in run else None, "empty eps grid")
    if any(not (e > 0 and math.isfinite(e)) for e in eps):
        fail("run", "eps", "eps values must be positive")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        fail("run", "eps", "eps values must be strictly descending")
    try:
        reps = int(run.get("repetitions", "1"))
    except ValueError:
        fail("run", "repetitions", "repetitions must be an integer")
    if reps < 1:
        fail("run", "repetitions", "repetitions must be at least 1")
    mode = run.get("mode", "per_stage").strip()
    if mode not in ("per_stage", "fixed"):
        fail("run", "mode", "mode must be per_stage or fixed")
    try:
        slope_N = tuple(int(v) for v in _floats(run.get("slope_n", "")))
        slope_distance = float(run.get("slope_distance", "1.0"))
    except ValueError:
        fail("run", "slope_n", "slope_N must be a list of integers")
    if any(N < 1 for N in slope_N):
        fail("run", "slope_n", "slope_N entries must be positive")

    if "mixed_compact" in methods or "bilevel_only" in methods:
        if problem.get("r_y") is None:
            fail("problem", "r_y" if "r_y" in problem else None,
                 "mixed_compact and bilevel_only need a finite r_y")
    if "mixed_unconstrained" in methods or "atmi3_only" in methods:
        if problem.get("r_y") is not None and any(
                m in methods for m in ("mixed_unconstrained", "atmi3_only")):
            fail("problem", "r_y", "mixed_unconstrained and atmi3_only need r_y = none")

    sweep_key, sweep_values = None, ()
    if cp.has_section("sweep"):
        items = cp.items("sweep")
        if len(items) != 1:
            fail("sweep", None, "[sweep] takes exactly one key")
        sweep_key, raw = items[0]
        if sweep_key not in _PROBLEM_KEYS or sweep_key in ("m", "n", "seed"):
            fail("sweep", sweep_key, f"cannot sweep {sweep_key!r}")
        try:
            sweep_values = _floats(raw)
        except ValueError:
            fail("sweep", sweep_key, "sweep values must be numbers")
        if not sweep_values:
            fail("sweep", sweep_key, "empty sweep")
    out_dir = cp.get("output", "dir", fallback="out") if cp.has_section("output") else "out"
    return ExperimentConfig(problem=problem, methods=methods, eps=eps, repetitions=reps,
                            mode=mode, slope_N=slope_N, slope_distance=slope_distance,
                            sweep_key=sweep_key, sweep_values=sweep_values, out_dir=out_dir,
                            source=path)


# ----- cells -----------------------------------------------------------------------

def _instance(params):
    p = dict(params)
    return make_instance(p["seed"], p["m"], p["n"], mu_x=p.get("mu_x", 0.1),
                         mu_y=p.get("mu_y", 0.1), coupling_scale=p.get("coupling", 0.5),
                         sigma=p.get("sigma", 0.1), r_x=p.get("r_x", 1.0), r_y=p.get("r_y"),
                         logcosh=p.get("logcosh", 0.0) or 0.0, L_B=p.get("l_b", 1.0),
                         y_scale=p.get("y_scale", 1.0))


def _cells(cfg):
    sweep = [(None, None)] if cfg.sweep_key is None else \
        [(cfg.sweep_key, v) for v in cfg.sweep_values]
    out = []
    for key, val in sweep:
        for method in cfg.methods:
            for eps in cfg.eps:
                for rep in range(cfg.repetitions):
                    params = dict(cfg.problem)
                    params["seed"] = cfg.problem["seed"] + rep
                    if key is not None:
                        params[key] = val
                    parts = [method, f"eps={eps!r}", f"m={params['m']}", f"n={params['n']}"]
                    if key is not None:
                        parts.append(f"{key}={val!r}")
                    parts.append(f"rep={rep}")
                    out.append(("|".join(parts), method, eps, params, cfg.mode, cfg.slope_N,
                                cfg.slope_distance))
    return out


def _run_cell(cell):
    run_id, method, eps, params, mode, slope_N, slope_distance = cell
    prob = _instance(params)
    m, n = prob.m, prob.n
    _, _, F_star = reference_solve(prob)
    tr = Trace(run_id, method)
    if method in ("mixed_unconstrained", "mixed_compact", "joint_fgm"):
        mm = MinMinProblem.from_zoo(prob, F_star=F_star)
        rows = []
        if method == "joint_fgm":
            x, y, rep = joint_fgm_solve(mm, np.zeros(m), np.zeros(n), eps, trace=rows)
        else:
            x, y, rep = minmin_solve(mm, np.zeros(m), np.zeros(n), eps, mode=mode, trace=rows)
        for r in rows:
            tr.add(stage=r["stage"], iter=r["iter"], f_gap=r["f"] - F_star,
                   grad_x_calls=r["grad_x_calls"], grad_y_calls=r["grad_y_calls"],
                   hess_y_calls=r["hess_y_calls"], delta=r["delta"], eps_tilde=r["eps_tilde"])
        gy = rep.outer_grad_calls if method == "joint_fgm" else rep.inner_grad_calls
        tr.add(stage=rep.stages, iter=0, f_gap=rep.final_gap, grad_x_calls=rep.outer_grad_calls,
               grad_y_calls=gy, hess_y_calls=rep.inner_hess_calls)
        return tr.rows
    # inner-only methods work on y -> F(0, y)
    x = np.zeros(m)
    y_star = prob.inner_solution(x)
    f_star = prob.value(x, y_star)
    oracle = prob.inner_oracle(x)
    L3 = max(prob.L3_y, 1e-10 * max(1.0, prob.L_y))
    if method == "atmi3_only" and slope_N:
        # (N, gap) pairs from a start at distance slope_distance
        u = np.random.default_rng(params["seed"]).standard_normal(n)
        y0 = y_star + slope_distance * u / np.linalg.norm(u)
        for N in slope_N:
            oracle = prob.inner_oracle(x)
            y = atmi3_run(oracle, y0, L3, N, certify=False)
            tr.add(stage=0, iter=N, f_gap=oracle.value(y) - f_star,
                   grad_y_calls=oracle.grad_calls, hess_y_calls=oracle.hess_calls)
        return tr.rows
    rows = []
    y0 = np.zeros(n)
    fy, gy = oracle(y0)
    if method == "atmi3_only":
        R = max(float(np.linalg.norm(gy)) / prob.mu_y, 1e-300)
        res = atmi3_restarted(oracle, y0, L3, prob.mu_y, eps, R, value0=fy, grad0=gy,
                              trace=rows, full_output=True)
    else:
        comp = CompositeObjective(oracle, prob.Q_y, p=3, Lp=L3)
        res = bilevel_restarted(comp, y0, prob.mu_y, eps, prob.Q_y.diameter, value0=fy,
                                grad0=gy, trace=rows, full_output=True)
    for r in rows:
        tr.add(stage=r["stage"], iter=r["iter"], f_gap=r["f"] - f_star,
               grad_y_calls=r["grad_calls"], hess_y_calls=r["hess_calls"],
               delta=r.get("delta", 0.0), eps_tilde=eps)
    tr.add(stage=res.stages_run, iter=0, f_gap=res.value - f_star,
           grad_y_calls=oracle.grad_calls, hess_y_calls=oracle.hess_calls, eps_tilde=eps)
    return tr.rows


def _safe_name(run_id):
    return re.sub(r"[^A-Za-z0-9_.=+-]+", "_", run_id.replace("|", "__"))


def _cell_worker(args):
    cell, trace_dir = args
    t0 = time.perf_counter()
    rows = _run_cell(cell)
    wall = 1e3 * (time.perf_counter() - t0)
    write_rows(Path(trace_dir) / f"{_safe_name(cell[0])}.csv", rows)
    return cell[0], rows, wall


def run_experiment(cfg, *, jobs=1, out_dir=None, seed_override=None, stream=None):
    """Run every cell of ``cfg``; returns an exit code."""
    stream = sys.stdout if stream is None else stream
    if seed_override is not None:
        cfg = replace(cfg, problem={**cfg.problem, "seed": int(seed_override)})
    out = Path(out_dir or cfg.out_dir)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    cells = _cells(cfg)
    work = [(c, str(trace_dir)) for c in cells]
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_cell_worker, work))
        else:
            results = [_cell_worker(w) for w in work]
    except (ConvergenceFailure, NumericalError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigurationError, ContractViolation) as err:
        print(f"{cfg.source}: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    rows = [r for _, rs, _ in results for r in rs]
    write_rows(out / "trace.csv", rows)
    table = _summary_table(rows, walls={rid: w for rid, _, w in results})
    _write_summary(out, table)
    print(_format_table(table), file=stream)
    return EXIT_OK


# ----- summaries --------------------------------------------------------------------

def _parse_run_id(run_id):
    parts = run_id.split("|")
    info = {"method": parts[0]}
    for p in parts[1:]:
        k, _, v = p.partition("=")
        info[k] = v
    return info


def _cell_key(run_id):
    return "|".join(p for p in run_id.split("|") if not p.startswith("rep="))


def _summary_table(rows, walls=None):
    """One line per cell (run id without the repetition) with medians over runs.

    ``walls`` maps run ids to wall time in ms; traces do not carry it.
    """
    finals = {}
    for r in rows:
        finals[r["run_id"]] = r  # last row of a run carries its final state
    cells = {}
    for run_id, r in finals.items():
        cells.setdefault(_cell_key(run_id), []).append(r)
    table = []
    for key in sorted(cells):
        rs = cells[key]
        info = _parse_run_id(key)
        m, n = int(info.get("m", 0)), int(info.get("n", 0))
        gx = np.array([r["grad_x_calls"] for r in rs], float)
        gy = np.array([r["grad_y_calls"] for r in rs], float)
        hy = np.array([r["hess_y_calls"] for r in rs], float)
        if info["method"] == "joint_fgm":
            cost = gx * (m + n)
        else:
            cost = gx * m + gy * n + hy * n * n
        q1, q3 = np.percentile(cost, [25, 75])
        table.append({"cell": key, "method": info["method"], "runs": len(rs),
                      "final_gap_median": float(np.median([r["f_gap"] for r in rs])),
                      "grad_x_calls_median": float(np.median(gx)),
                      "grad_y_calls_median": float(np.median(gy)),
                      "hess_y_calls_median": float(np.median(hy)),
                      "cost_median": float(np.median(cost)), "cost_iqr": float(q3 - q1),
                      "relative_cost": "", "wall_ms_median": ""})
        if walls:
            table[-1]["wall_ms_median"] = float(np.median(
                [walls[r["run_id"]] for r in rs if r["run_id"] in walls]))
    # mixed total over joint total for matching cells
    joint = {}
    for row in table:
        if row["method"] == "joint_fgm":
            joint[row["cell"].split("|", 1)[1]] = row["cost_median"]
    for row in table:
        if row["method"].startswith("mixed_"):
            base = joint.get(row["cell"].split("|", 1)[1])
            if base:
                row["relative_cost"] = row["cost_median"] / base
    return table


def _write_summary(out, table):
    out = Path(out)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SUMMARY_COLUMNS)
        for row in table:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in _SUMMARY_COLUMNS])
    (out / "summary.txt").write_text(_format_table(table) + "\n", encoding="utf-8")


def _format_table(table):
    head = ("cell", "runs", "gap", "cost", "iqr", "rel")
    lines = []
    body = []
    for r in table:
        rel = "" if r["relative_cost"] == "" else f"{r['relative_cost']:.3f}"
        body.append((r["cell"], str(r["runs"]), f"{r['final_gap_median']:.2e}",
                     f"{r['cost_median']:.4g}", f"{r['cost_iqr']:.3g}", rel))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(head)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(head, widths)))
    for b in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(b, widths)))
    return "\n".join(lines)


def summarize(paths, out_dir=None, stream=None):
    """Aggregate trace files; returns ``(exit_code, table)``."""
    stream = sys.stdout if stream is None else stream
    paths = sorted(paths)
    if not paths:
        print("summarize: no trace files matched", file=sys.stderr)
        return EXIT_CONFIG, []
    rows = []
    try:
        for p in paths:
            rows.extend(read_trace(p))
    except ConfigurationError as err:
        print(f"summarize: {err}", file=sys.stderr)
        return EXIT_CONFIG, []
    table = _summary_table(rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_summary(out_dir, table)
    print(_format_table(table), file=stream)
    return EXIT_OK, table


def main(argv=None):
    parser = argparse.ArgumentParser(prog="mixtensor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed-override", type=int, default=None)
    p_sum = sub.add_parser("summarize", help="aggregate trace CSV files")
    p_sum.add_argument("pattern")
    p_sum.add_argument("--out", default=None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code else EXIT_OK
    if args.command == "run":
        if args.jobs < 1:
            print("--jobs must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
        try:
            cfg = load_config(args.config)
        except ConfigurationError as err:
            print(f"configuration error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        return run_experiment(cfg, jobs=args.jobs, out_dir=args.out,
                              seed_override=args.seed_override)
    code, _ = summarize(glob.glob(args.pattern, recursive=True), out_dir=args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
