"""Benchmark harness: solver suites, empirical rate fits, floor experiments.

Subcommands:
  solve       run one solver on one problem from a JSON config
  bench       run a suite (problems x solvers x eps grid x seeds) to CSV/JSON
  lowerbound  residual-floor experiment on the chain hard instances
  check       derivative and geometry self-tests

All randomness flows from config seeds (BENCH_SEED overrides); result CSVs
contain no wall-clock values, so identical configs give byte-identical
files.  Wall times go to the JSON summary only.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .lowerbound import anchored_eg_schedule, best_residual, check_run, \
    run_alg_class
from .minimax import baseline_eg_solve, derive_parameters, solve
from .problems import check_derivatives, from_config, hard_instance

RESULT_HEADER = ["row", "problem", "solver", "p", "eps", "seed", "residual",
                 "target_met", "oracle_calls", "flags"]
TRACE_HEADER = ["oracle_calls", "residual", "gap_if_available", "loop_level"]
LOWERBOUND_HEADER = ["T", "p", "measured_residual", "analytic_floor", "ratio",
                     "support_violations", "unit_diameter_residual"]

SOLVERS = ("minimax_aipe", "eg_baseline")


def _fmt(v) -> str:
    """17-significant-digit formatting for all floats in CSV output."""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


@dataclass
class BenchConfig:
    """A benchmark suite: every problem spec is run with every solver at
    every epsilon for every seed."""

    problems: list                    # problem-config dicts
    eps_grid: list
    solvers: list = field(default_factory=lambda: list(SOLVERS))
    seeds: list = field(default_factory=lambda: [0])
    paper_value_mode: bool = False
    name: str = "bench"

    def __post_init__(self):
        self.eps_grid = [float(e) for e in self.eps_grid]
        if len(self.eps_grid) < 2:
            raise ValueError("eps grid needs at least 2 points")
        if any(b >= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ValueError("eps grid must be strictly decreasing")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ValueError(f"unknown solver {s!r}")
        if not self.seeds:
            raise ValueError("at least one seed required")

    @classmethod
    def from_file(cls, path: str) -> "BenchConfig":
        with open(path) as fh:
            raw = json.load(fh)
        cfg = cls(**raw)
        env_seed = os.environ.get("BENCH_SEED")
        if env_seed is not None:
            cfg.seeds = [int(env_seed)]
        return cfg


@dataclass
class RateFit:
    slope: float
    half_width: float                 # 2 x standard error of the slope
    degenerate: bool = False


def fit_rate(rows) -> RateFit:
    """Least-squares slope of log(oracle count) against log(1/eps)."""
    rows = list(rows)
    if len(rows) < 3:
        raise ValueError("need at least 3 (eps, count) rows to fit a rate")
    x = np.log([1.0 / float(e) for e, _ in rows])
    y = np.asarray([float(c) for _, c in rows])
    if np.all(y == y[0]):
        return RateFit(slope=0.0, half_width=0.0, degenerate=True)
    y = np.log(y)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    slope = float(xm @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xm
    dof = len(rows) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    return RateFit(slope=slope, half_width=2.0 * math.sqrt(s2 / sxx))


def _run_row(spec: dict) -> dict:
    """One (problem, solver, eps, seed) cell; exceptions become flags so a
    bad cell cannot take down the suite."""
    prob_cfg = dict(spec["problem_cfg"], seed=spec["seed"])
    out = {"row": spec["row"], "problem": "", "solver": spec["solver"],
           "p": prob_cfg.get("p", 1), "eps": spec["eps"],
           "seed": spec["seed"], "residual": math.nan, "target_met": False,
           "oracle_calls": 0, "flags": "", "trace": [], "wall_time": 0.0}
    try:
        problem = from_config(prob_cfg)
        out["problem"] = problem.name
        eps = float(spec["eps"])
        if spec["solver"] == "minimax_aipe":
            cfg = derive_parameters(problem, eps,
                                    practical_mode=not spec["paper_mode"])
            _, report = solve(problem, eps, cfg)
        else:
            _, report = baseline_eg_solve(problem, eps)
        out["residual"] = float(report.residual)
        out["oracle_calls"] = int(sum(report.counts.values()))
        out["flags"] = ";".join(report.flags)
        out["target_met"] = report.ok and report.residual <= eps
        out["trace"] = report.trace
        out["wall_time"] = report.wall_time
    except Exception as exc:                      # noqa: BLE001
        out["flags"] = f"error:{type(exc).__name__}:{exc}"
    return out


def run_suite(config: BenchConfig, out_dir: str, jobs: int = 1) -> dict:
    """Runs every cell, writes results.csv, per-row trace CSVs, and
    summary.json; returns the summary dict.  Output order is by row index
    regardless of completion order."""
    os.makedirs(out_dir, exist_ok=True)
    specs = []
    for prob_cfg in config.problems:
        for solver in config.solvers:
            for eps in config.eps_grid:
                for seed in config.seeds:
                    specs.append({"row": len(specs), "problem_cfg": prob_cfg,
                                  "solver": solver, "eps": eps, "seed": seed,
                                  "paper_mode": config.paper_value_mode})
    if jobs > 1 and len(specs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_row, specs))
    else:
        results = [_run_row(s) for s in specs]
    results.sort(key=lambda r: r["row"])

    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in results:
            w.writerow([_fmt(r[k]) for k in RESULT_HEADER])
    for r in results:
        path = os.path.join(out_dir, f"trace_{r['row']:04d}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for calls, resid, gap, level in r["trace"]:
                w.writerow([int(calls), _fmt(float(resid)),
                            "" if gap is None else _fmt(float(gap)), level])

    fits = _fit_groups(results)

    flagged = [r["row"] for r in results if r["flags"]]
    unmet = [r["row"] for r in results if not r["flags"]
             and not r["target_met"]]
    summary = {
        "name": config.name,
        "rows": len(results),
        "flagged_rows": flagged,
        "unmet_rows": unmet,
        "rate_fits": fits,
        "wall_times": {str(r["row"]): r["wall_time"] for r in results},
        "exit_code": 2 if (flagged or unmet) else 0,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _fit_groups(results) -> dict:
    """Per-(problem, solver) rate fits over the clean rows, where at least
    3 epsilon points exist."""
    groups = {}
    for r in results:
        if r["flags"]:
            continue
        groups.setdefault((r["problem"], r["solver"]), []).append(
            (r["eps"], r["oracle_calls"]))
    fits = {}
    for (pname, solver), rows in groups.items():
        if len(rows) < 3:
            continue
        fit = fit_rate(rows)
        fits[f"{pname}|{solver}"] = {"slope": fit.slope,
                                     "half_width": fit.half_width,
                                     "degenerate": fit.degenerate}
    return fits


def lowerbound_experiment(p: int, T_list, schedule_fn=None) -> list:
    """Floor-experiment rows: for each T, run the anchored extragradient
    schedule on the unscaled chain instance and compare the best measured
    residual with the analytic floor.  The unit-diameter column carries
    the same measurement in the fixed-diameter normalization the
    T-exponent -(3p-1)/2 refers to."""
    rows = []
    for T in T_list:
        problem = hard_instance(p, T)
        sched = (schedule_fn or anchored_eg_schedule)(T)
        run = run_alg_class(problem, sched)
        checks = check_run(problem, run)
        measured = best_residual(problem, run)
        floor = checks[0].floor
        rows.append({
            "T": T, "p": p,
            "measured_residual": measured,
            "analytic_floor": floor,
            "ratio": measured / floor,
            "support_violations": sum(1 for c in checks
                                      if c.support_slack > 0),
            "unit_diameter_residual":
                measured / math.sqrt(2.0 * (T + 1)) ** p,
        })
    return rows


def lowerbound_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOWERBOUND_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in LOWERBOUND_HEADER])
    return buf.getvalue()


def run_check() -> int:
    """Derivative + geometry self-tests on the built-in problem kinds."""
    rng = np.random.default_rng(0)
    failures = []
    specs = [{"problem": "bilinear", "dim": 3, "p": 1},
             {"problem": "quadratic", "dim": 3, "p": 1},
             {"problem": "power", "dim": 3, "p": 2},
             {"problem": "hard_new", "p": 1, "T": 4},
             {"problem": "hard_new", "p": 2, "T": 4}]
    for spec in specs:
        prob = from_config(dict(spec, seed=1))
        z = 0.5 * prob.domain.center() + 0.25 * prob.domain.sample(rng)
        z = prob.domain.project(z)
        rep = check_derivatives(prob, z)
        status = "ok" if rep.ok else "FAIL"
        print(f"derivatives {prob.name}: {status} "
              f"(grad err {rep.max_grad_err:.2e})")
        if not rep.ok:
            failures.append(prob.name)
        # geometry: projection idempotent, zero operator has zero residual
        zp = prob.domain.project(prob.domain.sample(rng) * 1.5)
        if np.linalg.norm(prob.domain.project(zp) - zp) > 1e-12:
            failures.append(f"{prob.name}:projection")
            print(f"geometry {prob.name}: FAIL (projection not idempotent)")
        elif prob.domain.tangent_residual(zp, np.zeros_like(zp)) > 1e-12:
            failures.append(f"{prob.name}:residual")
            print(f"geometry {prob.name}: FAIL (zero field residual)")
        else:
            print(f"geometry {prob.name}: ok")
    print("check:", "FAIL" if failures else "ok")
    return 1 if failures else 0


def _cmd_solve(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    env_seed = os.environ.get("BENCH_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    eps = float(cfg.pop("eps"))
    solver = cfg.pop("solver", "minimax_aipe")
    paper = bool(cfg.pop("paper_value_mode", False))
    problem = from_config(cfg)
    if solver == "minimax_aipe":
        mcfg = derive_parameters(problem, eps, practical_mode=not paper)
        _, report = solve(problem, eps, mcfg)
    elif solver == "eg_baseline":
        _, report = baseline_eg_solve(problem, eps)
    else:
        raise SystemExit(f"unknown solver {solver!r}")
    print(report.to_json())
    return 0 if (report.ok and report.residual <= eps) else 2


def _cmd_bench(args) -> int:
    config = BenchConfig.from_file(args.config)
    summary = run_suite(config, args.out, jobs=args.jobs)
    print(json.dumps({k: summary[k] for k in
                      ("name", "rows", "flagged_rows", "unmet_rows",
                       "exit_code")}, indent=2))
    return summary["exit_code"]


def _cmd_lowerbound(args) -> int:
    T_list = []
    T = 4
    while T <= args.tmax:
        T_list.append(T)
        T *= 2
    if not T_list:
        raise SystemExit("--tmax must be at least 4")
    rows = lowerbound_experiment(args.p, T_list)
    text = lowerbound_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    bad = any(r["ratio"] < 1.0 or r["support_violations"] for r in rows)
    return 2 if bad else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="saddlebench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one solver on one problem")
    p_solve.add_argument("--config", required=True)

    p_bench = sub.add_parser("bench", help="run a benchmark suite")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--jobs", type=int, default=1)

    p_lb = sub.add_parser("lowerbound", help="residual-floor experiment")
    p_lb.add_argument("--p", type=int, choices=(1, 2), required=True)
    p_lb.add_argument("--tmax", type=int, default=64)
    p_lb.add_argument("--out", default=None)

    sub.add_parser("check", help="derivative and geometry self-tests")

    args = parser.parse_args(argv)
    if args.command == "solve":
        return _cmd_solve(args)
    if args.command == "bench":
        return _cmd_bench(args)
    if args.command == "lowerbound":
        return _cmd_lowerbound(args)
    return run_check()


if __name__ == "__main__":           # pragma: no cover
    raise SystemExit(main())
