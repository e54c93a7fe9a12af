"""Command-line front end: ``stradic {solve,verify,rate,list-problems}``.

Exit codes: 0 success, 2 some seed hit ``max_iter``, 3 configuration or
runtime error (including a failed verification), 4 unknown problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .errors import ConfigError, StradicError, UnknownProblemError
from .oracles import describe_oracle, parse_oracle
from .problems import get_problem, register_test_problems
from .solver import SolverConfig, solve

logger = logging.getLogger("stradic")

EXIT_OK = 0
EXIT_MAX_ITER = 2
EXIT_ERROR = 3
EXIT_UNKNOWN_PROBLEM = 4

TRACE_COLUMNS = ("k", "branch", "norm_d", "omega_N", "c_norm", "Omega_T", "min_alpha", "max_Gamma", "psi")
SUMMARY_FIELDS = ("problem", "oracle", "seed", "status", "iterations", "x", "norm_d", "omega_N", "c_norm", "wall_time", "trace")

# run-to-budget tolerance for rate runs
TINY_EPS = 1e-300


def fmt(value) -> str:
    """Serialize a float with 17 significant digits (empty for missing)."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


@dataclass
class RunSpec:
    """Everything that determines a batch of solves."""

    problem: str = "sphere-linear"
    oracle: str = "exact"
    seeds: list = field(default_factory=lambda: [0])
    output: str = "stradic-out"
    config: dict = field(default_factory=dict)
    rho: float | None = None
    data: str | None = None

    def canonical(self) -> dict:
        cfg = SolverConfig.from_dict(self.config).to_dict()
        return {
            "problem": self.problem,
            "oracle": describe_oracle(parse_oracle(self.oracle)),
            "seeds": [int(s) for s in self.seeds],
            "output": str(self.output),
            "config": cfg,
            "rho": self.rho,
            "data": self.data,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunSpec":
        """Accept the canonical nested form or a flat file with solver keys at top level."""
        names = {f.name for f in fields(cls)}
        cfg_keys = set(SolverConfig().to_dict())
        spec_kw, cfg = {}, dict(data.get("config", {}))
        for key, val in data.items():
            if key == "config":
                continue
            if key in names:
                spec_kw[key] = val
            elif key in cfg_keys:
                cfg[key] = val
            else:
                raise ConfigError(f"unknown run-spec key {key!r}")
        spec = cls(**spec_kw, config=cfg)
        if isinstance(spec.seeds, int):
            spec.seeds = [spec.seeds]
        return spec


# ---------------------------------------------------------------------------
# running solves


def _make_problem(spec: RunSpec):
    kwargs = {"csv_path": spec.data} if spec.data else {}
    return get_problem(spec.problem, **kwargs)


def trace_rows(problem, trace, rho=None):
    # the closing terminated/stopped record carries the final measures but no stepsizes
    for r in trace:
        psi = None
        if rho is not None and problem.objective is not None:
            psi = diag.lyapunov(r.x, r.g, problem, rho).psi
        yield [
            str(r.k),
            r.branch,
            fmt(r.norm_d),
            fmt(r.omega_N),
            fmt(r.c_norm),
            fmt(r.Omega_T),
            fmt(r.min_alpha if r.is_step else None),
            fmt(r.max_gamma),
            fmt(psi),
        ]


def write_trace(path: Path, problem, trace, rho=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(trace_rows(problem, trace, rho))


def run_seed(spec: RunSpec, seed: int, write=True) -> dict:
    """Solve once; returns the per-seed summary entry (trace path included)."""
    problem = _make_problem(spec)
    config = SolverConfig.from_dict({**spec.config, "seed": seed})
    oracle = parse_oracle(spec.oracle, seed=seed)
    t0 = time.perf_counter()
    out = solve(problem, oracle, config)
    wall = time.perf_counter() - t0
    entry = {
        "problem": problem.name,
        "oracle": describe_oracle(oracle),
        "seed": seed,
        "status": out.status,
        "iterations": out.iterations,
        "x": [float(v) for v in out.x],
        "norm_d": out.norm_d,
        "omega_N": out.omega_N,
        "c_norm": out.c_norm,
        "wall_time": wall,
        "trace": None,
    }
    if out.message:
        entry["message"] = out.message
    if write:
        path = Path(spec.output) / f"{problem.name}_seed{seed}.csv"
        write_trace(path, problem, out.trace, spec.rho)
        entry["trace"] = str(path)
    return entry


def _map_seeds(fn, spec, seeds, jobs):
    if jobs <= 1 or len(seeds) <= 1:
        return [fn(spec, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, [spec] * len(seeds), seeds))


def cmd_solve(args) -> int:
    spec = build_spec(args)
    _make_problem(spec)  # fail fast on unknown names
    Path(spec.output).mkdir(parents=True, exist_ok=True)
    entries = _map_seeds(run_seed, spec, spec.seeds, args.jobs)
    summary = {"spec": spec.canonical(), "runs": entries}
    with open(Path(spec.output) / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    for e in entries:
        print(
            f"{e['problem']} seed={e['seed']} status={e['status']} k={e['iterations']} "
            f"|d|={e['norm_d']:.3e} omega_N={e['omega_N']:.3e} |c|={e['c_norm']:.3e}"
        )
    statuses = {e["status"] for e in entries}
    if statuses == {"converged"}:
        return EXIT_OK
    if statuses <= {"converged", "max_iter"}:
        return EXIT_MAX_ITER
    return EXIT_ERROR


# ---------------------------------------------------------------------------
# verification


VERIFY_SUITES = ("projections", "lemmas", "adagrad", "noise")
VERIFY_ORACLES = ("exact", "gaussian:0.01", "step:0.1")


def _solve_trace(name, oracle_text, seed, config):
    problem = get_problem(name)
    return solve(problem, parse_oracle(oracle_text, seed=seed), SolverConfig.from_dict({**config, "seed": seed})).trace


def cmd_verify(args) -> int:
    suites = args.filter or list(VERIFY_SUITES)
    problems = args.problem or sorted(register_test_problems())
    for name in problems:
        get_problem(name)
    seeds = parse_seeds(args.seeds)
    config = {
        "max_iter": args.iterations,
        "eps_D": TINY_EPS,
        "eps_C": TINY_EPS,
        "fault_alpha_scale": args.fault_alpha_scale,
    }
    failed = False
    results = {}

    if "projections" in suites:
        chk = diag.projection_equivalence(args.projection_instances, seed=seeds[0])
        results["projections"] = {"instances": chk.instances, "worst_error": chk.worst_error, "failures": chk.failures}
        print(f"projections: {chk.instances} instances, worst error {chk.worst_error:.3e}, {len(chk.failures)} failures")
        failed |= not chk.ok

    if {"lemmas", "adagrad"} & set(suites):
        report = diag.LemmaReport()
        for name in problems:
            for oracle_text in VERIFY_ORACLES:
                for seed in seeds:
                    trace = _solve_trace(name, oracle_text, seed, config)
                    part = diag.LemmaReport()
                    if "lemmas" in suites:
                        part = diag.check_lemma_inequalities(trace)
                        if "adagrad" not in suites:
                            part = _drop(part, diag.ADAGRAD_CHECKS)
                    else:
                        diag.check_adagrad_sums(trace, report=part)
                    for v in part.violations:
                        v.detail = f"{name} {oracle_text} seed={seed} {v.detail}".strip()
                    report.merge(part)
        results["lemmas"] = report.to_dict()
        print(report.summary())
        if report.violations:
            print(f"\n{len(report.violations)} violations:")
            print(f"{'check':<30} {'k':>7} {'slack':>12}  run")
            for v in report.violations[: args.max_listed]:
                print(f"{v.check:<30} {v.k:>7d} {v.slack:>12.3e}  {v.detail}")
        failed |= not report.ok

    if "noise" in suites:
        noise = {}
        for name in problems:
            trace = _solve_trace(name, "step:0.1", seeds[0], config)
            rep = diag.noise_condition_monitor(trace)
            noise[name] = rep.to_dict()
            ok = rep.kappa_dir2 <= 1.2 * 0.1
            print(f"noise {name}: kappa_dir2 {rep.kappa_dir2:.4f} (configured 0.1) {'ok' if ok else 'FAIL'}")
            failed |= not ok
        results["noise"] = noise

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, default=float)
            fh.write("\n")
    print("FAIL" if failed else "OK")
    return EXIT_ERROR if failed else EXIT_OK


def _drop(report, names):
    out = diag.LemmaReport()
    out.checked = {k: v for k, v in report.checked.items() if k not in names}
    out.min_slack = {k: v for k, v in report.min_slack.items() if k not in names}
    out.violations = [v for v in report.violations if v.check not in names]
    return out


# ---------------------------------------------------------------------------
# rates


def _rate_curve(spec, seed):
    problem = _make_problem(spec)
    config = SolverConfig.from_dict({**spec.config, "seed": seed})
    out = solve(problem, parse_oracle(spec.oracle, seed=seed), config)
    return diag.rate_values(out.trace)


def cmd_rate(args) -> int:
    spec = build_spec(args)
    if args.eps_d is None:
        spec.config["eps_D"] = TINY_EPS
    if args.eps_c is None:
        spec.config["eps_C"] = TINY_EPS
    SolverConfig.from_dict(spec.config)
    _make_problem(spec)
    curves = _map_seeds(_rate_curve, spec, spec.seeds, args.jobs)
    length = min(c.size for c in curves)
    avg = np.mean([diag.running_average(c[:length]) for c in curves], axis=0)
    if length < 100:
        print(f"error: trace has {length} iterations; the rate fit needs at least 100", file=sys.stderr)
        return EXIT_ERROR
    fit = diag.fit_running_average(avg)
    print(f"slope {fit.slope:.6f} constant {fit.constant:.6g} seeds {len(curves)} iterations {length}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("k", "average"))
            writer.writerows((str(k), fmt(v)) for k, v in enumerate(avg))
    return EXIT_OK


def cmd_list_problems(args) -> int:
    for name in sorted(register_test_problems()):
        p = get_problem(name)
        print(f"{name:<22} n={p.n} m={p.m}  {p.description}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling

_CONFIG_FLAGS = {
    "theta_n": "theta_N",
    "theta_t": "theta_T",
    "beta": "beta",
    "eta": "eta",
    "varsigma": "varsigma",
    "tau": "tau",
    "kappa_n": "kappa_n",
    "eps_d": "eps_D",
    "eps_c": "eps_C",
    "max_iter": "max_iter",
    "hessian": "hessian",
    "hessian_memory": "hessian_memory",
    "refine": "refine",
    "normal_budget": "normal_budget",
    "normal_at_switch": "normal_at_switch",
}


def parse_seeds(text) -> list[int]:
    """'3' -> [3]; '0,2,5' -> [0, 2, 5]; '0:4' -> [0, 1, 2, 3]."""
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    text = str(text)
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b)))
    return [int(s) for s in text.split(",") if s]


def build_spec(args) -> RunSpec:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    spec = RunSpec.from_dict(base)
    for attr in ("problem", "oracle", "output", "rho", "data"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(spec, attr, val)
    if getattr(args, "seeds", None) is not None:
        spec.seeds = parse_seeds(args.seeds)
    for flag, key in _CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            spec.config[key] = val
    spec.canonical()  # validates config and oracle text
    return spec


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run spec; flags override its values")
    p.add_argument("--problem", help="registry name (see list-problems)")
    p.add_argument("--oracle", help="exact | gaussian:SIGMA | step:KAPPA | batch:SIZE | history:K1,K2,...")
    p.add_argument("--seed", "--seeds", dest="seeds", help="seed, comma list or range a:b")
    p.add_argument("--data", help="CSV data file for finite-sum-lsq")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for multi-seed runs")
    p.add_argument("--theta-n", type=float)
    p.add_argument("--theta-t", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--varsigma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--kappa-n", type=float)
    p.add_argument("--eps-d", type=float)
    p.add_argument("--eps-c", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--hessian", choices=("zero", "exact", "barzilai_borwein", "limited_memory_secant"))
    p.add_argument("--hessian-memory", type=int)
    p.add_argument("--refine", action="store_true", default=None)
    p.add_argument("--normal-budget", type=int)
    p.add_argument("--normal-at-switch", choices=("never", "always"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stradic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a registry problem for one or more seeds")
    _add_run_flags(p)
    p.add_argument("--output", help="directory for trace CSVs and summary.json")
    p.add_argument("--rho", type=float, help="Lyapunov penalty; fills the psi column")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--filter", action="append", choices=VERIFY_SUITES, help="suite to run (repeatable)")
    p.add_argument("--problem", action="append", help="restrict to a registry problem (repeatable)")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--projection-instances", type=int, default=1000)
    p.add_argument("--fault-alpha-scale", type=float, default=1.0, help="corrupt every stepsize by this factor")
    p.add_argument("--max-listed", type=int, default=50)
    p.add_argument("--json", help="write the structured report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rate", help="fit the log-log slope of the seed-averaged running average")
    _add_run_flags(p)
    p.add_argument("--csv", help="write (k, average) here")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("list-problems", help="print the problem registry")
    p.set_defaults(func=cmd_list_problems)
    return parser


def _setup_logging() -> None:
    name = os.environ.get("STRADIC_LOG", "WARNING").upper()
    logger.setLevel(getattr(logging, name, logging.WARNING))
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnknownProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_PROBLEM
    except (StradicError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
