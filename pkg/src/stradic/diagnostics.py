"""Optimality measures, the Lyapunov function and trace-level checks.

The per-iteration checks re-derive every inequality from the quantities
recorded in :class:`~stradic.solver.StepDiagnostics` rather than trusting
flags set by the solver.  Check names:

=============================  ==============================================
projection_descent             g^T d <= -||d||^2
tangential_descent             g^T s_L <= -3/4 min(alpha_mu, 1) ||d||^2
step_gradient_bound            |g^T s_L| >= ||s_L||^2
componentwise_step_bound       |s_T,i| <= alpha_i |d_i|
stepsize_product_below_one     alpha_i |d_i| < 1
tangential_step_acceptance     s_T in F and trust box, ||s_T|| >= ||s_C||,
                               m(s_T) <= tau m(s_C)
cauchy_step_length             ||s_C|| >= ||s_L|| / max(1, ||B||)
model_descent_bound            g^T s_T <= -3 tau/(4 max(1, 2||B||))
                               min(alpha_mu, 1)||d||^2 + ||B||/2 sum alpha^2 d^2
adagrad_sum_lower              sum min(alpha_mu, 1)||d||^2 >
                               eta sqrt(vs) sqrt(Theta) - eta max(eta, sqrt(vs))
adagrad_sum_upper              sum alpha_i^2 d_i^2 <= eta^2 log(Theta)
normal_step_bound              x + s_N in box, ||s_N||_inf <= theta_N omega_N
normal_step_descent            |c+|^2/2 <= |c|^2/2 - kappa_n omega_N^2
constraint_norm_descent        |c+| - |c| <= -(kappa_n xi / 2) omega_N
=============================  ==============================================

Theta = 1 + max_i Gamma_i / varsigma, taken after the accumulator update.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import RankDeficientError
from .problems import Problem, evaluate_constraints, true_gradient
from .projections import (
    JacobianFactor,
    TangentBoxSet,
    brute_force_projection_oracle,
    project_tangent_box,
    project_tangent_two_boxes,
)
from .solver import NORMAL_ONLY, TANGENTIAL

LEMMA_TOL = 1e-8

PER_STEP_CHECKS = (
    "projection_descent",
    "tangential_descent",
    "step_gradient_bound",
    "componentwise_step_bound",
    "stepsize_product_below_one",
    "tangential_step_acceptance",
    "cauchy_step_length",
    "model_descent_bound",
    "normal_step_bound",
    "normal_step_descent",
)
ADAGRAD_CHECKS = ("adagrad_sum_lower", "adagrad_sum_upper")


@dataclass
class Measures:
    omega_T: float
    Omega_T: Optional[float]
    omega_N: float
    c_norm: float
    theta: float


def compute_measures(x, d, problem: Problem, gamma=None, varsigma: float = 1.0, G=None) -> Measures:
    """Dual/primal optimality measures at ``x``.

    ``Omega_T`` projects the true gradient (``G`` or ``problem.gradient``)
    and is ``None`` when neither is available.
    """
    x = np.asarray(x, dtype=float)
    c_val, J = evaluate_constraints(problem, x)
    if G is None:
        G = true_gradient(problem, x)
    Omega_T = None
    if G is not None:
        tset = TangentBoxSet(J, problem.lower - x, problem.upper - x)
        Omega_T = float(np.linalg.norm(project_tangent_box(G, tset).point))
    gamma = np.zeros(problem.n) if gamma is None else np.asarray(gamma)
    return Measures(
        omega_T=float(np.linalg.norm(d)),
        Omega_T=Omega_T,
        omega_N=float(np.linalg.norm(J.T @ c_val)) if problem.m else 0.0,
        c_norm=float(np.linalg.norm(c_val)),
        theta=1.0 + float(np.max(gamma, initial=0.0)) / varsigma,
    )


@dataclass
class LyapunovRecord:
    rho: float
    lambda_hat: np.ndarray
    L_val: float
    psi: float


def lyapunov(x, g, problem: Problem, rho: float) -> LyapunovRecord:
    """psi = f(x) + lambda_hat^T c(x) + rho ||c(x)||, lambda_hat least squares."""
    if problem.objective is None:
        raise ValueError(f"problem {problem.name!r} has no objective for diagnostics")
    x = np.asarray(x, dtype=float)
    c_val, J = evaluate_constraints(problem, x)
    lam = JacobianFactor(J).multiplier(np.asarray(g, dtype=float)) if problem.m else np.zeros(0)
    L_val = float(problem.objective(x)) + float(lam @ c_val)
    return LyapunovRecord(rho, lam, L_val, L_val + rho * float(np.linalg.norm(c_val)))


@dataclass
class ProblemConstants:
    kappa_g: float
    kappa_c: float
    kappa_J: float
    L_c: float
    L_J: float
    L_lambda: float
    L_L: float


def estimate_constants(problem: Problem, points=None, samples=200, seed=0, h=1e-4) -> ProblemConstants:
    """Sampled bounds and Lipschitz constants over the box (or given points).

    Lipschitz constants are maxima of difference quotients over random
    pairs at distance ``h``; points where J loses rank are skipped.
    """
    rng = np.random.default_rng(seed)
    pts = [problem.random_box_point(rng) for _ in range(samples)]
    if points is not None:
        pts.extend(np.asarray(p, dtype=float) for p in points)
    kg = kc = kJ = Lc = LJ = Llam = LL = 0.0
    for x in pts:
        dirn = rng.standard_normal(problem.n)
        y = problem.project_to_box(x + h * dirn / np.linalg.norm(dirn))
        dist = float(np.linalg.norm(y - x))
        cx, Jx = evaluate_constraints(problem, x)
        Gx = true_gradient(problem, x)
        kc = max(kc, float(np.linalg.norm(cx)))
        kJ = max(kJ, float(np.linalg.norm(Jx, 2)) if problem.m else 0.0)
        if Gx is not None:
            kg = max(kg, float(np.linalg.norm(Gx)))
        if dist == 0.0:
            continue
        cy, Jy = evaluate_constraints(problem, y)
        Gy = true_gradient(problem, y)
        Lc = max(Lc, float(np.linalg.norm(cy - cx)) / dist)
        LJ = max(LJ, float(np.linalg.norm(Jy - Jx)) / dist)
        if Gx is None or problem.m == 0:
            continue
        try:
            lx = JacobianFactor(Jx).multiplier(Gx)
            ly = JacobianFactor(Jy).multiplier(Gy)
        except RankDeficientError:
            continue
        Llam = max(Llam, float(np.linalg.norm(ly - lx)) / dist)
        LL = max(LL, float(np.linalg.norm((Gy + Jy.T @ lx) - (Gx + Jx.T @ lx))) / dist)
    return ProblemConstants(
        kappa_g=max(1.0, kg),
        kappa_c=max(1.0, kc),
        kappa_J=max(1.0, kJ),
        L_c=Lc,
        L_J=LJ,
        L_lambda=Llam,
        L_L=LL,
    )


def constraint_ratio(trace) -> float:
    """xi = min_k omega_N / ||c_k|| over iterates with c != 0 (1 if none)."""
    ratios = [r.omega_N / r.c_norm for r in trace if r.c_norm > 0.0]
    return min(1.0, min(ratios)) if ratios else 1.0


def rho_from_constants(consts: ProblemConstants, n, theta_N, kappa_n, eta, xi) -> float:
    """Penalty weight making psi decrease by eta * omega_N on normal steps."""
    lin = (consts.kappa_g + consts.kappa_c * consts.L_lambda) * theta_N * math.sqrt(n)
    quad = consts.kappa_J * consts.kappa_c * (consts.L_L / 2 + consts.L_lambda * consts.L_c)
    return 2.0 / (kappa_n * xi) * (lin + quad * theta_N**2 * n + eta)


def estimate_rho(problem: Problem, trace, samples=200, seed=0) -> tuple[float, ProblemConstants, float]:
    """Estimate the Lyapunov penalty from sampled constants and the trace's xi."""
    steps = [r for r in trace if r.is_step]
    if not steps:
        raise ValueError("trace has no iterations")
    consts = estimate_constants(problem, points=[r.x for r in steps], samples=samples, seed=seed)
    xi = constraint_ratio(steps)
    r0 = steps[0]
    rho = rho_from_constants(consts, problem.n, r0.theta_N, r0.kappa_n, r0.eta, xi)
    return rho, consts, xi


def theta_sequence(trace) -> np.ndarray:
    """Theta_k = 1 + max_i Gamma_{k,i} / varsigma for every record."""
    return np.array([1.0 + float(np.max(r.gamma, initial=0.0)) / r.varsigma for r in trace])


# ---------------------------------------------------------------------------
# per-iteration inequality checks


@dataclass
class Violation:
    check: str
    k: int
    slack: float
    detail: str = ""


@dataclass
class LemmaReport:
    checked: dict = field(default_factory=dict)
    min_slack: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, check: str) -> int:
        return sum(1 for v in self.violations if v.check == check)

    def _record(self, check, k, lhs, rhs, tol, strict=False, detail=""):
        """Assert lhs <= rhs (or lhs < rhs) with additive slack tol * scale."""
        slack = float(rhs - lhs)
        scale = 1.0 + max(abs(float(lhs)), abs(float(rhs)))
        self.checked[check] = self.checked.get(check, 0) + 1
        prev = self.min_slack.get(check)
        self.min_slack[check] = slack if prev is None else min(prev, slack)
        bad = slack <= 0.0 if strict else slack < -tol * scale
        if bad:
            self.violations.append(Violation(check, k, slack, detail))

    def merge(self, other: "LemmaReport") -> "LemmaReport":
        for key, val in other.checked.items():
            self.checked[key] = self.checked.get(key, 0) + val
        for key, val in other.min_slack.items():
            self.min_slack[key] = min(self.min_slack.get(key, val), val)
        self.violations.extend(other.violations)
        return self

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checked": dict(sorted(self.checked.items())),
            "min_slack": dict(sorted(self.min_slack.items())),
            "violations": [asdict(v) for v in self.violations],
        }

    def summary(self) -> str:
        lines = [f"{'check':<30} {'count':>8} {'violations':>10} {'min slack':>12}"]
        for name in sorted(self.checked):
            lines.append(
                f"{name:<30} {self.checked[name]:>8d} {self.count(name):>10d} "
                f"{self.min_slack[name]:>12.3e}"
            )
        return "\n".join(lines)


def _check_tangential(rep: LemmaReport, r, tol):
    g, d, s_L, s_C, s_T = r.g, r.d, r.s_L, r.s_C, r.s_T
    k = r.k
    amin = min(float(r.alpha[r.mu]), 1.0)
    dd = float(d @ d)
    rep._record("projection_descent", k, float(g @ d), -dd, tol)
    gsL = float(g @ s_L)
    rep._record("tangential_descent", k, gsL, -0.75 * amin * dd, tol)
    rep._record("step_gradient_bound", k, float(s_L @ s_L), abs(gsL), tol)
    ad = r.alpha * np.abs(d)
    excess = np.abs(s_T) - ad
    i = int(np.argmax(excess))
    rep._record("componentwise_step_bound", k, abs(float(s_T[i])), float(ad[i]), tol)
    rep._record("stepsize_product_below_one", k, float(np.max(ad)), 1.0, tol, strict=True)

    # acceptance: membership, length, model decrease (worst of the parts)
    J = r.J_val
    jres = float(np.max(np.abs(J @ s_T))) if J.shape[0] else 0.0
    box_lo = np.maximum(r.lower - r.x, -r.halfwidth)
    box_hi = np.minimum(r.upper - r.x, r.halfwidth)
    box_excess = max(float(np.max(box_lo - s_T)), float(np.max(s_T - box_hi)), 0.0)
    rep._record("tangential_step_acceptance", k, jres + box_excess, 0.0, tol, detail="membership")
    rep._record("tangential_step_acceptance", k, float(np.linalg.norm(s_C)), float(np.linalg.norm(s_T)), tol)
    rep._record("tangential_step_acceptance", k, r.model_T, r.tau * r.model_C, tol)

    bn = r.B_norm
    rep._record(
        "cauchy_step_length",
        k,
        float(np.linalg.norm(s_L)) / max(1.0, bn),
        float(np.linalg.norm(s_C)),
        tol,
    )
    rhs = -3.0 * r.tau / (4.0 * max(1.0, 2.0 * bn)) * amin * dd + 0.5 * bn * float(ad @ ad)
    rep._record("model_descent_bound", k, float(g @ s_T), rhs, tol)


def _check_normal(rep: LemmaReport, r, tol):
    ns = r.normal
    k = r.k
    x_plus = r.x + ns.s_N
    box_excess = max(float(np.max(r.lower - x_plus)), float(np.max(x_plus - r.upper)), 0.0)
    rep._record("normal_step_bound", k, box_excess, 0.0, tol, detail="box")
    rep._record("normal_step_bound", k, float(np.max(np.abs(ns.s_N))), r.theta_N * r.omega_N, tol)
    rep._record(
        "normal_step_descent",
        k,
        ns.actual_half_csq_after,
        ns.actual_half_csq_before - r.kappa_n * r.omega_N**2,
        tol,
    )


def check_adagrad_sums(trace, tol=LEMMA_TOL, report: LemmaReport | None = None) -> LemmaReport:
    """Lower and upper AdaGrad sum bounds over every prefix of the tangential iterations."""
    rep = report if report is not None else LemmaReport()
    lhs_lower = 0.0
    lhs_upper = None
    for r in trace:
        if r.branch != TANGENTIAL:
            continue
        eta, vs = r.eta, r.varsigma
        d = r.d
        gamma_next = r.gamma + d * d
        theta = 1.0 + float(np.max(gamma_next)) / vs
        lhs_lower += min(float(r.alpha[r.mu]), 1.0) * float(d @ d)
        rhs_lower = eta * math.sqrt(vs) * math.sqrt(theta) - eta * max(eta, math.sqrt(vs))
        rep._record("adagrad_sum_lower", r.k, rhs_lower, lhs_lower, tol)
        terms = (r.alpha * d) ** 2
        lhs_upper = terms if lhs_upper is None else lhs_upper + terms
        i = int(np.argmax(lhs_upper))
        rep._record("adagrad_sum_upper", r.k, float(lhs_upper[i]), eta**2 * math.log(theta), tol)
    return rep


def check_constraint_descent(trace, tol=LEMMA_TOL, report: LemmaReport | None = None) -> LemmaReport:
    """||c+|| - ||c|| <= -(kappa_n xi / 2) omega_N on normal steps, xi from the trace."""
    rep = report if report is not None else LemmaReport()
    xi = constraint_ratio([r for r in trace if r.is_step])
    for r in trace:
        if r.normal is None or not np.any(r.s_N):
            continue
        c_plus = float(np.linalg.norm(r.normal.c_after))
        rep._record(
            "constraint_norm_descent",
            r.k,
            c_plus - r.c_norm,
            -0.5 * r.kappa_n * xi * r.omega_N,
            tol,
        )
    return rep


def check_lemma_inequalities(trace, tol=LEMMA_TOL) -> LemmaReport:
    """Assert every per-realization inequality on a solver trace."""
    rep = LemmaReport()
    for r in trace:
        if r.branch == TANGENTIAL:
            _check_tangential(rep, r, tol)
        if r.normal is not None:
            _check_normal(rep, r, tol)
    check_adagrad_sums(trace, tol, rep)
    check_constraint_descent(trace, tol, rep)
    return rep


def lyapunov_normal_decrease(problem: Problem, trace, rho: float, use_true_gradient=True):
    """psi(x+) - psi(x) and -eta * omega_N for every normal-only step.

    psi is evaluated with least-squares multipliers built from the true
    gradient (or the recorded sample when ``use_true_gradient`` is False).
    """
    out = []
    for r in trace:
        if r.branch != NORMAL_ONLY:
            continue
        x_plus = r.x_next
        if use_true_gradient:
            g0, g1 = true_gradient(problem, r.x), true_gradient(problem, x_plus)
        else:
            g0 = g1 = r.g
        psi0 = lyapunov(r.x, g0, problem, rho).psi
        psi1 = lyapunov(x_plus, g1, problem, rho).psi
        out.append((r.k, psi1 - psi0, -r.eta * r.omega_N))
    return out


# ---------------------------------------------------------------------------
# rates and noise


@dataclass
class RateFit:
    slope: float
    constant: float
    running_average: np.ndarray


def running_average(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.cumsum(v) / np.arange(1, v.size + 1)


def rate_values(trace) -> np.ndarray:
    return np.array([r.norm_d + r.c_norm for r in trace if r.is_step])


def rate_fit(trace_or_values, min_length: int = 100) -> RateFit:
    """Log-log slope of the running average of ||d_j|| + ||c_j||.

    Accepts a solver trace or the raw per-iteration values.  The fit uses
    the second half of the sequence; ``constant`` is C in A_k ~ C (k+1)^slope.
    """
    if isinstance(trace_or_values, np.ndarray) or (
        len(trace_or_values) and not hasattr(trace_or_values[0], "is_step")
    ):
        values = np.asarray(trace_or_values, dtype=float)
    else:
        values = rate_values(trace_or_values)
    if values.size < min_length:
        raise ValueError(f"rate fit needs at least {min_length} iterations, got {values.size}")
    avg = running_average(values)
    return fit_running_average(avg)


def fit_running_average(avg) -> RateFit:
    avg = np.asarray(avg, dtype=float)
    k = np.arange(avg.size)
    half = avg.size // 2
    with np.errstate(divide="ignore"):
        ly = np.log(avg[half:])
    lx = np.log(k[half:] + 1.0)
    ok = np.isfinite(ly)
    slope, intercept = np.polyfit(lx[ok], ly[ok], 1)
    return RateFit(float(slope), float(np.exp(intercept)), avg)


@dataclass
class NoiseReport:
    tangential_samples: int
    mean_abs_error_along_step: float
    mean_step_sq: float
    kappa_dir: float  # 2 E|(G-g)^T s_T| / E||s_T||^2
    mean_error_sq: float
    kappa_dir2: float  # sqrt(E||G-g||^2 / E||s_T||^2)
    measure_samples: int
    mean_measure_gap: float  # E|Omega_T - ||d|||
    mean_measure_bias: float  # E(||d|| - Omega_T)
    mean_norm_d: float
    kappa_omega: float  # E|Omega_T - ||d||| / E||d||
    mean_error_norm: float
    kappa_omega_proj: float  # E||G - g|| / E||d||

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a, b):
    return a / b if b > 0 else (0.0 if a == 0 else math.inf)


def noise_condition_monitor(trace) -> NoiseReport:
    """Empirical gradient-error statistics against step and measure sizes."""
    tang = [r for r in trace if r.branch == TANGENTIAL and r.G is not None]
    steps = [r for r in trace if r.is_step and r.G is not None]
    if tang:
        errs = [r.G - r.g for r in tang]
        along = float(np.mean([abs(e @ r.s_T) for e, r in zip(errs, tang)]))
        ssq = float(np.mean([r.s_T @ r.s_T for r in tang]))
        esq = float(np.mean([e @ e for e in errs]))
    else:
        along = ssq = esq = 0.0
    if steps:
        omegas = [r.Omega_T if r.Omega_T is not None else r.norm_d for r in steps]
        gaps = [abs(o - r.norm_d) for o, r in zip(omegas, steps)]
        bias = float(np.mean([r.norm_d - o for o, r in zip(omegas, steps)]))
        gap = float(np.mean(gaps))
        md = float(np.mean([r.norm_d for r in steps]))
        enorm = float(np.mean([np.linalg.norm(r.G - r.g) for r in steps]))
    else:
        gap = bias = md = enorm = 0.0
    return NoiseReport(
        tangential_samples=len(tang),
        mean_abs_error_along_step=along,
        mean_step_sq=ssq,
        kappa_dir=2.0 * _ratio(along, ssq),
        mean_error_sq=esq,
        kappa_dir2=math.sqrt(_ratio(esq, ssq)),
        measure_samples=len(steps),
        mean_measure_gap=gap,
        mean_measure_bias=bias,
        mean_norm_d=md,
        kappa_omega=_ratio(gap, md),
        mean_error_norm=enorm,
        kappa_omega_proj=_ratio(enorm, md),
    )


def seed_averaged_running_average(traces: Sequence) -> np.ndarray:
    """Mean over seeds of the running average of ||d|| + ||c|| (truncated to the shortest)."""
    curves = [running_average(rate_values(t)) for t in traces]
    length = min(c.size for c in curves)
    return np.mean([c[:length] for c in curves], axis=0)


def expectation_summary(traces: Sequence) -> dict:
    """Seed averages of sqrt(Theta_k), log(Theta_k) and the normal omega_N sum."""
    length = min(sum(1 for r in t if r.is_step) for t in traces)
    sq, lg, nsum = [], [], []
    for t in traces:
        steps = [r for r in t if r.is_step][:length]
        th = theta_sequence(steps)
        sq.append(np.sqrt(th))
        lg.append(np.log(th))
        nsum.append(np.cumsum([r.omega_N if r.branch == NORMAL_ONLY else 0.0 for r in steps]))
    return {
        "sqrt_theta": np.mean(sq, axis=0),
        "log_theta": np.mean(lg, axis=0),
        "normal_omega_sum": np.mean(nsum, axis=0),
    }


# ---------------------------------------------------------------------------
# projection equivalence against exhaustive enumeration


def random_projection_instance(rng: np.random.Generator, max_n=6, max_m=2):
    """Random (g, set, trust) with mixed finite, infinite and pinned bounds.

    ``trust`` is ``None`` for roughly half the instances, otherwise a
    (lo, hi) pair of finite trust-box bounds around 0.
    """
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(0, min(max_m, n) + 1))
    J = rng.standard_normal((m, n))
    lo = -rng.exponential(1.0, n)
    hi = rng.exponential(1.0, n)
    lo[rng.random(n) < 0.2] = -np.inf
    hi[rng.random(n) < 0.2] = np.inf
    lo[rng.random(n) < 0.15] = 0.0
    hi[rng.random(n) < 0.15] = 0.0
    g = rng.standard_normal(n) * rng.choice([0.1, 1.0, 10.0])
    trust = None
    if rng.random() < 0.5:
        trust = (-rng.exponential(0.5, n), rng.exponential(0.5, n))
    return g, TangentBoxSet(J, lo, hi), trust


@dataclass
class ProjectionCheck:
    instances: int
    worst_error: float
    failures: list
    seconds: float  # time spent in the production projections only

    @property
    def ok(self) -> bool:
        return not self.failures


def projection_equivalence(count=1000, seed=0, tol=1e-6, method="auto") -> ProjectionCheck:
    rng = np.random.default_rng(seed)
    worst, failures, elapsed = 0.0, [], 0.0
    for i in range(count):
        g, tset, trust = random_projection_instance(rng)
        t0 = time.perf_counter()
        if trust is None:
            got = project_tangent_box(g, tset, method=method).point
        else:
            got = project_tangent_two_boxes(g, tset, trust[0], trust[1], method=method).point
        elapsed += time.perf_counter() - t0
        ref = brute_force_projection_oracle(g, tset, trust)
        err = float(np.max(np.abs(got - ref), initial=0.0))
        worst = max(worst, err)
        if not err <= tol:
            failures.append((i, err))
    return ProjectionCheck(count, worst, failures, elapsed)
