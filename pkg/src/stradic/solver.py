"""The STRADIC iteration: stochastic trust-region AdaGrad with constraints.

Each iteration evaluates c, J and a gradient sample, projects the negative
sample onto the linearized feasible set to get ``d``, and then either takes
a normal (feasibility) step alone, or an AdaGrad-scaled tangential step,
depending on whether ||J^T c|| <= beta ||s_L||_inf.  The objective value is
never evaluated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigError,
    InfeasibleNormalStepError,
    ProjectionError,
    RankDeficientError,
)
from .hessian import KINDS as HESSIAN_KINDS
from .hessian import HessianApprox, operator_norm
from .problems import Problem, evaluate
from .projections import (
    JacobianFactor,
    TangentBoxSet,
    project_tangent_box,
    project_tangent_two_boxes,
)
from .steps import (
    NormalStepResult,
    StepSizeState,
    cauchy_step,
    normal_step,
    tangential_step,
    trust_halfwidth,
    update_stepsizes,
    accumulate_gamma,
)

logger = logging.getLogger("stradic")

TANGENTIAL = "tangential"
NORMAL_ONLY = "normal_only"
TERMINATED = "terminated"
STOPPED = "stopped"


@dataclass
class SolverConfig:
    theta_N: float = 10.0
    theta_T: float = 2.0  # declared by the method, never used by the iteration
    beta: float = 0.5
    eta: float = 1.0
    varsigma: float = 1.0
    tau: float = 1.0
    kappa_n: float = 1e-4
    eps_D: float = 1e-6
    eps_C: float = 1e-6
    max_iter: int = 100_000
    seed: int = 0
    hessian: str = "zero"
    hessian_memory: int = 5
    refine: bool = False
    normal_budget: int = 31
    normal_at_switch: str = "never"
    true_measures: bool = True
    # test hook: multiplies every stepsize alpha, breaking the AdaGrad formula
    fault_alpha_scale: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        def check(ok, msg):
            if not ok:
                raise ConfigError(msg)

        check(self.theta_N > 1, f"theta_N must exceed 1 (got {self.theta_N})")
        check(self.theta_T > 1, f"theta_T must exceed 1 (got {self.theta_T})")
        for name in ("beta", "eta", "varsigma", "tau"):
            val = getattr(self, name)
            check(0 < val <= 1, f"{name} must lie in (0, 1] (got {val})")
        check(0 < self.kappa_n < 0.5, f"kappa_n must lie in (0, 1/2) (got {self.kappa_n})")
        check(self.eps_D > 0 and self.eps_C > 0, "eps_D and eps_C must be positive")
        check(int(self.max_iter) >= 0, "max_iter must be nonnegative")
        check(self.hessian in HESSIAN_KINDS, f"hessian must be one of {HESSIAN_KINDS}")
        check(self.normal_budget >= 1, "normal_budget must be positive")
        check(
            self.normal_at_switch in ("never", "always"),
            "normal_at_switch must be 'never' or 'always'",
        )
        check(self.fault_alpha_scale > 0, "fault_alpha_scale must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)


@dataclass
class StepDiagnostics:
    """Everything computed during one pass of the loop body."""

    k: int
    branch: str
    x: np.ndarray
    g: np.ndarray
    G: Optional[np.ndarray]
    c_val: np.ndarray
    d: np.ndarray
    norm_d: float
    omega_N: float
    c_norm: float
    Omega_T: Optional[float] = None
    alpha: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None  # accumulator before this iteration's update
    mu: int = 0
    halfwidth: Optional[np.ndarray] = None
    s_L: Optional[np.ndarray] = None
    s_C: Optional[np.ndarray] = None
    s_T: Optional[np.ndarray] = None
    s_N: Optional[np.ndarray] = None
    gamma_coeff: float = 1.0
    model_C: float = 0.0
    model_T: float = 0.0
    B: Optional[np.ndarray] = None
    B_norm: float = 0.0
    normal: Optional[NormalStepResult] = None
    refined: bool = False
    x_next: Optional[np.ndarray] = None
    eta: float = 1.0
    varsigma: float = 1.0
    tau: float = 1.0
    beta: float = 1.0
    theta_N: float = 1.0
    kappa_n: float = 0.0
    J_val: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @property
    def is_step(self) -> bool:
        return self.branch in (TANGENTIAL, NORMAL_ONLY)

    @property
    def min_alpha(self) -> float:
        return float(np.min(self.alpha)) if self.alpha is not None else float("nan")

    @property
    def max_gamma(self) -> float:
        return float(np.max(self.gamma, initial=0.0)) if self.gamma is not None else float("nan")


@dataclass
class IterateState:
    x: np.ndarray
    step_state: StepSizeState
    k: int = 0
    branches: list = field(default_factory=list)
    hess: Optional[HessianApprox] = None
    prev_x: Optional[np.ndarray] = None
    prev_g: Optional[np.ndarray] = None


@dataclass
class SolveOutcome:
    status: str  # converged | max_iter | infeasible_normal_step | rank_deficient
    x: np.ndarray
    norm_d: float
    omega_N: float
    c_norm: float
    iterations: int
    trace: list
    message: str = ""

    @property
    def steps(self) -> list:
        return [r for r in self.trace if r.is_step]


def initial_state(problem: Problem, config: SolverConfig, x0=None) -> IterateState:
    if x0 is None:
        x0 = problem.x0 if problem.x0 is not None else np.zeros(problem.n)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ConfigError(f"x0 has shape {x0.shape}, expected ({problem.n},)")
    if not problem.in_box(x0):
        logger.warning("starting point outside the bounds; clamping it into the box")
        x0 = problem.project_to_box(x0)
    return IterateState(
        x=x0.copy(),
        step_state=StepSizeState.initial(problem.n, config.eta, config.varsigma),
        hess=HessianApprox(config.hessian, config.hessian_memory),
    )


def step_once(state: IterateState, problem: Problem, oracle, config: SolverConfig, allow_step=True):
    """Run one loop body; return the new state and the iteration record.

    When the termination test holds (or ``allow_step`` is False) the state
    is returned unchanged and the record's branch is ``terminated``
    (respectively ``stopped``).
    """
    x = state.x
    sample = evaluate(problem, oracle, x)
    g, J, c_val = sample.g, sample.J_val, sample.c_val
    if state.prev_x is not None and state.hess.kind in ("barzilai_borwein", "limited_memory_secant"):
        state.hess.update(x - state.prev_x, g - state.prev_g)

    factor = JacobianFactor(J)
    tset = TangentBoxSet(J, problem.lower - x, problem.upper - x, factor)
    d = project_tangent_box(g, tset).point
    norm_d = float(np.linalg.norm(d))
    omega_N = float(np.linalg.norm(J.T @ c_val)) if problem.m else 0.0
    c_norm = float(np.linalg.norm(c_val))

    Omega_T = None
    if config.true_measures and sample.G is not None:
        if np.array_equal(sample.G, g):
            Omega_T = norm_d
        else:
            Omega_T = float(np.linalg.norm(project_tangent_box(sample.G, tset).point))

    rec = StepDiagnostics(
        k=state.k,
        branch=TERMINATED,
        x=x,
        g=g,
        G=sample.G,
        c_val=c_val,
        d=d,
        norm_d=norm_d,
        omega_N=omega_N,
        c_norm=c_norm,
        Omega_T=Omega_T,
        gamma=state.step_state.gamma,
        eta=config.eta,
        varsigma=config.varsigma,
        tau=config.tau,
        beta=config.beta,
        theta_N=config.theta_N,
        kappa_n=config.kappa_n,
        J_val=J,
        lower=problem.lower,
        upper=problem.upper,
    )
    if norm_d <= config.eps_D and omega_N <= config.eps_C:
        return state, rec
    if not allow_step:
        rec.branch = STOPPED
        return state, rec

    st = update_stepsizes(state.step_state, d)
    if config.fault_alpha_scale != 1.0:
        st.alpha = st.alpha * config.fault_alpha_scale
        st.halfwidth = trust_halfwidth(st.alpha, d)
    rec.alpha, rec.mu, rec.halfwidth = st.alpha, st.mu, st.halfwidth

    hw = st.halfwidth
    s_L = project_tangent_two_boxes(g, tset, -hw, hw).point
    rec.s_L = s_L
    switch = omega_N <= config.beta * float(np.max(np.abs(s_L), initial=0.0))

    if not switch:
        ns = normal_step(x, c_val, J, problem, config.theta_N, config.kappa_n, config.normal_budget)
        rec.branch = NORMAL_ONLY
        rec.normal = ns
        rec.s_N = ns.s_N
        x_next = problem.project_to_box(x + ns.s_N)
        new_state = IterateState(
            x=x_next,
            step_state=st,
            k=state.k + 1,
            branches=_extend(state.branches, NORMAL_ONLY),
            hess=state.hess,
            prev_x=x,
            prev_g=g,
        )
        rec.x_next = x_next
        return new_state, rec

    x_plus = x
    rec.s_N = np.zeros_like(x)
    if config.normal_at_switch == "always" and omega_N > 0.0:
        try:
            ns = normal_step(
                x, c_val, J, problem, config.theta_N, config.kappa_n, config.normal_budget
            )
        except InfeasibleNormalStepError:
            ns = None  # optional here, so a failure just skips it
        if ns is not None:
            rec.normal, rec.s_N = ns, ns.s_N
            x_plus = problem.project_to_box(x + ns.s_N)

    B = state.hess.matrix(problem, x)
    gamma_coeff, s_C = cauchy_step(g, s_L, B)
    lo2 = np.maximum(tset.box_lo, -hw)
    hi2 = np.minimum(tset.box_hi, hw)
    ts = tangential_step(
        g, s_L, s_C, B, config.tau, config.refine, (factor, lo2, hi2), gamma_coeff
    )
    rec.branch = TANGENTIAL
    rec.s_C, rec.s_T = s_C, ts.s_T
    rec.gamma_coeff, rec.model_C, rec.model_T = gamma_coeff, ts.model_C, ts.model_T
    rec.refined = ts.refined
    rec.B = B
    rec.B_norm = operator_norm(B)
    x_next = problem.project_to_box(x_plus + ts.s_T)
    rec.x_next = x_next
    oracle.observe_step(ts.s_T)
    new_state = IterateState(
        x=x_next,
        step_state=accumulate_gamma(st, d),
        k=state.k + 1,
        branches=_extend(state.branches, TANGENTIAL),
        hess=state.hess,
        prev_x=x,
        prev_g=g,
    )
    return new_state, rec


def solve(
    problem: Problem,
    oracle,
    config: SolverConfig | None = None,
    x0=None,
    callback: Callable[[StepDiagnostics], None] | None = None,
) -> SolveOutcome:
    """Run the method from ``x0`` (default ``problem.x0``) until termination.

    The oracle is reset to its own seed first, so equal inputs give equal
    traces.  ``callback`` receives each iteration record in order.
    """
    config = config or SolverConfig()
    oracle.reset()
    state = initial_state(problem, config, x0)
    trace = []
    status, message = "max_iter", ""
    max_iter = int(config.max_iter)
    while True:
        try:
            state, rec = step_once(state, problem, oracle, config, allow_step=state.k < max_iter)
        except InfeasibleNormalStepError as exc:
            status, message = "infeasible_normal_step", str(exc)
            break
        except (RankDeficientError, ProjectionError) as exc:
            status, message = "rank_deficient", str(exc)
            break
        trace.append(rec)
        if callback is not None:
            callback(rec)
        if rec.branch == TERMINATED:
            status = "converged"
            break
        if rec.branch == STOPPED:
            break
    if status != "converged" and status != "max_iter":
        logger.warning("solve stopped early at k=%d: %s", state.k, message)
    last = trace[-1] if trace else None
    return SolveOutcome(
        status=status,
        x=state.x,
        norm_d=last.norm_d if last else float("nan"),
        omega_N=last.omega_N if last else float("nan"),
        c_norm=last.c_norm if last else float("nan"),
        iterations=state.k,
        trace=trace,
        message=message,
    )


def _extend(branches: list, branch: str) -> list:
    branches.append(branch)
    return branches
