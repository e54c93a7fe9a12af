"""Normal (feasibility) and tangential (AdaGrad trust-region) steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleNormalStepError, RankDeficientError
from .projections import JacobianFactor

ROUNDING_FLOOR = 64 * np.finfo(float).eps


@dataclass
class StepSizeState:
    """AdaGrad accumulator and the stepsizes derived from it.

    ``alpha`` and ``halfwidth`` refer to the projected gradient ``d`` last
    passed to :func:`update_stepsizes`; ``halfwidth[i]`` is alpha_i |d_i|,
    the half-width of the trust box.  A zero d_i pins that component of
    the tangential step at 0.  With a coupling Jacobian any positive width
    there lets the trust box shift the multiplier and move the component.
    """

    gamma: np.ndarray
    eta: float
    varsigma: float
    alpha: np.ndarray = None
    mu: int = 0
    halfwidth: np.ndarray = None

    @classmethod
    def initial(cls, n: int, eta: float, varsigma: float) -> "StepSizeState":
        return cls(gamma=np.zeros(n), eta=eta, varsigma=varsigma)


def update_stepsizes(state: StepSizeState, d: np.ndarray) -> StepSizeState:
    """alpha_i = eta / sqrt(Gamma_i + d_i^2 + varsigma); Gamma is left untouched."""
    denom_sq = state.gamma + d * d + state.varsigma
    alpha = state.eta / np.sqrt(denom_sq)
    return StepSizeState(
        gamma=state.gamma,
        eta=state.eta,
        varsigma=state.varsigma,
        alpha=alpha,
        mu=int(np.argmax(denom_sq)),
        halfwidth=trust_halfwidth(alpha, d),
    )


def trust_halfwidth(alpha, d) -> np.ndarray:
    return alpha * np.abs(d)


def accumulate_gamma(state: StepSizeState, d: np.ndarray) -> StepSizeState:
    return StepSizeState(
        gamma=state.gamma + d * d,
        eta=state.eta,
        varsigma=state.varsigma,
        alpha=state.alpha,
        mu=state.mu,
        halfwidth=state.halfwidth,
    )


@dataclass
class NormalStepResult:
    s_N: np.ndarray
    model_decrease: float
    actual_half_csq_before: float
    actual_half_csq_after: float
    inner_iterations: int
    c_after: np.ndarray
    stalled: bool = False


def normal_step(x, c_val, J_val, problem, theta_N, kappa_n, budget=31) -> NormalStepResult:
    """Projected Gauss-Newton Cauchy step on 1/2||c + J s||^2 with backtracking.

    The step lives in the shifted box intersected with the infinity-norm
    ball of radius theta_N * omega_N.  The steplength starts at the exact
    minimizer of the model along -J^T c and is halved until the actual value
    1/2||c(x+s)||^2 drops by at least kappa_n * omega_N^2.

    When ||c|| is already at the rounding level of its evaluation no step
    can certify the decrease; a zero step flagged ``stalled`` is returned
    instead of raising.
    """
    grad = J_val.T @ c_val
    omega = float(np.linalg.norm(grad))
    if omega == 0.0:
        raise ValueError("normal step requested at a point with J^T c = 0")
    cap = theta_N * omega
    lo = np.maximum(problem.lower - x, -cap)
    hi = np.minimum(problem.upper - x, cap)
    Jg = J_val @ grad
    JgJg = float(Jg @ Jg)
    t = omega * omega / JgJg if JgJg > 0.0 else cap / float(np.max(np.abs(grad)))
    half0 = 0.5 * float(c_val @ c_val)
    required = kappa_n * omega * omega
    floor = ROUNDING_FLOOR * max(1.0, float(np.linalg.norm(J_val)) * float(np.linalg.norm(x)))
    if np.sqrt(2.0 * half0) <= floor:
        return NormalStepResult(np.zeros_like(x), 0.0, half0, half0, 0, c_val.copy(), stalled=True)
    best = -np.inf
    for evals in range(1, budget + 1):
        s = np.minimum(np.maximum(-t * grad, lo), hi)
        x_new = np.minimum(np.maximum(x + s, problem.lower), problem.upper)
        s = x_new - x
        c_new = np.atleast_1d(np.asarray(problem.constraint(x_new), dtype=float))
        half = 0.5 * float(c_new @ c_new)
        if np.isfinite(half) and half <= half0 - required:
            r = c_val + J_val @ s
            return NormalStepResult(
                s_N=s,
                model_decrease=half0 - 0.5 * float(r @ r),
                actual_half_csq_before=half0,
                actual_half_csq_after=half,
                inner_iterations=evals,
                c_after=c_new,
            )
        if np.isfinite(half):
            best = max(best, half0 - half)
        t *= 0.5
    raise InfeasibleNormalStepError(best, required, budget)


def model_value(g, B, s) -> float:
    return float(g @ s + 0.5 * (s @ (B @ s)))


def cauchy_step(g, s_L, B):
    """Minimizer of g^T(t s_L) + 1/2 t^2 s_L^T B s_L over t in [0, 1]."""
    curv = float(s_L @ (B @ s_L))
    gamma = min(1.0, -float(g @ s_L) / curv) if curv > 0.0 else 1.0
    # rounding in a tiny s_L can flip the sign of g^T s_L; t = 0 is then the minimizer
    gamma = max(gamma, 0.0)
    return gamma, gamma * s_L


@dataclass
class TangentialStepResult:
    s_L: np.ndarray
    s_C: np.ndarray
    s_T: np.ndarray
    gamma_coeff: float
    model_C: float
    model_T: float
    refined: bool = False


def tangential_step(g, s_L, s_C, B, tau, refine=False, region=None, gamma_coeff=None):
    """Choose s_T with ||s_T|| >= ||s_C|| and m(s_T) <= tau m(s_C).

    Without refinement s_T = s_C.  With ``refine=True`` a projected
    truncated conjugate-gradient run continues from s_C inside ``region``
    (a ``(factor, lo, hi)`` triple describing {J y = 0, lo <= y <= hi}); its
    final iterate is used only if it satisfies every acceptance condition.
    """
    m_C = model_value(g, B, s_C)
    if gamma_coeff is None:
        gamma_coeff = cauchy_step(g, s_L, B)[0]
    base = TangentialStepResult(s_L, s_C, s_C.copy(), gamma_coeff, m_C, m_C)
    if not refine or region is None:
        return base
    factor, lo, hi = region
    cand = _projected_tcg(g, B, s_C, factor.J, lo, hi)
    if cand is None:
        return base
    m_T = model_value(g, B, cand)
    ok = (
        np.all(cand >= lo)
        and np.all(cand <= hi)
        and (factor.m == 0 or np.max(np.abs(factor.J @ cand)) <= 1e-10 * max(1.0, factor.norm))
        and np.linalg.norm(cand) >= np.linalg.norm(s_C)
        and m_T <= tau * m_C
    )
    if not ok:
        return base
    return TangentialStepResult(s_L, s_C, cand, gamma_coeff, m_C, m_T, refined=True)


def _projected_tcg(g, B, s0, J, lo, hi):
    n = s0.shape[0]
    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)))
    eps = 1e-12 * max(1.0, float(np.max(np.abs(s0), initial=0.0)))
    free = (s0 > lo + eps) & (s0 < hi - eps)
    if not np.any(free):
        return None
    try:
        fac = JacobianFactor(J[:, free]) if J.shape[0] else None
    except RankDeficientError:
        return None
    if fac is not None and fac.m >= int(free.sum()):
        return None

    def proj(r):
        z = np.zeros(n)
        z[free] = r[free] if fac is None else fac.project_null(r[free])
        return z

    s = s0.copy()
    r = g + B @ s
    z = proj(r)
    p = -z
    rz = float(r @ z)
    for _ in range(n):
        if np.sqrt(max(rz, 0.0)) <= 1e-12 * scale:
            break
        Bp = B @ p
        curv = float(p @ Bp)
        ratios = np.full(n, np.inf)
        neg = free & (p < 0)
        pos = free & (p > 0)
        ratios[neg] = (lo[neg] - s[neg]) / p[neg]
        ratios[pos] = (hi[pos] - s[pos]) / p[pos]
        t_max = max(0.0, float(np.min(ratios)))
        if curv <= 0.0:
            if not np.isfinite(t_max):
                return None
            s = s + t_max * p
            break
        t = rz / curv
        if t >= t_max:
            s = s + t_max * p
            break
        s = s + t * p
        r = r + t * Bp
        z = proj(r)
        rz_new = float(r @ z)
        p = -z + (rz_new / rz) * p
        rz = rz_new
    return np.minimum(np.maximum(s, lo), hi)
