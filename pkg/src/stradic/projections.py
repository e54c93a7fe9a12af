"""Euclidean projections onto {y : J y = 0, lo <= y <= hi}.

Every projection the solver needs (the projected gradient ``d``, the
trust-restricted step ``s_L`` and the true measure) is an instance of

    min 1/2 ||y - v||^2   s.t.   J y = 0,  lo <= y <= hi,   lo <= 0 <= hi,

a strictly convex QP whose feasible set always contains the origin.  It is
solved by, in order:

1. the closed-form null-space projection, when that already lies in the box;
2. for a single constraint row a, an exact breakpoint search on the scalar
   multiplier: y(mu) = clip(v - mu a) and a^T y(mu) is monotone in mu;
3. otherwise Dykstra's alternating projections between null(J) and the box;
4. an exact primal active-set method started from the feasible origin, used
   when Dykstra has not reached the KKT tolerance after its sweep budget.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import lsq_linear

from .errors import DimensionError, ProjectionError, RankDeficientError

TOL_EQ = 1e-10
TOL_BOX = 1e-10
TOL_VI = 1e-8
RANK_RTOL = 1e-10


class JacobianFactor:
    """Thin QR of J^T, shared by every projection and multiplier at one iterate.

    With J^T = Q R we have J J^T = R^T R, the null-space projector is
    I - Q Q^T and the least-squares multiplier is -R^{-1} Q^T g.
    """

    def __init__(self, J: np.ndarray, rank_rtol: float = RANK_RTOL):
        J = np.atleast_2d(np.asarray(J, dtype=float))
        # entries below rounding relative to the largest one only make the
        # routes disagree about what counts as J y = 0
        big = float(np.max(np.abs(J), initial=0.0))
        if big > 0.0:
            J = np.where(np.abs(J) <= np.finfo(float).eps * big, 0.0, J)
        self.J = J
        self.m, self.n = J.shape
        if self.m == 0:
            self.Q = np.zeros((self.n, 0))
            self.R = np.zeros((0, 0))
            self.sigma_min = np.inf
            self.norm = 0.0
            return
        if self.m > self.n:
            raise DimensionError(f"J has more rows ({self.m}) than columns ({self.n})")
        if self.m == 1:
            a = J[0]
            nrm = float(np.sqrt(a @ a))
            self.norm = self.sigma_min = nrm
            if nrm == 0.0:
                raise RankDeficientError(0.0, 0.0)
            self.Q = (a / nrm)[:, None]
            self.R = np.array([[nrm]])
            return
        self.Q, self.R = np.linalg.qr(J.T)
        sv = np.linalg.svd(self.R, compute_uv=False)
        self.norm = float(sv[0])
        self.sigma_min = float(sv[-1])
        threshold = rank_rtol * self.norm
        if self.norm == 0.0 or self.sigma_min <= threshold:
            raise RankDeficientError(self.sigma_min, threshold)

    def project_null(self, v: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return v.copy()
        return v - self.Q @ (self.Q.T @ v)

    def multiplier(self, g: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        if self.m == 1:
            return np.array([-(self.Q[:, 0] @ g) / self.R[0, 0]])
        return -solve_triangular(self.R, self.Q.T @ g)


class TangentBoxSet:
    """{y : J y = 0, box_lo <= y <= box_hi} with box_lo = l - x, box_hi = u - x."""

    def __init__(self, J, box_lo, box_hi, factor: JacobianFactor | None = None):
        self.factor = JacobianFactor(J) if factor is None else factor
        self.J = self.factor.J
        self.box_lo = np.asarray(box_lo, dtype=float)
        self.box_hi = np.asarray(box_hi, dtype=float)
        n = self.factor.n
        if self.box_lo.shape != (n,) or self.box_hi.shape != (n,):
            raise DimensionError("box vectors must match the number of Jacobian columns")

    @classmethod
    def at(cls, x, lower, upper, J, factor=None):
        return cls(J, lower - x, upper - x, factor)

    def contains(self, y, tol_eq=TOL_EQ, tol_box=TOL_BOX) -> bool:
        scale = max(1.0, self.factor.norm)
        return bool(
            np.all(y >= self.box_lo - tol_box)
            and np.all(y <= self.box_hi + tol_box)
            and (self.factor.m == 0 or np.linalg.norm(self.J @ y) <= tol_eq * scale)
        )


@dataclass
class ProjectionResult:
    point: np.ndarray
    kkt_residual: float
    iterations_used: int
    method: str  # analytic_nullspace | breakpoint_search | dykstra | activeset_qp


METHODS = ("auto", "dykstra", "activeset")


def project_tangent_box(
    g, tset: TangentBoxSet, tol: float = TOL_EQ, method: str = "auto"
) -> ProjectionResult:
    """Project -g onto the tangent-box set.

    ``method='dykstra'`` or ``'activeset'`` skips the shortcuts that come
    before that route (for testing the general machinery).
    """
    return _project(-np.asarray(g, dtype=float), tset.factor, tset.box_lo, tset.box_hi, tol, method)


def project_tangent_two_boxes(
    g, tset: TangentBoxSet, trust_lo, trust_hi, tol: float = TOL_EQ, method: str = "auto"
) -> ProjectionResult:
    """Project -g onto the tangent-box set further intersected with a trust box."""
    lo = np.maximum(tset.box_lo, trust_lo)
    hi = np.minimum(tset.box_hi, trust_hi)
    if np.any(lo > 0.0) or np.any(hi < 0.0):
        raise DimensionError("intersected box does not contain the origin")
    return _project(-np.asarray(g, dtype=float), tset.factor, lo, hi, tol, method)


def least_squares_multiplier(J, g, factor: JacobianFactor | None = None) -> np.ndarray:
    """Solve (J J^T) lambda = -J g."""
    if factor is None:
        factor = JacobianFactor(J)
    return factor.multiplier(np.asarray(g, dtype=float))


def kkt_residual(y, v, J, lo, hi, act_tol=None) -> float:
    """KKT residual of ``y`` for min 1/2||y - v||^2 over the set.

    v - y must equal J^T mu + z with z <= 0 on lower-active, z >= 0 on
    upper-active and z = 0 on free components.  Returns the largest
    violation of stationarity, sign conditions and feasibility, scaled by
    max(1, ||v||_inf).
    """
    y = np.asarray(y, dtype=float)
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
    if act_tol is None:
        act_tol = 1e-9 * scale
    r = v - y
    at_lo = y <= lo + act_tol
    at_hi = y >= hi - act_tol
    free = ~(at_lo | at_hi)
    m = J.shape[0]
    feas = max(
        float(np.max(lo - y, initial=0.0)),
        float(np.max(y - hi, initial=0.0)),
        float(np.max(np.abs(J @ y), initial=0.0)) if m else 0.0,
    )
    if m and np.any(free):
        mu = np.linalg.lstsq(J[:, free].T, r[free], rcond=None)[0]
        z = r - J.T @ mu
    elif m:
        mu = np.zeros(m)
        z = r
    else:
        z = r
    stat = float(np.max(np.abs(z[free]), initial=0.0))
    lo_only = at_lo & ~at_hi
    hi_only = at_hi & ~at_lo
    sign = max(
        float(np.max(z[lo_only], initial=0.0)),
        float(np.max(-z[hi_only], initial=0.0)),
    )
    if m and max(stat, sign) > 1e-12 * scale:
        # mu is not pinned down by the free rows; fit it jointly with signed z
        stat, sign = _signed_multiplier_fit(J, r, lo_only, hi_only, at_lo & at_hi), 0.0
    return max(stat, sign, feas) / scale


def _signed_multiplier_fit(J, r, lo_only, hi_only, pinned) -> float:
    """min ||J^T mu + z - r||_inf over mu free and z with the bound-activity signs."""
    active = lo_only | hi_only | pinned
    idx = np.flatnonzero(active)
    E = np.zeros((r.shape[0], idx.size))
    E[idx, np.arange(idx.size)] = 1.0
    A = np.hstack([J.T, E])
    m = J.shape[0]
    lb = np.concatenate([np.full(m, -np.inf), np.where(hi_only[idx], 0.0, -np.inf)])
    ub = np.concatenate([np.full(m, np.inf), np.where(lo_only[idx], 0.0, np.inf)])
    sol = lsq_linear(A, r, bounds=(lb, ub), method="bvls", tol=1e-14)
    return float(np.max(np.abs(A @ sol.x - r), initial=0.0))


def _project(v, factor: JacobianFactor, lo, hi, tol, method="auto") -> ProjectionResult:
    if method not in METHODS:
        raise ValueError(f"unknown projection method {method!r}")
    J = factor.J
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))

    if factor.m == 0:
        # pure box: the clamp is exact
        return ProjectionResult(np.minimum(np.maximum(v, lo), hi), 0.0, 0, "analytic_nullspace")

    if method == "activeset":
        point, res, iters = _active_set_qp(v, J, lo, hi, tol, factor)
        return ProjectionResult(point, res, iters, "activeset_qp")

    if method == "auto":
        y = factor.project_null(v)
        if np.all(y >= lo - TOL_BOX) and np.all(y <= hi + TOL_BOX):
            y = np.minimum(np.maximum(y, lo), hi)
            res = float(np.max(np.abs(J @ y))) / scale
            return ProjectionResult(y, res, 0, "analytic_nullspace")
        if factor.m == 1:
            # extreme coefficient ratios can overflow; the residual test rejects those
            with np.errstate(over="ignore", invalid="ignore"):
                y, pieces = _breakpoint_search(v, J[0], lo, hi)
                res = abs(float(J[0] @ y)) / scale
            if res <= tol:
                return ProjectionResult(y, res, pieces, "breakpoint_search")

    n = factor.n
    cap = 10 * n * (factor.m + 1)
    x = np.minimum(np.maximum(v, lo), hi)
    q = v - x
    sweeps = 0
    for sweeps in range(1, cap + 1):
        # null(J) is a subspace, so its Dykstra correction term vanishes
        y = factor.project_null(x)
        x_new = np.minimum(np.maximum(y + q, lo), hi)
        q = y + q - x_new
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        if change <= 0.1 * tol * scale:
            break
    res = kkt_residual(x, v, J, lo, hi)
    if res <= tol:
        return ProjectionResult(x, res, sweeps, "dykstra")

    point, res, iters = _active_set_qp(v, J, lo, hi, tol, factor)
    return ProjectionResult(point, res, sweeps + iters, "activeset_qp")


def _breakpoint_search(v, a, lo, hi):
    """Exact projection onto {a^T y = 0, lo <= y <= hi} (single row).

    y(mu) = clip(v - mu a, lo, hi) solves the KKT system once mu makes
    phi(mu) = a^T y(mu) vanish; phi is continuous, piecewise linear and
    nonincreasing, with kinks where a component hits a bound.
    """
    nz = a != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = (v - lo) / a
        b2 = (v - hi) / a
    bps = np.concatenate((b1[nz], b2[nz]))
    bps = np.unique(bps[np.isfinite(bps)])
    if bps.size == 0:
        # no finite bound interacts with a: plain null-space projection
        mu = (a @ v) / (a @ a)
        return np.minimum(np.maximum(v - mu * a, lo), hi), 0
    Y = np.minimum(np.maximum(v[None, :] - bps[:, None] * a[None, :], lo), hi)
    phi = Y @ a
    if phi[0] < 0.0 or phi[-1] > 0.0:
        # root beyond the outermost kink; only components unbounded in the
        # direction of travel still move with mu there
        left = phi[0] < 0.0
        j = 0 if left else len(bps) - 1
        toward_hi = (a > 0) if left else (a < 0)
        free = nz & np.where(toward_hi, np.isinf(hi), np.isinf(lo))
        slope = float(np.sum(a[free] ** 2))
        if slope == 0.0:
            # phi is flat past the kink, so its sign there is rounding noise
            return Y[j], j
        mu = bps[j] + phi[j] / slope
    else:
        j = int(np.nonzero(phi >= 0.0)[0][-1])
        if phi[j] == 0.0 or j == len(bps) - 1:
            return Y[j], j
        mu = bps[j] + phi[j] / (phi[j] - phi[j + 1]) * (bps[j + 1] - bps[j])
    return np.minimum(np.maximum(v - mu * a, lo), hi), j


def _active_set_qp(v, J, lo, hi, tol, factor):
    """Primal active-set method for the projection QP, started at y = 0."""
    n = v.shape[0]
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
    y = np.zeros(n)
    # fixed[i]: 0 free, -1 held at lo, +1 held at hi, 2 pinned (lo == hi)
    pinned = lo == hi
    fixed = np.where(pinned, 2, 0)
    y[pinned] = lo[pinned]
    max_iter = 50 * (n + 1)
    drop_tol = 1e-2 * tol * scale
    for it in range(1, max_iter + 1):
        F = fixed == 0
        JF = J[:, F]
        rhs = -J[:, ~F] @ y[~F]
        vF = v[F]
        if JF.shape[1]:
            corr = np.linalg.lstsq(JF, rhs - JF @ vF, rcond=None)[0]
            yhat = vF + corr
        else:
            yhat = vF
        p = np.zeros(n)
        p[F] = yhat - y[F]
        if np.max(np.abs(p), initial=0.0) <= 1e-13 * scale:
            y[F] = yhat
            r = v - y
            mu = np.linalg.lstsq(JF.T, r[F], rcond=None)[0] if JF.shape[1] else np.zeros(J.shape[0])
            z = r - J.T @ mu
            viol = np.where(fixed == -1, z, np.where(fixed == 1, -z, -np.inf))
            worst = int(np.argmax(viol))
            if viol[worst] <= drop_tol:
                y = np.minimum(np.maximum(y, lo), hi)
                return y, kkt_residual(y, v, J, lo, hi), it
            # with fewer free columns than rows the multipliers above are not
            # unique and their signs can mislead; ask the signed fit first
            res = kkt_residual(np.minimum(np.maximum(y, lo), hi), v, J, lo, hi)
            if res <= tol:
                return np.minimum(np.maximum(y, lo), hi), res, it
            fixed[worst] = 0
            continue
        ratios = np.full(n, np.inf)
        neg = F & (p < 0) & np.isfinite(lo)
        pos = F & (p > 0) & np.isfinite(hi)
        with np.errstate(over="ignore"):  # a vanishing p_i means no block
            ratios[neg] = (lo[neg] - y[neg]) / p[neg]
            ratios[pos] = (hi[pos] - y[pos]) / p[pos]
        ratios = np.maximum(ratios, 0.0)
        block = int(np.argmin(ratios))
        t = ratios[block]
        if t >= 1.0:
            y = y + p
            continue
        y = y + t * p
        if p[block] < 0:
            y[block], fixed[block] = lo[block], -1
        else:
            y[block], fixed[block] = hi[block], 1
    raise ProjectionError(
        f"active-set projection did not converge in {max_iter} iterations "
        f"(sigma_min(J)={factor.sigma_min:.3e})"
    )


def brute_force_projection_oracle(g, tset: TangentBoxSet, trust=None) -> np.ndarray:
    """Exact projection by enumerating every bound-activity pattern.

    Each component is free, at its lower bound or at its upper bound; for
    each pattern the equality-constrained least-squares subproblem is solved
    in closed form and kept if feasible.  Only for verification (n <= 6,
    m <= 2).
    """
    J = np.atleast_2d(tset.J)
    m, n = J.shape if J.size else (0, tset.box_lo.shape[0])
    if n > 6 or m > 2:
        raise ValueError(f"brute force oracle limited to n<=6, m<=2 (got n={n}, m={m})")
    lo, hi = tset.box_lo.copy(), tset.box_hi.copy()
    if trust is not None:
        lo = np.maximum(lo, trust[0])
        hi = np.minimum(hi, trust[1])
    v = -np.asarray(g, dtype=float)
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
    choices = []
    for i in range(n):
        opts = [0]
        if np.isfinite(lo[i]):
            opts.append(-1)
        if np.isfinite(hi[i]) and hi[i] != lo[i]:
            opts.append(1)
        choices.append(opts)
    best, best_val = None, np.inf
    for pattern in itertools.product(*choices):
        pat = np.array(pattern)
        F = pat == 0
        y = np.where(pat == -1, lo, np.where(pat == 1, hi, 0.0))
        if m:
            JF = J[:, F]
            rhs = -J[:, ~F] @ y[~F]
            if JF.shape[1]:
                corr, *_ = np.linalg.lstsq(JF, rhs - JF @ v[F], rcond=None)
                y[F] = v[F] + corr
            if np.max(np.abs(J @ y)) > 1e-9 * scale:
                continue
        else:
            y[F] = v[F]
        if np.any(y < lo - 1e-12 * scale) or np.any(y > hi + 1e-12 * scale):
            continue
        val = float(np.sum((y - v) ** 2))
        if val < best_val:
            best, best_val = y, val
    if best is None:
        raise ProjectionError("no feasible activity pattern found")
    return np.minimum(np.maximum(best, lo), hi)
