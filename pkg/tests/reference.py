"""Independent reference computations used to derive expected test values."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import optimize, stats


def slsqp_projection(v, J, lo, hi):
    """argmin ||y - v||^2 s.t. J y = 0, lo <= y <= hi via a general NLP solver."""
    n = v.shape[0]
    bounds = [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in zip(lo, hi)]
    cons = [{"type": "eq", "fun": lambda y: J @ y, "jac": lambda y: J}] if J.shape[0] else []
    x0 = np.zeros(n)
    res = optimize.minimize(
        lambda y: 0.5 * float((y - v) @ (y - v)),
        x0,
        jac=lambda y: y - v,
        bounds=bounds,
        constraints=cons,
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return res.x


def equality_qp_kkt(H, h, A, b):
    """Solve min 1/2 x^T H x - h^T x s.t. A x = b through the dense KKT system."""
    n, m = H.shape[0], A.shape[0]
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([h, b]))
    # the sign convention: H x - h + A^T nu = 0, multiplier of f + lambda c is nu
    return sol[:n], sol[n:]


def running_average_exact(values):
    out, acc = [], []
    for k, v in enumerate(values):
        acc.append(float(v))
        out.append(math.fsum(acc) / (k + 1))
    return np.array(out)


def loglog_slope_exact(values):
    avg = running_average_exact(values)
    half = avg.size // 2
    k = np.arange(avg.size)
    fit = stats.linregress(np.log(k[half:] + 1.0), np.log(avg[half:]))
    return fit.slope, math.exp(fit.intercept)


def model_minimizer_on_region(g, B, J, lo, hi, starts=8, seed=0):
    """Best value of g^T s + 1/2 s^T B s over {J s = 0, lo <= s <= hi} (multi-start SLSQP)."""
    rng = np.random.default_rng(seed)
    n = g.shape[0]
    bounds = list(zip(lo, hi))
    cons = [{"type": "eq", "fun": lambda s: J @ s, "jac": lambda s: J}] if J.shape[0] else []
    best = None
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        for i in range(starts):
            x0 = np.zeros(n) if i == 0 else rng.uniform(lo, hi)
            res = optimize.minimize(
                lambda s: float(g @ s + 0.5 * s @ B @ s),
                x0,
                jac=lambda s: g + B @ s,
                bounds=bounds,
                constraints=cons,
                method="SLSQP",
                options={"ftol": 1e-14, "maxiter": 500},
            )
            if best is None or res.fun < best.fun:
                best = res
    return best.x, float(best.fun)
