"""Symmetric Hessian approximations B_k for the tangential model."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import ConfigError

KINDS = ("zero", "exact", "barzilai_borwein", "limited_memory_secant")

BB_SAFEGUARD = (1e-8, 1e8)


class HessianApprox:
    """Supplies B_k as a dense symmetric matrix.

    ``kind='barzilai_borwein'`` uses sigma * I with sigma = y^T y / s^T y
    (the reciprocal of the short BB stepsize s^T y / y^T y), clipped to
    ``BB_SAFEGUARD``.  ``kind='limited_memory_secant'`` runs dense BFGS
    updates over the last ``memory`` curvature pairs starting from the BB
    scaling.  Pairs with s^T y <= 1e-8 ||s|| ||y|| are skipped.
    """

    def __init__(self, kind: str = "zero", memory: int = 5):
        if kind not in KINDS:
            raise ConfigError(f"unknown Hessian kind {kind!r}; expected one of {KINDS}")
        if memory < 1:
            raise ConfigError("memory must be positive")
        self.kind = kind
        self.memory = memory
        self.reset()

    def reset(self):
        self._pairs = deque(maxlen=self.memory)
        self._sigma = 0.0
        self._cache = None

    def matrix(self, problem, x) -> np.ndarray:
        n = problem.n
        if self.kind == "zero":
            return np.zeros((n, n))
        if self.kind == "exact":
            if problem.hessian is None:
                raise ConfigError(f"problem {problem.name!r} has no analytic Hessian")
            H = np.asarray(problem.hessian(x), dtype=float)
            return 0.5 * (H + H.T)
        if self.kind == "barzilai_borwein":
            return self._sigma * np.eye(n)
        if self._cache is None:
            B = self._sigma * np.eye(n)
            for s, y in self._pairs:
                Bs = B @ s
                sBs = s @ Bs
                if sBs > 0:
                    B = B - np.outer(Bs, Bs) / sBs
                B = B + np.outer(y, y) / (s @ y)
            self._cache = 0.5 * (B + B.T)
        return self._cache

    def update(self, s: np.ndarray, y: np.ndarray) -> None:
        """Feed the displacement ``s = x_{k+1} - x_k`` and gradient change ``y``."""
        if self.kind in ("zero", "exact"):
            return
        sy = float(s @ y)
        if sy <= 1e-8 * np.linalg.norm(s) * np.linalg.norm(y) or sy <= 0.0:
            return
        lo, hi = BB_SAFEGUARD
        self._sigma = float(np.clip((y @ y) / sy, lo, hi))
        self._pairs.append((s.copy(), y.copy()))
        self._cache = None


def power_iteration_norm(B: np.ndarray, iters: int = 100, seed: int = 0) -> float:
    """Spectral norm of a symmetric matrix by power iteration on B^2."""
    n = B.shape[0]
    if n == 0 or not np.any(B):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = B @ (B @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        est = np.sqrt(nw)
    return float(est)


def operator_norm(B: np.ndarray) -> float:
    """Exact spectral norm (dense, desk scale)."""
    if B.size == 0 or not np.any(B):
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(B))))


def symmetry_defect(B: np.ndarray, rng: np.random.Generator, samples: int = 8) -> float:
    """max |y^T B z - z^T B y| / (||y|| ||z||) over random pairs."""
    n = B.shape[0]
    worst = 0.0
    for _ in range(samples):
        y, z = rng.standard_normal(n), rng.standard_normal(n)
        worst = max(worst, abs(y @ B @ z - z @ B @ y) / (np.linalg.norm(y) * np.linalg.norm(z)))
    return worst
