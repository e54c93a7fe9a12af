"""Problem instances and the registry of desk-scale test problems.

A :class:`Problem` bundles the deterministic constraint data (``c``, ``J``,
bounds) with optional true-gradient, objective and Hessian callbacks.  The
solver itself only ever touches ``c``, ``J`` and the gradient oracle; the
objective value is kept for diagnostics (Lyapunov monitoring) so the method
stays objective-function free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import approx_fprime

from .errors import DimensionError, ProblemEvaluationError, UnknownProblemError

Vector = np.ndarray
VecFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Problem:
    """min E[f(x, zeta)]  s.t.  c(x) = 0,  lower <= x <= upper.

    Infinite bounds are encoded as IEEE infinities.
    """

    name: str
    lower: np.ndarray
    upper: np.ndarray
    constraint: VecFn
    jacobian: VecFn
    gradient: Optional[VecFn] = None
    objective: Optional[Callable[[np.ndarray], float]] = None
    hessian: Optional[VecFn] = None
    x0: Optional[np.ndarray] = None
    x_star: Optional[np.ndarray] = None
    lambda_star: Optional[np.ndarray] = None
    # finite-sum structure: sample_gradient(x, idx) averages per-sample gradients
    sample_gradient: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    num_samples: int = 0
    m: int = -1
    description: str = ""
    data: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).copy()
        self.upper = np.asarray(self.upper, dtype=float).copy()
        if self.lower.ndim != 1 or self.lower.shape != self.upper.shape:
            raise DimensionError("lower and upper must be 1-d vectors of equal length")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise DimensionError("bounds must not contain NaN")
        if np.any(self.lower > self.upper):
            raise DimensionError("empty box: some lower bound exceeds its upper bound")
        if self.m < 0:
            probe = self.x0 if self.x0 is not None else self.project_to_box(np.zeros(self.n))
            self.m = int(np.atleast_1d(self.constraint(probe)).shape[0])
        if self.m > self.n:
            raise DimensionError(f"m={self.m} exceeds n={self.n}")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float).copy()

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def project_to_box(self, x: Vector) -> Vector:
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def in_box(self, x: Vector, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def random_box_point(self, rng: np.random.Generator, spread: float = 2.0) -> Vector:
        """Uniform sample from the box, with infinite sides truncated at ``spread``."""
        lo = np.where(np.isfinite(self.lower), self.lower, np.minimum(self.upper, 0.0) - spread)
        hi = np.where(np.isfinite(self.upper), self.upper, np.maximum(self.lower, 0.0) + spread)
        return rng.uniform(lo, hi)


@dataclass
class GradientSample:
    """One oracle call: the realized gradient, the true one when known, and c, J."""

    g: np.ndarray
    G: Optional[np.ndarray]
    c_val: np.ndarray
    J_val: np.ndarray


def _check_finite(arr, what, x):
    if not np.all(np.isfinite(arr)):
        raise ProblemEvaluationError(what, x)


def evaluate_constraints(problem: Problem, x: Vector) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(c(x), J(x))`` with shape and finiteness checks."""
    n, m = problem.n, problem.m
    if x.shape != (n,):
        raise DimensionError(f"x has shape {x.shape}, expected ({n},)")
    c_val = np.atleast_1d(np.asarray(problem.constraint(x), dtype=float))
    J_val = np.asarray(problem.jacobian(x), dtype=float).reshape(-1, n) if m else np.zeros((0, n))
    if c_val.shape != (m,):
        raise DimensionError(f"c(x) has shape {c_val.shape}, expected ({m},)")
    if J_val.shape != (m, n):
        raise DimensionError(f"J(x) has shape {J_val.shape}, expected ({m}, {n})")
    _check_finite(c_val, "constraint value", x)
    _check_finite(J_val, "Jacobian", x)
    return c_val, J_val


def true_gradient(problem: Problem, x: Vector) -> Optional[np.ndarray]:
    if problem.gradient is None:
        return None
    G = np.asarray(problem.gradient(x), dtype=float)
    if G.shape != (problem.n,):
        raise DimensionError(f"gradient has shape {G.shape}, expected ({problem.n},)")
    _check_finite(G, "gradient", x)
    return G


def evaluate(problem: Problem, oracle, x: Vector) -> GradientSample:
    """Evaluate ``c``, ``J`` deterministically and draw one gradient from ``oracle``."""
    x = np.asarray(x, dtype=float)
    c_val, J_val = evaluate_constraints(problem, x)
    g, G = oracle.sample(problem, x)
    if g.shape != (problem.n,):
        raise DimensionError(f"sampled gradient has shape {g.shape}, expected ({problem.n},)")
    _check_finite(g, "sampled gradient", x)
    return GradientSample(g=g, G=G, c_val=c_val, J_val=J_val)


def fd_jacobian_error(problem: Problem, x: Vector, step: float = 1e-7) -> float:
    """Relative mismatch between ``J(x)`` and a finite-difference Jacobian of ``c``."""
    if problem.m == 0:
        return 0.0
    _, J = evaluate_constraints(problem, x)
    fd = np.atleast_2d(approx_fprime(x, lambda z: np.atleast_1d(problem.constraint(z)), step))
    return float(np.linalg.norm(J - fd) / max(1.0, np.linalg.norm(J)))


def fd_gradient_error(problem: Problem, x: Vector, step: float = 1e-7) -> float:
    """Relative mismatch between the true gradient and finite differences of ``f``."""
    if problem.gradient is None or problem.objective is None:
        return 0.0
    G = true_gradient(problem, x)
    fd = approx_fprime(x, problem.objective, step)
    return float(np.linalg.norm(G - fd) / max(1.0, np.linalg.norm(G)))


# ---------------------------------------------------------------------------
# registry


def sphere_linear() -> Problem:
    """min x1 + x2  s.t.  x1^2 + x2^2 = 2,  -2 <= x <= 2.

    KKT point (-1, -1) with multiplier 1/2 (Lagrangian f + lambda * c).
    """
    return Problem(
        name="sphere-linear",
        lower=np.full(2, -2.0),
        upper=np.full(2, 2.0),
        constraint=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 2.0]),
        jacobian=lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        gradient=lambda x: np.ones(2),
        objective=lambda x: float(x[0] + x[1]),
        hessian=lambda x: np.zeros((2, 2)),
        x0=np.array([1.5, 0.5]),
        x_star=np.array([-1.0, -1.0]),
        lambda_star=np.array([0.5]),
        m=1,
        description="linear objective on a circle, box [-2,2]^2",
    )


def separable_quadratic(lower=None, upper=None) -> Problem:
    """min sum_i w_i/2 (x_i - t_i)^2  s.t.  x1 + x2 + x3 = 2, bounds.

    With the default box the bound x3 >= 0 is active at the solution
    (2/3, 4/3, 0), multiplier 4/3.
    """
    w = np.array([1.0, 2.0, 1.0])
    t = np.array([2.0, 2.0, -1.0])
    a = np.ones(3)
    lower = np.zeros(3) if lower is None else np.asarray(lower, dtype=float)
    upper = np.array([3.0, np.inf, 3.0]) if upper is None else np.asarray(upper, dtype=float)
    default_box = np.array_equal(lower, np.zeros(3)) and np.array_equal(
        upper, np.array([3.0, np.inf, 3.0])
    )
    return Problem(
        name="separable-quadratic",
        lower=lower,
        upper=upper,
        constraint=lambda x: np.array([a @ x - 2.0]),
        jacobian=lambda x: a[None, :].copy(),
        gradient=lambda x: w * (x - t),
        objective=lambda x: float(0.5 * np.sum(w * (x - t) ** 2)),
        hessian=lambda x: np.diag(w),
        x0=np.array([2.5, 0.5, 1.0]),
        x_star=np.array([2.0 / 3.0, 4.0 / 3.0, 0.0]) if default_box else None,
        lambda_star=np.array([4.0 / 3.0]) if default_box else None,
        m=1,
        description="weighted separable quadratic, one linear equality, active lower bound",
        data={"w": w, "t": t, "a": a, "b": 2.0},
    )


def rosenbrock_circle() -> Problem:
    """min (1 - x1)^2 + 10 (x2 - x1^2)^2  s.t.  x1^2 + x2^2 = 1.

    The box keeps x1 >= 0.1 so the Jacobian 2x never vanishes.
    """

    def grad(x):
        r = x[1] - x[0] ** 2
        return np.array([-2.0 * (1.0 - x[0]) - 40.0 * x[0] * r, 20.0 * r])

    def hess(x):
        return np.array(
            [[2.0 - 40.0 * x[1] + 120.0 * x[0] ** 2, -40.0 * x[0]], [-40.0 * x[0], 20.0]]
        )

    return Problem(
        name="rosenbrock-circle",
        lower=np.array([0.1, -1.5]),
        upper=np.array([1.5, 1.5]),
        constraint=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
        jacobian=lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        gradient=grad,
        objective=lambda x: float((1.0 - x[0]) ** 2 + 10.0 * (x[1] - x[0] ** 2) ** 2),
        hessian=hess,
        x0=np.array([1.2, -0.5]),
        # Newton on the KKT system, residual ~1e-16
        x_star=np.array([0.788740493543873, 0.6147263080787805]),
        lambda_star=np.array([0.12013896233159693]),
        m=1,
        description="Rosenbrock-type objective on the unit circle",
    )


def finite_sum_problem(features, targets, name="finite-sum-lsq") -> Problem:
    """min 1/(2N) sum_i (a_i^T x - y_i)^2  s.t.  sum(x) = 1,  x >= 0."""
    A = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise DimensionError("features must be (N, n) and targets (N,)")
    N, n = A.shape
    all_idx = np.arange(N)

    def sample_gradient(x, idx):
        Ab = A[idx]
        return Ab.T @ (Ab @ x - y[idx]) / len(idx)

    H = A.T @ A / N
    return Problem(
        name=name,
        lower=np.zeros(n),
        upper=np.full(n, np.inf),
        constraint=lambda x: np.array([np.sum(x) - 1.0]),
        jacobian=lambda x: np.ones((1, n)),
        gradient=lambda x: sample_gradient(x, all_idx),
        objective=lambda x: float(0.5 * np.mean((A @ x - y) ** 2)),
        hessian=lambda x: H,
        x0=np.full(n, 1.0 / n),
        sample_gradient=sample_gradient,
        num_samples=N,
        m=1,
        description="simplex-constrained least squares over a finite sum",
        data={"A": A, "y": y},
    )


def default_finite_sum_data(num_samples: int = 64, dim: int = 4, seed: int = 20260101):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((num_samples, dim))
    x_true = np.linspace(1.0, 0.0, dim)
    x_true /= x_true.sum()
    y = A @ x_true + 0.1 * rng.standard_normal(num_samples)
    return A, y


def load_finite_sum_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read rows ``feature_1, ..., feature_n, target`` (no header)."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] < 2:
        raise DimensionError("finite-sum CSV needs at least one feature column and a target")
    return data[:, :-1], data[:, -1]


def finite_sum_lsq(csv_path=None) -> Problem:
    A, y = default_finite_sum_data() if csv_path is None else load_finite_sum_csv(csv_path)
    return finite_sum_problem(A, y)


_REGISTRY: dict[str, Callable[..., Problem]] = {}


def register_test_problems() -> dict[str, Callable[..., Problem]]:
    """Return the name -> factory mapping of built-in problems."""
    if not _REGISTRY:
        _REGISTRY.update(
            {
                "sphere-linear": sphere_linear,
                "separable-quadratic": separable_quadratic,
                "rosenbrock-circle": rosenbrock_circle,
                "finite-sum-lsq": finite_sum_lsq,
            }
        )
    return dict(_REGISTRY)


def get_problem(name: str, **kwargs) -> Problem:
    registry = register_test_problems()
    try:
        factory = registry[name]
    except KeyError:
        raise UnknownProblemError(name, sorted(registry)) from None
    return factory(**kwargs)
