"""Stochastic gradient oracles with selectable noise models.

Modes
-----
``exact``
    g = G(x).
``additive_gaussian``
    g = G(x) + sigma * z,  z ~ N(0, I).
``step_proportional``
    g = G(x) + kappa_dir2 * ||s_prev|| * z / sqrt(n), where ``s_prev`` is the
    most recent tangential step, so E||G - g||^2 = kappa_dir2^2 ||s_prev||^2.
    The noise variance shrinks with the steps, mimicking a total-variance
    condition along the tangential step.
``finite_sum``
    g = average of per-sample gradients over a batch drawn without
    replacement.  A full batch reproduces G(x) exactly.
``history_relaxed``
    Like ``step_proportional`` but the noise scale is
    sum_j kappa_j * ||s_{k-j}|| over the last M tangential steps, so the
    bound only involves past (measurable) quantities.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

MODES = ("exact", "additive_gaussian", "step_proportional", "finite_sum", "history_relaxed")

_ALIASES = {
    "exact": "exact",
    "gaussian": "additive_gaussian",
    "additive_gaussian": "additive_gaussian",
    "step": "step_proportional",
    "step_proportional": "step_proportional",
    "batch": "finite_sum",
    "finite_sum": "finite_sum",
    "history": "history_relaxed",
    "history_relaxed": "history_relaxed",
}


@dataclass
class GradientOracle:
    mode: str = "exact"
    sigma: float = 0.0
    kappa_dir2: float = 0.0
    batch_size: int = 0
    kappas: tuple = ()
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)
    _history: deque = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown oracle mode {self.mode!r}; expected one of {MODES}")
        if self.sigma < 0 or self.kappa_dir2 < 0:
            raise ConfigError("noise levels must be nonnegative")
        self.kappas = tuple(float(k) for k in self.kappas)
        if self.mode == "history_relaxed":
            if not self.kappas or min(self.kappas) < 0 or max(self.kappas) <= 0:
                raise ConfigError("history_relaxed needs kappa_j >= 0 with at least one positive")
        if self.mode == "finite_sum" and self.batch_size <= 0:
            raise ConfigError("finite_sum needs a positive batch size")
        self.reset()

    def reset(self, seed: int | None = None) -> None:
        """Restart the random stream (and forget step history)."""
        if seed is not None:
            self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._history = deque(maxlen=max(1, len(self.kappas)))

    def observe_step(self, s_T: np.ndarray) -> None:
        """Record the norm of an accepted tangential step."""
        self._history.appendleft(float(np.linalg.norm(s_T)))

    def noise_scale(self) -> float:
        if self.mode == "step_proportional":
            return self.kappa_dir2 * (self._history[0] if self._history else 0.0)
        if self.mode == "history_relaxed":
            return sum(k * s for k, s in zip(self.kappas, self._history))
        return self.sigma

    def sample(self, problem, x):
        """Return ``(g, G)``; ``G`` is None when the problem has no true gradient."""
        if self.mode == "finite_sum":
            if problem.sample_gradient is None:
                raise ConfigError(f"problem {problem.name!r} has no finite-sum structure")
            N = problem.num_samples
            if self.batch_size >= N:
                idx = np.arange(N)
            else:
                idx = np.sort(self._rng.choice(N, size=self.batch_size, replace=False))
            g = np.asarray(problem.sample_gradient(x, idx), dtype=float)
            G = None if problem.gradient is None else np.asarray(problem.gradient(x), dtype=float)
            return g, G

        if problem.gradient is None:
            raise ConfigError(f"problem {problem.name!r} provides no gradient")
        G = np.asarray(problem.gradient(x), dtype=float)
        if self.mode == "exact":
            return G.copy(), G
        n = G.shape[0]
        z = self._rng.standard_normal(n)
        scale = self.noise_scale()
        if self.mode != "additive_gaussian":
            z /= np.sqrt(n)
        return G + scale * z, G


def parse_oracle(text: str, seed: int = 0) -> GradientOracle:
    """Build an oracle from ``mode[:params]``.

    >>> parse_oracle("gaussian:0.01").sigma
    0.01
    >>> parse_oracle("history:0.05,0.02").kappas
    (0.05, 0.02)
    """
    name, _, params = text.partition(":")
    mode = _ALIASES.get(name.strip())
    if mode is None:
        raise ConfigError(f"unknown oracle {name!r}; expected one of {sorted(_ALIASES)}")
    values = [float(p) for p in params.split(",") if p.strip()] if params else []
    if mode == "exact":
        return GradientOracle(seed=seed)
    if not values:
        raise ConfigError(f"oracle {mode} needs a parameter, e.g. {name}:0.1")
    if mode == "additive_gaussian":
        return GradientOracle(mode, sigma=values[0], seed=seed)
    if mode == "step_proportional":
        return GradientOracle(mode, kappa_dir2=values[0], seed=seed)
    if mode == "finite_sum":
        return GradientOracle(mode, batch_size=int(values[0]), seed=seed)
    return GradientOracle(mode, kappas=tuple(values), seed=seed)


def describe_oracle(oracle: GradientOracle) -> str:
    """Inverse of :func:`parse_oracle` (canonical form)."""
    if oracle.mode == "exact":
        return "exact"
    if oracle.mode == "additive_gaussian":
        return f"gaussian:{oracle.sigma!r}"
    if oracle.mode == "step_proportional":
        return f"step:{oracle.kappa_dir2!r}"
    if oracle.mode == "finite_sum":
        return f"batch:{oracle.batch_size}"
    return "history:" + ",".join(repr(k) for k in oracle.kappas)
