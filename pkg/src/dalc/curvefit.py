"""The 3-parameter saturating-curve baseline: y = c - exp(-a*x + b).

The abscissa is x = ln(1 + n) for anchor size n: raw sizes up to 100000
would underflow exp(-a*n) for any fittable a, while the log transform
keeps all three parameters in O(1) ranges. Fitting is damped Gauss-Newton
(Levenberg-Marquardt) with a deterministic multi-start grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import LearningCurve
from .errors import DegenerateSizes, EmptyList, TooFewObservations

_MAX_ITER = 200
_GRAD_TOL = 1e-10
# stop scanning starts once a fit is at machine-level residual; every
# remaining start could at best tie it
_SSE_EXACT = 1e-14


@dataclass(frozen=True)
class Exp3Params:
    """Parameters of y = c - exp(-a*x + b); c is the asymptote.

    On chrF-scale data a converged fit keeps c in [0, 1.5].
    """

    a: float
    b: float
    c: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=np.float64)


@dataclass(frozen=True)
class AnchorObservation:
    """A (sample size, gold mean chrF) training pair for the curve fit."""

    size: int
    score: float


def exp3_eval(p: Exp3Params, size: int) -> float:
    """Evaluate the curve at an anchor size (unclamped; may dip below 0)."""
    x = math.log1p(size)
    return p.c - math.exp(-p.a * x + p.b)


def _model(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = theta
    return c - np.exp(b - a * x)


def _sse(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        r = y - _model(theta, x)
        return float(np.dot(r, r))


def exp3_residual(p: Exp3Params, obs: Sequence[AnchorObservation]) -> float:
    """Sum of squared residuals of ``p`` on the observations."""
    x = np.array([math.log1p(o.size) for o in obs])
    y = np.array([o.score for o in obs])
    return _sse(p.as_array(), x, y)


def _start_grid(y: np.ndarray) -> list[np.ndarray]:
    a_grid = np.linspace(0.05, 2.0, 8)
    b_grid = np.linspace(-2.0, 3.0, 8)
    y_max = float(y.max())
    c_grid = [y_max, y_max + 0.1, 1.0]
    return [
        np.array([a, b, c])
        for a in a_grid
        for b in b_grid
        for c in c_grid
    ]


def _levenberg_marquardt(theta0: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    theta = theta0.copy()
    sse = _sse(theta, x, y)
    if not math.isfinite(sse):
        return theta, sse
    lam = 1e-3
    for _ in range(_MAX_ITER):
        a, b, _c = theta
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(b - a * x)
        r = y - _model(theta, x)
        # Jacobian of the residual wrt (a, b, c).
        jac = np.stack([-x * e, e, -np.ones_like(x)], axis=1)
        grad = jac.T @ r
        if not np.isfinite(grad).all():
            break
        if float(np.linalg.norm(grad)) < _GRAD_TOL:
            break
        jtj = jac.T @ jac
        stepped = False
        for _attempt in range(30):
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(damped, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = theta + delta
            cand_sse = _sse(candidate, x, y)
            if math.isfinite(cand_sse) and cand_sse < sse:
                theta = candidate
                sse = cand_sse
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            break
    return theta, sse


def exp3_fit(obs: Sequence[AnchorObservation]) -> Exp3Params:
    """Least-squares fit over the observations via multi-start LM.

    The returned parameters' residual never exceeds the residual of any
    grid start. Ties between starts break toward the earliest start index.
    """
    if len(obs) < 3:
        raise TooFewObservations(f"need >= 3 observations, got {len(obs)}")
    sizes = {o.size for o in obs}
    if len(sizes) < 3:
        raise DegenerateSizes(f"need >= 3 distinct sizes, got {len(sizes)}")

    x = np.array([math.log1p(o.size) for o in obs], dtype=np.float64)
    y = np.array([o.score for o in obs], dtype=np.float64)

    best_theta: np.ndarray | None = None
    best_sse = math.inf
    for theta0 in _start_grid(y):
        theta, sse = _levenberg_marquardt(theta0, x, y)
        if math.isfinite(sse) and sse < best_sse:
            best_theta = theta
            best_sse = sse
        if best_sse < _SSE_EXACT:
            break
    assert best_theta is not None  # the grid always contains finite starts
    return Exp3Params(a=float(best_theta[0]), b=float(best_theta[1]), c=float(best_theta[2]))


def exp3_curve(p: Exp3Params, sizes: Sequence[int]) -> LearningCurve:
    """Query the curve at the given sizes, clamped into chrF range [0, 1]."""
    if len(sizes) == 0:
        raise EmptyList("need at least one size to build a curve")
    return {int(s): min(max(exp3_eval(p, int(s)), 0.0), 1.0) for s in sorted(sizes)}
