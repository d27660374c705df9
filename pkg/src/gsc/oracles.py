"""Brute-force reference computations for the test suite.

Nothing here is used by the library itself. The helpers deliberately avoid
the closed forms they are meant to check: responses are found by grid
argmax, margins by scanning directions, gradients by central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Dataset


def angle_grid_best_smargin(dataset: Dataset, n_angles: int = 3600, budget: float = 2.0):
    """Best strategic margin ``min_i y_i (u.x_i + budget z_i)`` over unit vectors ``u``.

    Returns ``(u, margin)``.
    """
    X = np.asarray(dataset.X, dtype=float)
    if X.shape[1] != 2:
        raise ValueError("angle grid search needs d = 2")
    if dataset.z is None:
        raise ValueError("dataset needs target labels")
    theta = np.arange(n_angles) * (2.0 * np.pi / n_angles)
    U = np.column_stack([np.cos(theta), np.sin(theta)])
    margins = np.empty(n_angles)
    for i, u in enumerate(U):
        vals = [yi * (u[0] * xi[0] + u[1] * xi[1] + budget * zi) for xi, yi, zi in zip(X, dataset.y, dataset.z)]
        margins[i] = min(vals)
    best = int(np.argmax(margins))
    return U[best], float(margins[best])


@dataclass
class FiniteDiff:
    grad: np.ndarray
    kinks: np.ndarray  # True where one-sided slopes disagree

    @property
    def has_kink(self) -> bool:
        return bool(self.kinks.any())


def finite_diff_grad(f: Callable[[np.ndarray], float], point, h: float = 1e-6, tol: float = 1e-4) -> FiniteDiff:
    """Central differences per coordinate, flagging coordinates that straddle a kink.

    A coordinate is flagged when its forward and backward slopes differ by
    more than ``10 * tol`` (relative to the slope scale).
    """
    p = np.asarray(point, dtype=float)
    f0 = float(f(p))
    if not np.isfinite(f0):
        raise ValueError("function is not finite at the evaluation point")
    grad = np.zeros_like(p)
    kinks = np.zeros(p.shape, dtype=bool)
    for idx in np.ndindex(p.shape):
        e = np.zeros_like(p)
        e[idx] = h
        fp, fm = float(f(p + e)), float(f(p - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation near coordinate {idx}")
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        grad[idx] = (fp - fm) / (2.0 * h)
        kinks[idx] = abs(fwd - bwd) > 10.0 * tol * max(1.0, abs(fwd), abs(bwd))
    return FiniteDiff(grad, kinks)


def grid_points(center, half_width: float, step: float) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    axes = [np.arange(c - half_width, c + half_width + step / 2, step) for c in center]
    return np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def grid_best_response(x, w, b: float, target: int, weight: float = 0.5, half_width: float = 2.5,
                       step: float = 0.01):
    """Argmax of ``1{sign(w.x' + b) = target} - weight ||x' - x||`` over a grid around ``x``.

    ``x`` itself is always a candidate; ties prefer lower cost, then the
    lexicographically smallest point. Returns ``(x_best, objective)``.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    P = np.vstack([x[None], grid_points(x, half_width, step)])
    score = P @ w + b
    pred = np.where(score >= 0, 1, -1)
    cost = weight * np.sqrt(np.sum((P - x) ** 2, axis=1))
    obj = (pred == target).astype(float) - cost
    best = obj.max()
    cand = np.flatnonzero(obj >= best - 1e-12)
    cand = cand[cost[cand] <= cost[cand].min() + 1e-12]
    order = np.lexsort(P[cand].T[::-1])
    return P[cand[order[0]]], float(best)


def gp_user_objective(x, x_new, w, b: float, target: int, weight: float = 0.5) -> float:
    """``1{sign(w.x_new + b) = target} - weight ||x_new - x||`` evaluated directly."""
    x, x_new, w = (np.asarray(v, dtype=float) for v in (x, x_new, w))
    pred = 1 if float(x_new @ w + b) >= 0 else -1
    return float(pred == target) - weight * float(np.linalg.norm(x_new - x))


def grid_strategic_distance(x, post_prediction: Callable[[np.ndarray], np.ndarray], half_width: float = 7.0,
                            coarse: float = 0.05, fine: float = 0.005) -> float:
    """Nearest grid point whose post-response prediction differs from that of ``x``.

    ``post_prediction`` maps an (N, d) array of points to predictions after
    each point's user responds. A coarse scan over the box is refined by a
    fine scan around the best coarse hit. Returns ``inf`` if nothing differs.
    """
    x = np.asarray(x, dtype=float)
    base = post_prediction(x[None])[0]
    P = grid_points(x, half_width, coarse)
    hits = P[post_prediction(P) != base]
    if hits.size == 0:
        return float("inf")
    dist = np.linalg.norm(hits - x, axis=1)
    best = hits[int(np.argmin(dist))]
    Q = grid_points(best, 3 * coarse, fine)
    qhits = Q[post_prediction(Q) != base]
    if qhits.size == 0:
        return float(dist.min())
    return float(min(dist.min(), np.linalg.norm(qhits - x, axis=1).min()))


def mc_strategic_error(X, y, responses, w, b: float = 0.0) -> float:
    """Fraction of points misclassified after they respond (responses given row-wise)."""
    scores = np.asarray(responses, dtype=float) @ np.asarray(w, dtype=float) + b
    pred = np.where(scores >= 0, 1, -1)
    return float(np.mean(pred != np.asarray(y)))


def minimize_scalar_grid(f: Callable[[float], float], low: float, high: float, n: int = 200001) -> float:
    """Argmin of a scalar function over a uniform grid."""
    t = np.linspace(low, high, n)
    vals = np.array([f(v) for v in t]) if n <= 5000 else f(t)
    return float(t[int(np.argmin(vals))])


__all__ = [
    "angle_grid_best_smargin", "FiniteDiff", "finite_diff_grad", "grid_points", "grid_best_response",
    "gp_user_objective", "grid_strategic_distance", "mc_strategic_error", "minimize_scalar_grid",
]
