"""Strategic geometry: flipping costs, strategic distances and margins."""

from __future__ import annotations

import math

import numpy as np

from .core import Dataset, Example, LinearModel, TargetLabel, sign_pred
from .response import GP_FAMILY, Kind, ResponseSetting, gp_response, respond, respond_dataset, target_labels

INFINITE_DISTANCE = math.inf


def _as_model(w) -> LinearModel:
    return w if isinstance(w, LinearModel) else LinearModel(w)


def flipping_cost(w, x):
    """Distance from ``x`` to the decision boundary (L2-norm cost)."""
    model = _as_model(w)
    n = model.checked_norm()
    out = np.abs(model.score(x)) / n
    return float(out) if np.ndim(out) == 0 else out


def in_flip_set(w, x, budget: float = 2.0):
    out = np.asarray(flipping_cost(w, x)) <= budget
    return bool(out) if out.ndim == 0 else out


def strategic_distance_gp(w, x, z, budget: float = 2.0):
    """Closed-form strategic distance ``|f(x)/||w|| + budget * z|``."""
    model = _as_model(w)
    n = model.checked_norm()
    out = np.abs(model.score(x) / n + budget * np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _post_response_predictions(setting: ResponseSetting, model, P: np.ndarray, z, y: int):
    """Predictions of ``h`` on the responses of grid points ``P`` sharing side info ``z``."""
    if setting.kind is Kind.NONE:
        return sign_pred(model.score(P))
    if setting.kind in GP_FAMILY:
        target = respond_target(setting, z, y)
        moved, _ = gp_response(P, model.w, model.b, target, setting.budget, setting.crossing_eta)
        return sign_pred(model.score(moved))
    if setting.kind is Kind.NOISE:
        moved, _ = gp_response(P, model.w + z.values, model.b, 1.0, setting.budget, setting.crossing_eta)
        return sign_pred(model.score(moved))
    # fall back to per-point dispatch
    return np.array([sign_pred(model.score(respond(setting, model, Example(p, z, y)))) for p in P])


def respond_target(setting: ResponseSetting, z, y: int) -> int:
    if setting.kind is Kind.SC:
        return 1
    if setting.kind is Kind.ADV:
        return -y
    return z.value if isinstance(z, TargetLabel) else int(z)


def _directions(d: int, n_dirs: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.arange(n_dirs) * (2 * np.pi / n_dirs)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    # roughly uniform points on the sphere (golden-angle spiral)
    i = np.arange(n_dirs) + 0.5
    phi = np.arccos(1 - 2 * i / n_dirs)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def strategic_distance_generic(setting: ResponseSetting, model, x, z, *, bounds: float = 6.0,
                               step: float = 0.01, y: int = 1, n_dirs: int = 3600,
                               march: float = 0.05) -> float:
    """Search-based strategic distance for low-dimensional linear settings.

    Marches outward from ``x`` along a grid of directions (radial step
    ``march``) up to radius ``bounds``, then bisects the first change of the
    post-response prediction down to ``step``. Returns ``inf`` when no
    differing point exists within the search radius.
    """
    if setting.kind is Kind.PPE:
        raise ValueError("use losses.ppe_strategic_distance for PPE")
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    if d > 3:
        raise ValueError(f"direction search supports d <= 3, got d={d}")
    if isinstance(z, (int, np.integer)) and setting.kind in (Kind.NL, Kind.GP):
        z = TargetLabel(int(z))

    def pred(P):
        return _post_response_predictions(setting, model, P, z, y)

    base = pred(x[None])[0]
    U = _directions(d, n_dirs)
    radii = np.arange(1, int(np.ceil(bounds / march)) + 1) * march
    radii[-1] = min(radii[-1], bounds)
    P = x + radii[None, :, None] * U[:, None, :]  # (dirs, radii, d)
    differs = (pred(P.reshape(-1, d)) != base).reshape(len(U), len(radii))
    hit = differs.any(axis=1)
    if not hit.any():
        return INFINITE_DISTANCE
    U = U[hit]
    first = np.argmax(differs[hit], axis=1)
    hi = radii[first]
    lo = np.where(first > 0, radii[np.maximum(first - 1, 0)], 0.0)
    while np.max(hi - lo) > step / 4:
        mid = (lo + hi) / 2
        d_mid = pred(x + mid[:, None] * U) != base
        hi = np.where(d_mid, mid, hi)
        lo = np.where(d_mid, lo, mid)
    return float(np.min(hi))


def strategic_margin_nl(w, dataset: Dataset, budget: float = 2.0) -> float:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.z is None:
        raise ValueError("strategic margin needs target-label side information")
    model = _as_model(w)
    n = model.checked_norm()
    return float(np.min(dataset.y * (model.score(dataset.X) / n + budget * dataset.z)))


def is_strategically_separable(setting: ResponseSetting, dataset: Dataset, model: LinearModel) -> bool:
    """True when ``h`` classifies every exact response correctly."""
    moved = respond_dataset(setting, model, dataset)
    return bool(np.all(sign_pred(model.score(moved)) == dataset.y))


def signed_strategic_margins(w, dataset: Dataset, setting: ResponseSetting) -> np.ndarray:
    """Per-sample ``y (f(x)/||w|| + budget * z)`` for GP-family settings."""
    model = _as_model(w)
    n = model.checked_norm()
    z = target_labels(setting, dataset)
    return dataset.y * (model.score(dataset.X) / n + setting.budget * z)
