"""Incentive-alignment estimators and generalization-bound constants."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, LinearModel, sign_pred
from .margins import flipping_cost
from .response import Kind, ResponseSetting


class Subclass(enum.Enum):
    GSC = "GSC"
    GP = "GP"
    SC = "SC"
    ADV = "ADV"
    NL = "NL"


# ---------------------------------------------------------------------------
# incentive alignment


def _check_nl(setting: ResponseSetting, sample: Dataset):
    if setting.kind not in (Kind.NL, Kind.GP):
        raise ValueError("incentive-alignment estimates are defined for the noisy-label setting")
    if len(sample) == 0:
        raise ValueError("empty sample")
    if sample.z is None:
        raise ValueError("sample needs noisy target labels")


def ia_terms(setting: ResponseSetting, model: LinearModel, sample: Dataset) -> dict:
    """Empirical pieces of the incentive-alignment decomposition."""
    _check_nl(setting, sample)
    flip = np.asarray(flipping_cost(model, sample.X)) <= setting.budget
    wrong_raw = sign_pred(model.score(sample.X)) != sample.y
    noisy = sample.z != sample.y
    return {
        "frac_flippable": float(np.mean(flip)),
        "frac_noisy_flippable": float(np.mean(flip & noisy)),
        "frac_error_outside": float(np.mean(wrong_raw & ~flip)),
        "frac_outside": float(np.mean(~flip)),
    }


def ia_lhs_estimate(setting: ResponseSetting, model: LinearModel, sample: Dataset,
                    epsilon: Optional[float] = None) -> float:
    """Strategic error split into the flippable and non-flippable regions.

    With ``epsilon`` the flippable part uses the noise rate,
    ``epsilon * P(x in flip set)``; without it the realized noisy labels are
    counted, which reproduces the mean strategic 0/1 loss on the sample.
    The second part is the joint frequency of raw errors outside the flip set.
    """
    t = ia_terms(setting, model, sample)
    first = epsilon * t["frac_flippable"] if epsilon is not None else t["frac_noisy_flippable"]
    return first + t["frac_error_outside"]


def best_linear_error_2d(X, y, n_angles: int = 720) -> float:
    """Lowest training error of any affine classifier in 2D over an angle grid.

    For each direction the best threshold is found exactly by sorting the
    projections.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] != 2:
        raise ValueError("angle search needs d = 2")
    m = len(y)
    t = np.arange(n_angles) * (2 * np.pi / n_angles)
    proj = np.stack([np.cos(t), np.sin(t)], axis=1) @ X.T  # (angles, m)
    order = np.argsort(proj, axis=1, kind="stable")
    ys = y[order]
    # threshold before position k: points [0, k) predicted -1, [k, m) predicted +1
    pos_below = np.concatenate([np.zeros((n_angles, 1)), np.cumsum(ys > 0, axis=1)], axis=1)
    neg_total = np.sum(y < 0)
    neg_below = np.arange(m + 1)[None, :] - pos_below
    errors = pos_below + (neg_total - neg_below)
    # ties in projection cannot be split; only allow cuts between distinct values
    sp = np.take_along_axis(proj, order, axis=1)
    valid = np.ones((n_angles, m + 1), dtype=bool)
    valid[:, 1:m] = sp[:, 1:] > sp[:, :-1]
    return float(np.min(np.where(valid, errors, np.inf)) / m)


@dataclass
class IACheck:
    holds: bool
    slack: float
    lhs: float
    baseline_error: float
    method: str = "min(trained non-strategic models, 2D angle grid); approximates the best non-strategic error"


def ia_check_system(setting: ResponseSetting, model: LinearModel, sample: Dataset,
                    baseline_models: Sequence[LinearModel] = (), *, epsilon: Optional[float] = None,
                    angle_grid: bool = True) -> IACheck:
    """Is strategic behaviour under ``model`` better for the system than any non-strategic classifier?

    The non-strategic optimum is approximated by the best raw error among
    ``baseline_models`` and, in 2D, an exhaustive angle/threshold search.
    """
    lhs = ia_lhs_estimate(setting, model, sample, epsilon)
    errors = [float(np.mean(sign_pred(h.score(sample.X)) != sample.y)) for h in baseline_models]
    if angle_grid and sample.dim == 2:
        errors.append(best_linear_error_2d(sample.X, sample.y))
    if not errors:
        raise ValueError("no baseline available to approximate the non-strategic optimum")
    base = min(errors)
    return IACheck(lhs <= base, base - lhs, lhs, base)


def ia_check_users(setting: ResponseSetting, model: LinearModel, sample: Dataset, epsilon: float) -> bool:
    """Do users do better trusting ``h`` than their own labels outside the flip set?"""
    t = ia_terms(setting, model, sample)
    if t["frac_outside"] == 0:
        return True
    return t["frac_error_outside"] / t["frac_outside"] <= epsilon


# ---------------------------------------------------------------------------
# generalization bound


def bound_rho(subclass, r: float, epsilon: Optional[float] = None) -> float:
    """Effective radius entering the complexity term of the bound."""
    subclass = Subclass(subclass.upper() if isinstance(subclass, str) else subclass)
    if r < 2:
        warnings.warn("radius r < 2: the subclass ordering assumes r >= 2", RuntimeWarning, stacklevel=2)
    if subclass is Subclass.GSC:
        return 2.0 * r
    if subclass is Subclass.NL:
        if epsilon is None:
            raise ValueError("NL needs the noise rate epsilon")
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        return r - 2.0 + 4.0 * epsilon
    return r + 2.0


def bound_value(subclass, empirical_loss: float, w_norm: float, r: float, m: int, delta: float,
                epsilon: Optional[float] = None) -> float:
    """``L + C r ||w|| / sqrt(m) + (1 + 2 rho ||w||) sqrt(2 ln(max(e, 4 ||w|| / delta)) / m)``.

    ``C = 8`` for the general class and 4 for the named subclasses.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if w_norm < 0 or r < 0:
        raise ValueError("norm and radius must be non-negative")
    subclass = Subclass(subclass.upper() if isinstance(subclass, str) else subclass)
    rho = bound_rho(subclass, r, epsilon)
    c = 8.0 if subclass is Subclass.GSC else 4.0
    log_arg = max(math.e, 4.0 * w_norm / delta)
    return empirical_loss + c * r * w_norm / math.sqrt(m) + (1.0 + 2.0 * rho * w_norm) * math.sqrt(2.0 * math.log(log_arg) / m)


def rho_chain_holds(r: float, epsilon: float, tol: float = 1e-12) -> bool:
    """Ordering of effective radii across subclasses (for r >= 2)."""
    nl = bound_rho("NL", r, epsilon)
    gp = bound_rho("GP", r)
    sc = bound_rho("SC", r)
    adv = bound_rho("ADV", r)
    gsc = bound_rho("GSC", r)
    side = nl <= r + tol if epsilon <= 0.5 else r <= nl + tol
    return side and nl <= gp + tol and gp == sc == adv and gp <= gsc + tol


__all__ = [
    "Subclass", "ia_terms", "ia_lhs_estimate", "best_linear_error_2d", "IACheck",
    "ia_check_system", "ia_check_users", "bound_rho", "bound_value", "rho_chain_holds",
]
