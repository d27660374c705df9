"""User response mappings: how users move their features given a deployed classifier.

Every setting is a special case of ``argmax_x' u(x', z) - weight * c(x, x')``.
The GP family (SC, NL, GP, ADV) and NOISE have closed forms under
L2-norm costs; PPE users solve a small regularized fit against their own
history.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BilinearModel,
    CostKind,
    CostSpec,
    Dataset,
    Example,
    History,
    LinearModel,
    NoiseVector,
    TargetLabel,
    sigmoid,
    sign_pred,
    solve_spd,
)


class Kind(enum.Enum):
    SC = "SC"
    NL = "NL"
    GP = "GP"
    ADV = "ADV"
    NOISE = "NOISE"
    PPE = "PPE"
    NONE = "NONE"  # non-strategic reference: users never move


GP_FAMILY = frozenset({Kind.SC, Kind.NL, Kind.GP, Kind.ADV})


class UserLoss(enum.Enum):
    SQUARED = "squared"
    HINGE = "hinge"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ResponseSetting:
    kind: Kind
    cost: CostSpec = field(default_factory=CostSpec)
    smoothing_temperature: float = 1.0
    ppe_user_loss: UserLoss = UserLoss.SQUARED
    ppe_inner_steps: int = 100
    ppe_inner_lr: float = 0.05
    crossing_eta: float = 1e-9

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", Kind(self.kind.upper()))
        if isinstance(self.ppe_user_loss, str):
            object.__setattr__(self, "ppe_user_loss", UserLoss(self.ppe_user_loss.lower()))
        if self.smoothing_temperature <= 0:
            raise ValueError("smoothing temperature must be positive")
        if self.crossing_eta < 0:
            raise ValueError("crossing_eta must be non-negative")
        if self.kind is Kind.PPE and self.cost.kind is not CostKind.L2_NORM_SQUARED:
            raise ValueError("PPE responses are defined for squared L2 costs")
        if self.kind in GP_FAMILY | {Kind.NOISE} and self.cost.kind is not CostKind.L2_NORM:
            raise ValueError(f"{self.kind.value} responses are defined for L2-norm costs")

    @classmethod
    def ppe(cls, user_loss=UserLoss.SQUARED, **kw) -> "ResponseSetting":
        return cls(Kind.PPE, CostSpec(CostKind.L2_NORM_SQUARED, 0.5), ppe_user_loss=user_loss, **kw)

    @property
    def budget(self) -> float:
        return self.cost.budget()


# ---------------------------------------------------------------------------
# target labels


def target_label(setting: ResponseSetting, example: Example) -> int:
    kind = setting.kind
    if kind is Kind.SC:
        return 1
    if kind is Kind.ADV:
        return -example.y
    if kind in (Kind.NL, Kind.GP):
        if not isinstance(example.z, TargetLabel):
            raise ValueError(f"{kind.value} needs TargetLabel side information, got {example.z!r}")
        return example.z.value
    raise ValueError(f"no target label for setting {kind.value}")


def target_labels(setting: ResponseSetting, dataset: Dataset) -> np.ndarray:
    """Vectorized :func:`target_label` over a dataset."""
    kind = setting.kind
    if kind is Kind.SC:
        return np.ones(len(dataset))
    if kind is Kind.ADV:
        return -dataset.y
    if kind in (Kind.NL, Kind.GP):
        if dataset.z is None:
            raise ValueError(f"{kind.value} needs target-label side information")
        return dataset.z
    raise ValueError(f"no target labels for setting {kind.value}")


# ---------------------------------------------------------------------------
# GP family closed form


def _params(model):
    if isinstance(model, LinearModel):
        return model.w, model.b
    return np.asarray(model, dtype=float), 0.0


def gp_response(X, w, b, z, budget=2.0, eta=1e-9):
    """Broadcasting kernel behind :func:`respond_gp_exact`.

    ``X`` is (..., d), ``w`` broadcasts against it, ``b`` and ``z`` against
    the leading dims. Returns (moved X, cost incurred).
    """
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    f = np.sum(X * w, axis=-1) + b
    n = np.linalg.norm(w, axis=-1)
    if np.any(n == 0):
        raise ValueError("response requires ||w|| > 0")
    dist = np.abs(f) / n
    move = (sign_pred(f) != z) & (dist < budget)
    # project onto the hyperplane, then step eta past it toward the target
    step = (-f / n**2 + eta * z / n) * move
    X_new = X + step[..., None] * w
    cost = np.where(move, dist + eta, 0.0)
    return X_new, cost


def respond_gp_exact(w, x, z, *, budget: float = 2.0, eta: float = 1e-9):
    """Best response of a user who wants prediction ``z`` under an L2 cost.

    ``w`` may be a :class:`LinearModel` (intercept honoured) or a weight
    vector. ``x`` may be a single point or a batch of rows.
    """
    w, b = _params(w)
    X_new, _ = gp_response(x, w, b, z, budget, eta)
    return X_new


def gp_response_cost(w, x, z, *, budget: float = 2.0, eta: float = 1e-9):
    w, b = _params(w)
    return gp_response(x, w, b, z, budget, eta)[1]


def respond_gp_smoothed(w, x, z, temperature: float = 1.0, *, budget: float = 2.0):
    """Differentiable surrogate of :func:`respond_gp_exact`.

    The hard move/no-move switch becomes a logistic gate on
    ``cond = (-s) * (s + budget)`` with ``s`` the signed distance toward the
    target. The move itself is the cost-minimal projection onto the boundary.
    """
    w, b = _params(w)
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(w, axis=-1)
    if np.any(n == 0):
        raise ValueError("response requires ||w|| > 0")
    f = np.sum(x * w, axis=-1) + b
    s = z * f / n
    gate = sigmoid(temperature * (-s) * (s + budget))
    return x - (f / n**2 * gate)[..., None] * w


def respond_noise(theta, x, z, *, budget: float = 2.0, eta: float = 1e-9):
    """SC response against the user's perceived model ``theta + z``."""
    w, b = _params(theta)
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.shape[-1] != w.shape[-1] or x.shape[-1] != w.shape[-1]:
        raise ValueError("noise vector, features and model must share dimension")
    X_new, _ = gp_response(x, w + z, b, 1.0, budget, eta)
    return X_new


# ---------------------------------------------------------------------------
# PPE


def respond_ppe_squared(W, x, z: History):
    """Exact minimizer of ``||A W x' - Y||^2 + (n/2) ||x' - x||^2``."""
    W = W.W if isinstance(W, BilinearModel) else np.atleast_2d(np.asarray(W, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1)
    if z.items.shape[1] != W.shape[0] or x.size != W.shape[1]:
        raise ValueError(
            f"dimension mismatch: W {W.shape}, items {z.items.shape}, x {x.shape}"
        )
    n = len(z)
    B = z.items @ W
    M = 2.0 * B.T @ B + n * np.eye(W.shape[1])
    return solve_spd(M, 2.0 * B.T @ z.labels + n * x)


def ppe_squared_batch(W, X, A, Y):
    """Batched squared-loss responses.

    ``X`` (U, d) users, ``A`` (U, n, l) history items, ``Y`` (U, n) labels.
    """
    n = A.shape[1]
    if n == 0:
        return np.array(X, dtype=float, copy=True)
    B = A @ W  # (U, n, d)
    Bt = np.swapaxes(B, 1, 2)
    M = 2.0 * Bt @ B + n * np.eye(W.shape[1])
    rhs = 2.0 * np.einsum("und,un->ud", B, Y) + n * X
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def _user_loss_grad(user_loss: UserLoss, B, Y, Xp):
    # gradient of (1/n) sum_j L(x', a_j, y_j; W) wrt x'
    margin = Y * np.einsum("und,ud->un", B, Xp)
    if user_loss is UserLoss.HINGE:
        coef = -(margin < 1.0).astype(float) * Y
    elif user_loss is UserLoss.LOGISTIC:
        coef = -Y * sigmoid(-margin)  # d/dm log(1 + e^-m) = -sigmoid(-m)
    else:
        coef = 2.0 * (margin - 1.0) * Y  # (b.x' - y)^2 with y^2 = 1
    return np.einsum("un,und->ud", coef, B) / B.shape[1]


def ppe_iterative_batch(W, X, A, Y, user_loss: UserLoss, steps: int = 100, lr: float = 0.05):
    """Gradient descent on ``(1/n) sum L + 1/2 ||x' - x||^2`` started at ``x``."""
    X = np.asarray(X, dtype=float)
    if A.shape[1] == 0:
        return X.copy()
    B = A @ W
    Xp = X.copy()
    for _ in range(steps):
        Xp = Xp - lr * (_user_loss_grad(user_loss, B, Y, Xp) + (Xp - X))
    return Xp


def respond_ppe_iterative(W, x, z: History, user_loss=UserLoss.HINGE, steps: int = 100, lr: float = 0.05):
    W = W.W if isinstance(W, BilinearModel) else np.atleast_2d(np.asarray(W, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1)
    if z.items.shape[1] != W.shape[0] or x.size != W.shape[1]:
        raise ValueError(
            f"dimension mismatch: W {W.shape}, items {z.items.shape}, x {x.shape}"
        )
    out = ppe_iterative_batch(W, x[None], z.items[None], z.labels[None], UserLoss(user_loss), steps, lr)
    return out[0]


def ppe_response_batch(setting: ResponseSetting, W, X, A, Y):
    if setting.ppe_user_loss is UserLoss.SQUARED:
        return ppe_squared_batch(W, X, A, Y)
    return ppe_iterative_batch(
        W, X, A, Y, setting.ppe_user_loss, setting.ppe_inner_steps, setting.ppe_inner_lr
    )


# ---------------------------------------------------------------------------
# dispatch


def respond(setting: ResponseSetting, model, example: Example) -> np.ndarray:
    kind = setting.kind
    if kind is Kind.NONE:
        return example.x.copy()
    if kind is Kind.PPE:
        if not isinstance(model, BilinearModel):
            raise TypeError("PPE responses need a BilinearModel")
        if not isinstance(example.z, History):
            raise ValueError("PPE responses need History side information")
        if setting.ppe_user_loss is UserLoss.SQUARED:
            return respond_ppe_squared(model, example.x, example.z)
        return respond_ppe_iterative(
            model, example.x, example.z, setting.ppe_user_loss,
            setting.ppe_inner_steps, setting.ppe_inner_lr,
        )
    if not isinstance(model, LinearModel):
        raise TypeError(f"{kind.value} responses need a LinearModel")
    if kind is Kind.NOISE:
        if not isinstance(example.z, NoiseVector):
            raise ValueError("NOISE responses need NoiseVector side information")
        return respond_noise(model, example.x, example.z.values,
                             budget=setting.budget, eta=setting.crossing_eta)
    z = target_label(setting, example)
    return respond_gp_exact(model, example.x, z, budget=setting.budget, eta=setting.crossing_eta)


def respond_dataset(setting: ResponseSetting, model: LinearModel, dataset: Dataset) -> np.ndarray:
    """Exact responses for every row of a linear-setting dataset."""
    kind = setting.kind
    if kind is Kind.NONE:
        return dataset.X.copy()
    if kind is Kind.NOISE:
        if dataset.noise is None:
            raise ValueError("NOISE responses need noise vectors")
        X_new, _ = gp_response(dataset.X, model.w + dataset.noise, model.b, 1.0,
                               setting.budget, setting.crossing_eta)
        return X_new
    if kind is Kind.PPE:
        raise ValueError("use the PPE batch helpers for bilinear settings")
    z = target_labels(setting, dataset)
    X_new, _ = gp_response(dataset.X, model.w, model.b, z, setting.budget, setting.crossing_eta)
    return X_new


# ---------------------------------------------------------------------------
# brute-force oracle


def _perceived_utility(setting: ResponseSetting, model, example: Example, P: np.ndarray):
    kind = setting.kind
    if kind is Kind.NONE:
        return np.zeros(len(P))
    if kind is Kind.PPE:
        z = example.z
        scores = P @ model.W.T @ z.items.T  # (points, n)
        return np.mean(np.where(scores >= 0, 1.0, -1.0) == z.labels, axis=1)
    if kind is Kind.NOISE:
        w = model.w + example.z.values
        return (P @ w + model.b >= 0).astype(float)
    target = target_label(setting, example)
    pred = np.where(P @ model.w + model.b >= 0, 1, -1)
    return (pred == target).astype(float)


def _weighted(weight: float, base):
    # zero movement costs nothing, even under an infinite weight
    out = np.zeros_like(base)
    np.multiply(weight, base, out=out, where=base > 0)
    return out


def respond_bruteforce_oracle(setting: ResponseSetting, model, example: Example,
                              grid_bounds, grid_step: float) -> np.ndarray:
    """Exhaustive argmax of perceived utility minus weighted cost over a grid.

    ``grid_bounds`` is ``(low, high)`` with scalars or per-coordinate arrays.
    The unmodified point is always a candidate. Ties go to the lowest cost,
    then to the lexicographically smallest point.
    """
    x = example.x
    d = x.size
    if d > 3:
        raise ValueError(f"brute-force oracle supports d <= 3, got d={d}")
    low, high = (np.broadcast_to(np.asarray(v, dtype=float), (d,)) for v in grid_bounds)
    axes = [np.arange(lo, hi + grid_step / 2, grid_step) for lo, hi in zip(low, high)]
    P = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    P = np.vstack([x[None], P])

    dist = np.linalg.norm(P - x, axis=1)
    base = dist**2 if setting.cost.kind is CostKind.L2_NORM_SQUARED else dist
    cost = _weighted(setting.cost.weight, base)
    objective = _perceived_utility(setting, model, example, P) - cost

    tol = 1e-12
    cand = np.flatnonzero(objective >= objective.max() - tol)
    cheapest = cand[cost[cand] <= cost[cand].min() + tol]
    order = np.lexsort(P[cheapest].T[::-1])
    return P[cheapest[order[0]]].copy()


def user_objective(setting: ResponseSetting, model, example: Example, x_new) -> float:
    """Perceived utility minus weighted cost of reporting ``x_new``."""
    P = np.atleast_2d(np.asarray(x_new, dtype=float))
    base = setting.cost.cost(example.x, P)
    cost = _weighted(setting.cost.weight, base)
    return float((_perceived_utility(setting, model, example, P) - cost)[0])


__all__ = [
    "Kind", "UserLoss", "ResponseSetting", "GP_FAMILY",
    "target_label", "target_labels", "gp_response", "respond_gp_exact", "gp_response_cost",
    "respond_gp_smoothed", "respond_noise", "respond_ppe_squared", "respond_ppe_iterative",
    "ppe_squared_batch", "ppe_iterative_batch", "ppe_response_batch",
    "respond", "respond_dataset", "respond_bruteforce_oracle", "user_objective",
]
