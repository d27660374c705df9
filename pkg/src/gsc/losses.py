"""Loss surfaces and their analytic gradients.

Each surrogate has a batched kernel operating on stacked problems
(``K`` models, ``B`` samples each) used by the trainers, and a per-example
wrapper returning :class:`LossValueAndGrad`.

Kernel shapes: ``W`` (K, d), ``b`` (K,), ``X`` (K, B, d), ``y``/``z`` (K, B).
They return per-sample values (K, B) and gradients (K, B, d) / (K, B).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import BilinearModel, Example, History, LinearModel, sigmoid, sign_pred
from .response import (
    GP_FAMILY,
    Kind,
    ResponseSetting,
    gp_response,
    respond,
    target_label,
)

DEFAULT_LAMBDA_D = 0.01


class StrategicLoss(enum.Enum):
    STANDARD_HINGE = "hinge"
    NAIVE_HINGE = "naive"
    S_HINGE = "s-hinge"
    GS_HINGE = "gs-hinge"
    PPE_GS_HINGE = "ppe-gs-hinge"
    STRATEGIC_ZERO_ONE = "zero-one"


@dataclass
class LossValueAndGrad:
    value: float
    grad: np.ndarray
    grad_b: float = 0.0

    @property
    def grad_w(self) -> np.ndarray:
        return self.grad

    @property
    def grad_W(self) -> np.ndarray:
        return self.grad


# ---------------------------------------------------------------------------
# batched kernels (linear models)


def _scores(W, b, X):
    return np.einsum("kbd,kd->kb", X, W) + b[:, None]


def standard_hinge_kernel(W, b, X, y):
    f = _scores(W, b, X)
    val = np.maximum(0.0, 1.0 - y * f)
    act = (val > 0) * y
    return val, -act[..., None] * X, -act


def s_hinge_kernel(W, b, X, y, z, budget=2.0):
    f = _scores(W, b, X)
    n = np.linalg.norm(W, axis=1)
    val = np.maximum(0.0, 1.0 - y * f - budget * z * y * n[:, None])
    act = (val > 0) * y
    unit = np.divide(W, n[:, None], out=np.zeros_like(W), where=n[:, None] > 0)
    grad = -act[..., None] * (X + budget * z[..., None] * unit[:, None, :])
    return val, grad, -act


def naive_hinge_kernel(W, b, X, y, z, temperature=1.0, budget=2.0):
    """Standard hinge on the smoothed response, differentiated through it.

    With gate ``g`` the smoothed response satisfies ``f(Δ) = f(x) (1 - g)``.
    """
    f = _scores(W, b, X)
    n = np.linalg.norm(W, axis=1)
    if np.any(n == 0):
        raise ValueError("naive hinge requires ||w|| > 0")
    nn = n[:, None]
    s = z * f / nn
    g = sigmoid(temperature * (-s) * (s + budget))
    q = y * f * (1.0 - g)
    val = np.maximum(0.0, 1.0 - q)
    act = val > 0
    # ds/dw = z (x/n - f w/n^3), ds/db = z/n
    ds_w = z[..., None] * (X / nn[..., None] - (f / nn**3)[..., None] * W[:, None, :])
    ds_b = z / nn
    dg_ds = temperature * g * (1.0 - g) * (-2.0 * s - budget)
    dq_w = y[..., None] * ((1.0 - g)[..., None] * X - (f * dg_ds)[..., None] * ds_w)
    dq_b = y * ((1.0 - g) - f * dg_ds * ds_b)
    act = act.astype(float)
    return val, -act[..., None] * dq_w, -act * dq_b


# ---------------------------------------------------------------------------
# batched kernel (bilinear PPE gs-hinge)


def ppe_gs_hinge_kernel(W, X, A, Y, a, y, lambda_d=DEFAULT_LAMBDA_D, temperature=1.0, *, with_grad=True):
    """gs-hinge for bilinear models under squared-loss user responses.

    ``W`` (K, l, d); ``X`` (B, d) users; ``A`` (B, n, l) and ``Y`` (B, n)
    histories; ``a`` (B, l) target items; ``y`` (B,) labels. Returns
    values (K, B) and gradients (K, B, l, d), or ``None`` for the gradients
    when ``with_grad`` is false.

    Users respond with ``Δ = M^-1 (2 B^T Y + n x)``, ``B = A W``,
    ``M = 2 B^T B + n I = 2 W^T G W + n I`` with ``G = A^T A``. With
    ``v = W^T a`` the post-response score is ``s = v.Δ``; its gradient in
    ``x`` is ``g = n M^-1 v``. The penalized nearest boundary point gives
    ``d = ||g|| |s| / (||g||^2 + lambda_d)`` and the sign of ``s`` is smoothed
    as ``tanh(T s / 2) = 2 sigmoid(T s) - 1``.
    """
    K, l, d = W.shape
    n = A.shape[1]
    v = a[None] @ W  # (K, B, d)
    if n == 0:
        Delta, g = np.broadcast_to(X, v.shape), v
    else:
        G = np.swapaxes(A, 1, 2) @ A  # (B, l, l); history-only, shared by all K
        AtY = np.einsum("bnl,bn->bl", A, Y)
        GW = G[None] @ W[:, None]  # (K, B, l, d)
        M = 2.0 * (np.swapaxes(W, 1, 2)[:, None] @ GW) + n * np.eye(d)
        rhs = 2.0 * (AtY[None] @ W) + n * X
        Minv = np.linalg.inv(M)  # M >= n I, so the inverse is well conditioned
        Delta, g = (Minv @ rhs[..., None])[..., 0], n * (Minv @ v[..., None])[..., 0]
    s = np.sum(v * Delta, axis=-1)
    ng = np.linalg.norm(g, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    den = ng**2 + lambda_d
    psi = ng / den
    t = np.tanh(temperature * s / 2.0)
    phi = t * np.abs(s)
    q = y * phi * psi * nv
    val = np.maximum(0.0, 1.0 - q)
    if not with_grad:
        return val, None
    act = val > 0

    # reverse-mode through q = y phi(s) psi(g) ||v||
    dphi = 0.5 * temperature * (1.0 - t**2) * np.abs(s) + np.abs(t)
    s_bar = y * dphi * psi * nv
    safe_ng = np.where(ng > 0, ng, 1.0)
    dpsi = (1.0 / (safe_ng * den) - 2.0 * ng / den**2) * (ng > 0)
    g_bar = (y * phi * nv * dpsi)[..., None] * g
    unit_v = np.divide(v, nv[..., None], out=np.zeros_like(v), where=nv[..., None] > 0)
    v_bar = (y * phi * psi)[..., None] * unit_v + s_bar[..., None] * Delta
    if n == 0:
        v_bar = v_bar + g_bar
        W_bar = a[None, :, :, None] * v_bar[:, :, None, :]
    else:
        p = (Minv @ g_bar[..., None])[..., 0]
        v_bar = v_bar + n * p
        r_bar = (s_bar / n)[..., None] * g  # M^-1 Delta_bar with Delta_bar = s_bar v
        M_bar = -p[..., :, None] * g[..., None, :] - r_bar[..., :, None] * Delta[..., None, :]
        S = M_bar + np.swapaxes(M_bar, -1, -2)
        W_bar = (2.0 * AtY[None, :, :, None] * r_bar[:, :, None, :]
                 + 2.0 * (GW @ S)
                 + a[None, :, :, None] * v_bar[:, :, None, :])
    return val, -act[..., None, None].astype(float) * W_bar


def bilinear_hinge_kernel(W, X, a, y):
    """Standard hinge ``max(0, 1 - y a^T W x)`` for stacked bilinear models."""
    f = np.einsum("bl,kld,bd->kb", a, W, X)
    val = np.maximum(0.0, 1.0 - y * f)
    act = (val > 0) * y
    return val, -act[..., None, None] * np.einsum("bl,bd->bld", a, X)[None]


# ---------------------------------------------------------------------------
# per-example API


def _lin(w):
    return (w.w, w.b) if isinstance(w, LinearModel) else (np.asarray(w, dtype=float).reshape(-1), 0.0)


def _one(kernel, w, x, *args, **kw) -> LossValueAndGrad:
    W, b = _lin(w)
    x = np.asarray(x, dtype=float).reshape(1, 1, -1)
    arrs = [np.full((1, 1), float(a)) for a in args]
    val, gw, gb = kernel(W[None], np.array([b]), x, *arrs, **kw)
    return LossValueAndGrad(float(val[0, 0]), gw[0, 0].copy(), float(gb[0, 0]))


def hinge_standard(w, x, y) -> LossValueAndGrad:
    return _one(standard_hinge_kernel, w, x, y)


def s_hinge_gp(w, x, z, y, budget: float = 2.0) -> LossValueAndGrad:
    """``max(0, 1 - y f(x) - budget z y ||w||)``."""
    return _one(s_hinge_kernel, w, x, y, z, budget=budget)


def hinge_naive(setting: ResponseSetting, w, example: Example, temperature: Optional[float] = None) -> LossValueAndGrad:
    if setting.kind not in GP_FAMILY:
        raise ValueError("naive hinge is defined for GP-family settings")
    T = setting.smoothing_temperature if temperature is None else temperature
    z = target_label(setting, example)
    return _one(naive_hinge_kernel, w, example.x, example.y, z, temperature=T, budget=setting.budget)


def s_hinge_alternate_nl(w, x, z, y, *, budget: float = 2.0, eta: float = 1e-9) -> float:
    """s-hinge written through the exact response and the cost actually paid.

    ``max(0, 1 - y f(Δ) - (budget - cost) y z ||w||)``.
    """
    W, b = _lin(w)
    n = float(np.linalg.norm(W))
    if n == 0:
        raise ValueError("requires ||w|| > 0")
    x = np.asarray(x, dtype=float).reshape(-1)
    moved, cost = gp_response(x, W, b, z, budget, eta)
    f = float(moved @ W + b)
    return max(0.0, 1.0 - y * f - (budget - float(cost)) * y * z * n)


def strategic_zero_one(setting: ResponseSetting, model, example: Example, item=None) -> int:
    """1 when the prediction on the exact response differs from ``y``."""
    moved = respond(setting, model, example)
    if isinstance(model, BilinearModel):
        pred = sign_pred(model.score(moved, item))
    else:
        pred = sign_pred(model.score(moved))
    return int(pred != example.y)


def gs_hinge_generic(setting: ResponseSetting, model: LinearModel, example: Example,
                     distance_fn: Callable[[ResponseSetting, LinearModel, Example], float]) -> float:
    """``max(0, 1 - y sign(f(Δ)) d_Δ ||w||)`` for any strategic distance."""
    dist = distance_fn(setting, model, example)
    if not math.isfinite(dist):
        raise ValueError("strategic distance is infinite for this example")
    moved = respond(setting, model, example)
    sgn = sign_pred(model.score(moved))
    return max(0.0, 1.0 - example.y * sgn * dist * model.checked_norm())


def gp_distance(setting: ResponseSetting, model: LinearModel, example: Example) -> float:
    """Closed-form strategic distance as a ``distance_fn`` for GP settings."""
    if setting.kind is Kind.NONE:
        return abs(float(model.score(example.x))) / model.checked_norm()
    z = target_label(setting, example)
    return abs(float(model.score(example.x)) / model.checked_norm() + setting.budget * z)


def gs_hinge_ppe(W, x, z: History, a, y, lambda_d: float = DEFAULT_LAMBDA_D,
                 temperature: float = 1.0) -> LossValueAndGrad:
    W = W.W if isinstance(W, BilinearModel) else np.atleast_2d(np.asarray(W, dtype=float))
    x = np.asarray(x, dtype=float).reshape(1, -1)
    a = np.asarray(a, dtype=float).reshape(1, -1)
    if a.shape[1] != W.shape[0] or x.shape[1] != W.shape[1] or z.items.shape[1] != W.shape[0]:
        raise ValueError("dimension mismatch between W, item, user and history")
    val, grad = ppe_gs_hinge_kernel(W[None], x, z.items[None], z.labels[None], a,
                                    np.array([float(y)]), lambda_d, temperature)
    return LossValueAndGrad(float(val[0, 0]), grad[0, 0].copy())


def ppe_linear_response(W, z: History):
    """``(alpha, beta)`` with squared-loss responses ``Δ = alpha x + beta``."""
    W = W.W if isinstance(W, BilinearModel) else np.atleast_2d(np.asarray(W, dtype=float))
    n = len(z)
    B = z.items @ W
    M = 2.0 * B.T @ B + n * np.eye(W.shape[1])
    alpha = n * np.linalg.inv(M)
    beta = np.linalg.solve(M, 2.0 * B.T @ z.labels)
    return alpha, beta


def ppe_strategic_distance(W, x, z: History, a, lambda_d: float = DEFAULT_LAMBDA_D) -> float:
    """Distance to the penalized nearest point whose response lies on the item's boundary."""
    W = W.W if isinstance(W, BilinearModel) else np.atleast_2d(np.asarray(W, dtype=float))
    alpha, beta = ppe_linear_response(W, z)
    v = W.T @ np.asarray(a, dtype=float)
    g = alpha.T @ v
    s = float(v @ (alpha @ np.asarray(x, dtype=float) + beta))
    return float(np.linalg.norm(g) * abs(s) / (g @ g + lambda_d))


__all__ = [
    "StrategicLoss", "LossValueAndGrad", "DEFAULT_LAMBDA_D",
    "standard_hinge_kernel", "s_hinge_kernel", "naive_hinge_kernel",
    "ppe_gs_hinge_kernel", "bilinear_hinge_kernel",
    "hinge_standard", "s_hinge_gp", "hinge_naive", "s_hinge_alternate_nl",
    "strategic_zero_one", "gs_hinge_generic", "gp_distance", "gs_hinge_ppe",
    "ppe_linear_response", "ppe_strategic_distance",
]
