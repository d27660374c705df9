"""Training: soft and hard strategic SVMs, baselines, cross-validation and evaluation.

Trainers run many independent problems at once (seeds, folds, lambda values)
by stacking them along a leading axis. Each problem owns its random stream,
so its result does not depend on what else shares the stack.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BilinearModel, Dataset, LinearModel, PPEDataset, make_rng, sign_pred
from .losses import (
    DEFAULT_LAMBDA_D,
    StrategicLoss,
    bilinear_hinge_kernel,
    naive_hinge_kernel,
    ppe_gs_hinge_kernel,
    s_hinge_kernel,
    standard_hinge_kernel,
)
from .response import GP_FAMILY, Kind, ResponseSetting, ppe_response_batch, respond_dataset, target_labels

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.01, 0.1, 1.0)
HARD_LAMBDAS = (1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6)


class NumericalFailure(RuntimeError):
    """Raised when a training objective becomes NaN or infinite."""


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.05
    epochs: int = 200
    batch_size: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    schedule: str = "cosine"  # cosine decay to 1% of step_size, or "constant"

    def __post_init__(self):
        if self.step_size <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("step size, epochs and batch size must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class TrainResult:
    model: object
    final_objective: float
    objective_trace: list
    feasible: Optional[bool] = None
    lambda_reg: float = math.nan
    max_violation: float = math.nan
    raw_model: Optional[LinearModel] = None


# ---------------------------------------------------------------------------
# stacked Adam


def _schedules(opt: OptimizerConfig, keys: Sequence[tuple], m: int) -> np.ndarray:
    """Per-problem shuffle orders of shape (K, epochs, m)."""
    out = np.empty((len(keys), opt.epochs, m), dtype=np.int64)
    for k, key in enumerate(keys):
        rng = make_rng(opt.seed, *key, 1)
        out[k] = np.argsort(rng.random((opt.epochs, m)), axis=1)
    return out


def _init_uniform(opt: OptimizerConfig, keys: Sequence[tuple], shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return np.stack([make_rng(opt.seed, *key, 0).uniform(-bound, bound, shape) for key in keys])


def _run_adam(params, batch_grad, full_objective, perms, opt: OptimizerConfig):
    """Mini-batch Adam over stacked parameters; returns (params, traces (K, epochs))."""
    K, epochs, m = perms.shape
    bs = min(opt.batch_size, m)
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    steps_per_epoch = math.ceil(m / bs)
    total = epochs * steps_per_epoch
    trace = np.empty((K, epochs))
    t = 0
    for e in range(epochs):
        for start in range(0, m, bs):
            grads = batch_grad(params, perms[:, e, start:start + bs])
            t += 1
            lr = opt.step_size
            if opt.schedule == "cosine":
                lr = opt.step_size * (0.01 + 0.99 * 0.5 * (1 + math.cos(math.pi * (t - 1) / total)))
            c1 = 1.0 - opt.beta1**t
            c2 = 1.0 - opt.beta2**t
            with np.errstate(over="ignore", invalid="ignore"):
                for p, g, m1, m2 in zip(params, grads, first, second):
                    m1 *= opt.beta1
                    m1 += (1.0 - opt.beta1) * g
                    m2 *= opt.beta2
                    m2 += (1.0 - opt.beta2) * g * g
                    if not (np.all(np.isfinite(m2)) and np.all(np.isfinite(m1))):
                        raise NumericalFailure(f"gradient overflow at epoch {e}")
                    p -= lr * (m1 / c1) / (np.sqrt(m2 / c2) + opt.eps)
        trace[:, e] = full_objective(params)
        if not np.all(np.isfinite(trace[:, e])):
            bad = np.flatnonzero(~np.isfinite(trace[:, e]))
            raise NumericalFailure(f"objective is not finite at epoch {e} for problems {bad.tolist()}")
    return params, trace


def _linear_kernel(loss: StrategicLoss, temperature: float, budget: float):
    if loss is StrategicLoss.STANDARD_HINGE:
        return lambda W, b, X, y, z: standard_hinge_kernel(W, b, X, y)
    if loss in (StrategicLoss.S_HINGE, StrategicLoss.GS_HINGE):
        return lambda W, b, X, y, z: s_hinge_kernel(W, b, X, y, z, budget)
    if loss is StrategicLoss.NAIVE_HINGE:
        return lambda W, b, X, y, z: naive_hinge_kernel(W, b, X, y, z, temperature, budget)
    raise ValueError(f"{loss.value} is not trainable on linear models")


def fit_linear_batch(loss: StrategicLoss, X, y, z, lambdas, opt: OptimizerConfig, keys: Sequence[tuple], *,
                     fit_intercept: bool = False, temperature: float = 1.0, budget: float = 2.0,
                     init_W=None, init_b=None):
    """Train K stacked linear problems. ``X`` (K, m, d), ``y``/``z`` (K, m), ``lambdas`` (K,).

    Returns ``(W (K, d), b (K,), traces (K, epochs))``.
    """
    X = np.asarray(X, dtype=float)
    K, m, d = X.shape
    y = np.asarray(y, dtype=float)
    z = np.ones_like(y) if z is None else np.asarray(z, dtype=float)
    lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (K,))
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")
    kernel = _linear_kernel(loss, temperature, budget)
    W = _init_uniform(opt, keys, (d,), d) if init_W is None else np.array(init_W, dtype=float)
    b = np.zeros(K) if init_b is None else np.array(init_b, dtype=float)
    perms = _schedules(opt, keys, m)
    rows = np.arange(K)[:, None]

    def batch_grad(params, idx):
        Wc, bc = params
        _, gw, gb = kernel(Wc, bc, X[rows, idx], y[rows, idx], z[rows, idx])
        gW = gw.mean(axis=1) + 2.0 * lam[:, None] * Wc
        gB = gb.mean(axis=1) if fit_intercept else np.zeros_like(bc)
        return gW, gB

    def objective(params):
        Wc, bc = params
        val, _, _ = kernel(Wc, bc, X, y, z)
        return val.mean(axis=1) + lam * np.sum(Wc * Wc, axis=1)

    (W, b), trace = _run_adam([W, b], batch_grad, objective, perms, opt)
    return W, b, trace


def _single_problem(dataset: Dataset, setting: Optional[ResponseSetting], loss: StrategicLoss):
    z = None
    if loss in (StrategicLoss.S_HINGE, StrategicLoss.GS_HINGE, StrategicLoss.NAIVE_HINGE):
        if setting is None:
            if dataset.z is None:
                raise ValueError(f"{loss.value} needs target labels or a response setting")
            z = dataset.z
        else:
            if setting.kind not in GP_FAMILY:
                raise ValueError(f"{loss.value} is defined for GP-family settings")
            z = target_labels(setting, dataset)
    return dataset.X[None], dataset.y[None], None if z is None else np.asarray(z)[None]


def train_soft(loss: StrategicLoss, dataset: Dataset, lambda_reg: float, opt: OptimizerConfig = OptimizerConfig(), *,
               setting: Optional[ResponseSetting] = None, fit_intercept: bool = False,
               temperature: Optional[float] = None, init: Optional[LinearModel] = None) -> TrainResult:
    """Minimize ``mean(loss) + lambda ||w||^2`` with mini-batch Adam."""
    if not lambda_reg > 0:
        raise ValueError("lambda must be positive")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    loss = StrategicLoss(loss)
    X, y, z = _single_problem(dataset, setting, loss)
    T = temperature if temperature is not None else (setting.smoothing_temperature if setting else 1.0)
    budget = setting.budget if setting is not None else 2.0
    W, b, trace = fit_linear_batch(
        loss, X, y, z, [lambda_reg], opt, [(0,)], fit_intercept=fit_intercept, temperature=T, budget=budget,
        init_W=None if init is None else init.w[None], init_b=None if init is None else [init.b],
    )
    return TrainResult(LinearModel(W[0], b[0]), float(trace[0, -1]), trace[0].tolist(), lambda_reg=lambda_reg)


def train_naive(setting: ResponseSetting, dataset: Dataset, lambda_reg: float,
                opt: OptimizerConfig = OptimizerConfig(), temperature: Optional[float] = None, **kw) -> TrainResult:
    return train_soft(StrategicLoss.NAIVE_HINGE, dataset, lambda_reg, opt, setting=setting,
                      temperature=temperature, **kw)


def constraint_slacks(model: LinearModel, dataset: Dataset, setting: Optional[ResponseSetting] = None) -> np.ndarray:
    """Per-sample ``y (f(x) + budget z ||w||)``; hard-margin feasibility needs all >= 1."""
    z = dataset.z if setting is None else target_labels(setting, dataset)
    budget = 2.0 if setting is None else setting.budget
    return dataset.y * (model.score(dataset.X) + budget * z * model.norm())


def train_hard(dataset: Dataset, tolerance: float = 1e-3, opt: Optional[OptimizerConfig] = None, *,
               setting: Optional[ResponseSetting] = None, fit_intercept: bool = False,
               lambdas: Sequence[float] = HARD_LAMBDAS, iterations: int = 2000) -> TrainResult:
    """Hard strategic SVM by lambda-continuation on the soft objective.

    Each stage runs full-batch Adam (cosine-decayed step) warm-started from the
    previous stage. Stops at the first stage whose solution meets every
    constraint ``y (f(x) + 2 z ||w||) >= 1 - tolerance`` and returns the
    normalized direction; ``raw_model`` keeps the unnormalized solution.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    opt = opt or OptimizerConfig(step_size=0.05)
    stage_opt = replace(opt, epochs=iterations, batch_size=len(dataset), schedule="cosine")
    X, y, z = _single_problem(dataset, setting, StrategicLoss.S_HINGE)
    budget = setting.budget if setting is not None else 2.0
    W = b = None
    trace: list = []
    violation = math.inf
    model = None
    for i, lam in enumerate(lambdas):
        W, b, tr = fit_linear_batch(StrategicLoss.S_HINGE, X, y, z, [lam], stage_opt, [(i,)],
                                    fit_intercept=fit_intercept, budget=budget, init_W=W, init_b=b)
        trace.extend(tr[0].tolist())
        model = LinearModel(W[0], b[0])
        if model.norm() == 0:
            continue
        violation = float(np.max(1.0 - constraint_slacks(model, dataset, setting)))
        if violation <= tolerance:
            n = model.norm()
            return TrainResult(model.scaled(1.0 / n), trace[-1], trace, feasible=True, lambda_reg=lam,
                               max_violation=violation, raw_model=model)
    log.warning("hard strategic SVM infeasible after continuation; max violation %.4g", violation)
    n = model.norm() if model is not None else 0.0
    final = model.scaled(1.0 / n) if n > 0 else model
    return TrainResult(final, trace[-1], trace, feasible=False, lambda_reg=lambdas[-1],
                       max_violation=violation, raw_model=model)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    strategic_accuracy: float
    nonstrategic_accuracy: float
    per_class: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "strategic_accuracy": self.strategic_accuracy,
            "nonstrategic_accuracy": self.nonstrategic_accuracy,
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def _report(y, strat_pred, raw_pred) -> EvalReport:
    per_class = {}
    for c in (-1, 1):
        mask = y == c
        if mask.any():
            per_class[c] = {
                "count": int(mask.sum()),
                "strategic_accuracy": float(np.mean(strat_pred[mask] == c)),
                "nonstrategic_accuracy": float(np.mean(raw_pred[mask] == c)),
            }
    return EvalReport(float(np.mean(strat_pred == y)), float(np.mean(raw_pred == y)), per_class)


def evaluate(setting: ResponseSetting, model, dataset) -> EvalReport:
    """Accuracy on exact responses and on raw features, overall and per class."""
    if isinstance(dataset, PPEDataset):
        return evaluate_ppe(setting, model, dataset)
    moved = respond_dataset(setting, model, dataset)
    return _report(dataset.y, sign_pred(model.score(moved)), sign_pred(model.score(dataset.X)))


def ppe_responses(setting: ResponseSetting, model: BilinearModel, data: PPEDataset, users=None) -> np.ndarray:
    """Responses of the given users (default: all) under the setting's user loss."""
    users = np.arange(data.users.shape[0]) if users is None else np.asarray(users)
    A, Y = data.history_arrays(users)
    return ppe_response_batch(setting, model.W, data.users[users], A, Y)


def evaluate_ppe(setting: ResponseSetting, model: BilinearModel, data: PPEDataset) -> EvalReport:
    users, inverse = np.unique(data.pair_user, return_inverse=True)
    moved = ppe_responses(setting, model, data, users)
    a = data.items[data.pair_item]
    strat = sign_pred(model.score(moved[inverse], a))
    raw = sign_pred(model.score(data.users[data.pair_user], a))
    return _report(data.pair_label, strat, raw)


# ---------------------------------------------------------------------------
# PPE training


def fit_ppe_batch(data: PPEDataset, lambdas, opt: OptimizerConfig, key: tuple, *,
                  loss: StrategicLoss = StrategicLoss.PPE_GS_HINGE, lambda_d: float = DEFAULT_LAMBDA_D,
                  temperature: float = 1.0):
    """Train one bilinear model per lambda on shared pairs. Returns ``(W (K, l, d), traces)``."""
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    K = lam.size
    P = len(data)
    if P == 0:
        raise ValueError("no training pairs")
    l, d = data.item_dim, data.user_dim
    W = _init_uniform(opt, [key] * K, (l, d), d)
    perms = np.repeat(_schedules(opt, [key], P), K, axis=0)
    X_all = data.users[data.pair_user]
    a_all = data.items[data.pair_item]
    A_all, Y_all = data.history_arrays(data.pair_user)
    y_all = data.pair_label

    def kernel(Wc, idx, with_grad=True):
        if loss is StrategicLoss.PPE_GS_HINGE:
            return ppe_gs_hinge_kernel(Wc, X_all[idx], A_all[idx], Y_all[idx], a_all[idx], y_all[idx],
                                       lambda_d, temperature, with_grad=with_grad)
        return bilinear_hinge_kernel(Wc, X_all[idx], a_all[idx], y_all[idx])

    def batch_grad(params, idx):
        (Wc,) = params
        _, g = kernel(Wc, idx[0])
        return [g.mean(axis=1) + 2.0 * lam[:, None, None] * Wc]

    def objective(params):
        (Wc,) = params
        val = np.concatenate([kernel(Wc, chunk, with_grad=False)[0] for chunk in np.array_split(np.arange(P), max(1, P // 512))], axis=1)
        return val.mean(axis=1) + lam * np.sum(Wc * Wc, axis=(1, 2))

    (W,), trace = _run_adam([W], batch_grad, objective, perms, opt)
    return W, trace


def train_ppe(data: PPEDataset, lambda_reg: float, opt: OptimizerConfig = OptimizerConfig(epochs=50, batch_size=24),
              lambda_d: float = DEFAULT_LAMBDA_D, *, temperature: float = 1.0,
              loss: StrategicLoss = StrategicLoss.PPE_GS_HINGE) -> TrainResult:
    """Minimize mean PPE gs-hinge (or the standard bilinear hinge) + ``lambda ||W||_F^2``."""
    if not lambda_reg > 0:
        raise ValueError("lambda must be positive")
    loss = StrategicLoss(loss)
    if loss is StrategicLoss.PPE_GS_HINGE and data.history_size == 0:
        raise ValueError("PPE gs-hinge training needs non-empty user histories")
    W, trace = fit_ppe_batch(data, [lambda_reg], opt, (0,), loss=loss, lambda_d=lambda_d, temperature=temperature)
    return TrainResult(BilinearModel(W[0]), float(trace[0, -1]), trace[0].tolist(), lambda_reg=lambda_reg)


# ---------------------------------------------------------------------------
# cross-validation


def fold_indices(m: int, folds: int, seed: int = 0) -> list:
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if m < folds:
        raise ValueError(f"dataset of size {m} is smaller than the number of folds {folds}")
    perm = make_rng(seed, 0x43).permutation(m)
    return np.array_split(perm, folds)


def pick_lambda(lambdas: Sequence[float], scores) -> float:
    """Highest mean score; ties go to the smaller lambda; all-NaN falls back to the smallest."""
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(lambdas, kind="stable")
    best, best_score = float(lambdas[order[0]]), -math.inf
    for i in order:
        if np.isfinite(scores[i]) and scores[i] > best_score + 1e-12:
            best, best_score = float(lambdas[i]), scores[i]
    return best


def cross_validate(train_fn: Callable[[Dataset, float], object], dataset: Dataset,
                   lambdas: Sequence[float] = DEFAULT_LAMBDAS, folds: int = 3, *,
                   score_fn: Optional[Callable[[object, Dataset], float]] = None,
                   setting: Optional[ResponseSetting] = None, seed: int = 0, return_scores: bool = False):
    """Pick lambda by mean held-out score (default: strategic accuracy under ``setting``)."""
    if score_fn is None:
        if setting is None:
            setting = ResponseSetting(Kind.NONE)
        score_fn = lambda model, held: evaluate(setting, model, held).strategic_accuracy  # noqa: E731
    parts = fold_indices(len(dataset), folds, seed)
    table = np.full((len(lambdas), folds), np.nan)
    for j, held_idx in enumerate(parts):
        train_idx = np.concatenate([p for i, p in enumerate(parts) if i != j])
        train = dataset.subset(train_idx)
        if np.unique(train.y).size < 2:
            warnings.warn(f"fold {j} has a single-class training split; skipped", RuntimeWarning, stacklevel=2)
            continue
        held = dataset.subset(held_idx)
        for i, lam in enumerate(lambdas):
            table[i, j] = score_fn(train_fn(train, lam), held)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(table, axis=1) if np.isfinite(table).any() else np.full(len(lambdas), np.nan)
    best = pick_lambda(list(lambdas), means)
    return (best, means) if return_scores else best


__all__ = [
    "OptimizerConfig", "TrainResult", "EvalReport", "NumericalFailure", "DEFAULT_LAMBDAS", "HARD_LAMBDAS",
    "fit_linear_batch", "train_soft", "train_naive", "train_hard", "constraint_slacks",
    "evaluate", "evaluate_ppe", "ppe_responses", "fit_ppe_batch", "train_ppe",
    "fold_indices", "pick_lambda", "cross_validate",
]
