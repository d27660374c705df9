"""Experiment drivers: generalization curves, the noise-rate sweep and PPE.

Each driver returns plain rows (lists of dicts) that the CLI writes as CSV.
All randomness derives from a base seed through keyed streams, so a rerun
with the same configuration reproduces every number.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .analysis import best_linear_error_2d, ia_check_users, ia_lhs_estimate
from .core import BilinearModel, LinearModel, PPEDataset, make_rng, sign_pred
from .datagen import ENV_SETTING, GENERALIZATION_ENVS, gen_generalization_env, gen_varying_eps, split_users
from .losses import StrategicLoss
from .response import Kind, ResponseSetting, UserLoss, gp_response, target_labels
from .solvers import DEFAULT_LAMBDAS, OptimizerConfig, evaluate_ppe, fit_linear_batch, fit_ppe_batch, pick_lambda

log = logging.getLogger(__name__)

FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))
EPSILON_GRID = tuple(round(0.05 * i, 2) for i in range(11))
HISTORY_SIZES = (0, 4, 8, 12, 16, 20, 24)
GEN_METHODS = ("s-hinge", "naive", "hinge-strategic", "non-strategic")


@dataclass
class GeneralizationConfig:
    env: str = "SC"
    seed: int = 0
    n_seeds: int = 30
    fractions: Sequence[float] = FRACTIONS
    lambdas: Sequence[float] = DEFAULT_LAMBDAS
    folds: int = 3
    epochs: int = 200
    batch_size: int = 5
    step_size: float = 0.05
    temperature: float = 1.0
    fit_intercept: bool = True
    n_train_per_cluster: int = 25
    n_test_per_cluster: int = 1250


@dataclass
class EpsilonSweepConfig:
    seed: int = 0
    n_seeds: int = 10
    epsilons: Sequence[float] = EPSILON_GRID
    lambdas: Sequence[float] = DEFAULT_LAMBDAS
    folds: int = 3
    epochs: int = 200
    batch_size: int = 16
    step_size: float = 0.05
    fit_intercept: bool = True
    n_train_per_cluster: int = 50
    n_test_per_cluster: int = 1250


@dataclass
class PPEConfig:
    seed: int = 0
    history_sizes: Sequence[int] = HISTORY_SIZES
    user_losses: Sequence[str] = ("squared", "hinge", "logistic")
    lambdas: Sequence[float] = DEFAULT_LAMBDAS
    folds: int = 3
    epochs: int = 50
    batch_size: int = 24
    step_size: float = 0.05
    lambda_d: float = 0.01
    temperature: float = 1.0
    inner_steps: int = 100
    inner_lr: float = 0.05
    test_fraction: float = 0.3
    synthetic: bool = True
    data_path: str = ""
    rating_threshold: float = float("nan")
    n_users: int = 290
    n_items: int = 300
    user_dim: int = 10
    item_dim: int = 3
    preference_scale: float = 1.5
    label_noise: float = 0.0


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ---------------------------------------------------------------------------
# shared helpers


def _strategic_predictions(setting: ResponseSetting, W, b, X, y, z):
    """Predictions on exact responses for stacked models. ``W`` (K, d); ``X`` (K, m, d)."""
    if setting.kind is Kind.NONE:
        moved = X
    else:
        moved, _ = gp_response(X, W[:, None, :], b[:, None], z, setting.budget, setting.crossing_eta)
    return sign_pred(np.einsum("kmd,kd->km", moved, W) + b[:, None])


def _raw_predictions(W, b, X):
    return sign_pred(np.einsum("kmd,kd->km", X, W) + b[:, None])


def _cv_select(loss, setting, X, y, z, lambdas, folds, opt, key, *, fit_intercept, temperature, score):
    """Stacked K-fold selection of lambda for S problems sharing sizes.

    ``X`` (S, m, d) with rows already in random order; folds are contiguous.
    ``score`` maps (setting, W, b, X, y, z) -> accuracies (K, m_held).
    Returns chosen lambdas (S,) per scoring rule in ``score`` (a dict name -> fn).
    """
    S, m, d = X.shape
    L = len(lambdas)
    parts = np.array_split(np.arange(m), folds)
    tables = {name: np.full((S, L, folds), np.nan) for name in score}
    for j, held in enumerate(parts):
        train = np.setdiff1d(np.arange(m), held)
        Xt, yt, zt = X[:, train], y[:, train], z[:, train]
        ok = (yt.max(axis=1) > 0) & (yt.min(axis=1) < 0)
        if not ok.any():
            continue
        Xs = np.repeat(Xt, L, axis=0)
        ys = np.repeat(yt, L, axis=0)
        zs = np.repeat(zt, L, axis=0)
        lam = np.tile(np.asarray(lambdas, dtype=float), S)
        keys = [key + (s, j, i) for s in range(S) for i in range(L)]
        W, b, _ = fit_linear_batch(loss, Xs, ys, zs, lam, opt, keys, fit_intercept=fit_intercept,
                                   temperature=temperature, budget=setting.budget)
        Xh = np.repeat(X[:, held], L, axis=0)
        yh = np.repeat(y[:, held], L, axis=0)
        zh = np.repeat(z[:, held], L, axis=0)
        for name, fn in score.items():
            acc = np.mean(fn(setting, W, b, Xh, yh, zh) == yh, axis=1).reshape(S, L)
            acc[~ok] = np.nan
            tables[name][:, :, j] = acc
    chosen = {}
    for name, tab in tables.items():
        with np.errstate(all="ignore"):
            valid = np.isfinite(tab).any(axis=2)
            means = np.where(valid, np.nansum(np.nan_to_num(tab), axis=2) / np.maximum(np.isfinite(tab).sum(axis=2), 1), np.nan)
        chosen[name] = np.array([pick_lambda(list(lambdas), means[s]) for s in range(S)])
    return chosen


def _strat_score(setting, W, b, X, y, z):
    return _strategic_predictions(setting, W, b, X, y, z)


def _raw_score(setting, W, b, X, y, z):
    return _raw_predictions(W, b, X)


def percentile_band(values) -> tuple:
    """Mean with asymmetric standard errors from the 16th/84th percentiles.

    The percentile deviations from the mean are scaled by ``1/sqrt(n)``.
    """
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    lo, hi = np.percentile(v, [16, 84])
    k = math.sqrt(len(v))
    return mean, (mean - lo) / k, (hi - mean) / k


# ---------------------------------------------------------------------------
# generalization


def run_generalization(cfg: GeneralizationConfig) -> tuple:
    """Accuracy curves over training-set fractions. Returns (rows, per_seed_rows)."""
    env = cfg.env.upper()
    if env not in GENERALIZATION_ENVS:
        raise ValueError(f"unknown environment {cfg.env!r}")
    setting = ResponseSetting(Kind(ENV_SETTING[env]))
    opt = OptimizerConfig(step_size=cfg.step_size, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    env_id = sorted(GENERALIZATION_ENVS).index(env)
    seeds = [cfg.seed * 1000 + s for s in range(cfg.n_seeds)]
    data = [gen_generalization_env(env, s, cfg.n_train_per_cluster, cfg.n_test_per_cluster) for s in seeds]
    # a seeded order of the training pool; fraction f uses its first round(f m) rows
    orders = [make_rng(cfg.seed, 7, s).permutation(len(tr)) for s, (tr, _) in zip(seeds, data)]
    Xpool = np.stack([tr.X[o] for (tr, _), o in zip(data, orders)])
    ypool = np.stack([tr.y[o] for (tr, _), o in zip(data, orders)])
    zpool = np.stack([target_labels(setting, tr)[o] for (tr, _), o in zip(data, orders)])
    Xte = np.stack([te.X for _, te in data])
    yte = np.stack([te.y for _, te in data])
    zte = np.stack([target_labels(setting, te) for _, te in data])
    m_pool = Xpool.shape[1]
    S = cfg.n_seeds

    rows, per_seed = [], []
    for fi, frac in enumerate(cfg.fractions):
        k = max(cfg.folds, int(round(frac * m_pool)))
        X, y, z = Xpool[:, :k], ypool[:, :k], zpool[:, :k]
        acc = {}
        for li, (method, loss) in enumerate((("s-hinge", StrategicLoss.S_HINGE),
                                             ("naive", StrategicLoss.NAIVE_HINGE),
                                             ("hinge", StrategicLoss.STANDARD_HINGE))):
            key = (env_id, fi, li)
            scorers = {"strategic": _strat_score}
            if loss is StrategicLoss.STANDARD_HINGE:
                scorers["raw"] = _raw_score
            chosen = _cv_select(loss, setting, X, y, z, cfg.lambdas, cfg.folds, opt, key,
                                fit_intercept=cfg.fit_intercept, temperature=cfg.temperature, score=scorers)
            for name, lam in chosen.items():
                keys = [key + (s, 99) for s in range(S)]
                W, b, _ = fit_linear_batch(loss, X, y, z, lam, opt, keys, fit_intercept=cfg.fit_intercept,
                                           temperature=cfg.temperature, budget=setting.budget)
                if loss is not StrategicLoss.STANDARD_HINGE:
                    acc[method] = np.mean(_strategic_predictions(setting, W, b, Xte, yte, zte) == yte, axis=1)
                elif name == "strategic":
                    acc["hinge-strategic"] = np.mean(_strategic_predictions(setting, W, b, Xte, yte, zte) == yte, axis=1)
                else:
                    acc["non-strategic"] = np.mean(_raw_predictions(W, b, Xte) == yte, axis=1)
        for method in GEN_METHODS:
            mean, lo, hi = percentile_band(acc[method])
            rows.append({"fraction": frac, "method": method, "mean_acc": mean, "se_low": lo, "se_high": hi,
                         "n_seeds": S})
            for s in range(S):
                per_seed.append({"fraction": frac, "method": method, "seed": seeds[s], "accuracy": float(acc[method][s])})
        log.info("%s fraction %.1f: %s", env, frac,
                 ", ".join(f"{m}={np.mean(acc[m]):.4f}" for m in GEN_METHODS))
    return rows, per_seed


# ---------------------------------------------------------------------------
# noise-rate sweep


def run_epsilon_sweep(cfg: EpsilonSweepConfig) -> list:
    """Train s-hinge models across noise rates and classify incentive alignment."""
    setting = ResponseSetting(Kind.NL)
    opt = OptimizerConfig(step_size=cfg.step_size, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    seeds = [cfg.seed * 1000 + s for s in range(cfg.n_seeds)]
    S = cfg.n_seeds
    rows = []
    for ei, eps in enumerate(cfg.epsilons):
        data = [gen_varying_eps(s, eps, cfg.n_train_per_cluster, cfg.n_test_per_cluster) for s in seeds]
        orders = [make_rng(cfg.seed, 7, s).permutation(len(tr)) for s, (tr, _) in zip(seeds, data)]
        X = np.stack([tr.X[o] for (tr, _), o in zip(data, orders)])
        y = np.stack([tr.y[o] for (tr, _), o in zip(data, orders)])
        z = np.stack([tr.z[o] for (tr, _), o in zip(data, orders)])
        runs = {}
        for li, (name, loss, scorer) in enumerate((("s-hinge", StrategicLoss.S_HINGE, _strat_score),
                                                   ("baseline", StrategicLoss.STANDARD_HINGE, _raw_score))):
            key = (20, ei, li)
            lam = _cv_select(loss, setting, X, y, z, cfg.lambdas, cfg.folds, opt, key,
                             fit_intercept=cfg.fit_intercept, temperature=1.0, score={"s": scorer})["s"]
            W, b, _ = fit_linear_batch(loss, X, y, z, lam, opt, [key + (s, 99) for s in range(S)],
                                       fit_intercept=cfg.fit_intercept, budget=setting.budget)
            runs[name] = (W, b)
        W, b = runs["s-hinge"]
        Wb, bb = runs["baseline"]
        stats = {k: [] for k in ("strategic_acc", "raw_acc", "baseline_acc", "best_linear_acc",
                                 "lhs", "lhs_eps", "users_ok")}
        for s, (_, te) in enumerate(data):
            model = LinearModel(W[s], b[s]) if np.linalg.norm(W[s]) > 0 else LinearModel(Wb[s], bb[s])
            moved, _ = gp_response(te.X, model.w, model.b, te.z, setting.budget, setting.crossing_eta)
            stats["strategic_acc"].append(np.mean(sign_pred(model.score(moved)) == te.y))
            stats["raw_acc"].append(np.mean(model.predict(te.X) == te.y))
            base = LinearModel(Wb[s], bb[s])
            stats["baseline_acc"].append(np.mean(base.predict(te.X) == te.y))
            stats["best_linear_acc"].append(1.0 - best_linear_error_2d(te.X, te.y))
            stats["lhs"].append(ia_lhs_estimate(setting, model, te))
            stats["lhs_eps"].append(ia_lhs_estimate(setting, model, te, epsilon=eps))
            stats["users_ok"].append(ia_check_users(setting, model, te, eps))
        mean = {k: float(np.mean(v)) for k, v in stats.items()}
        baseline_error = 1.0 - max(mean["baseline_acc"], mean["best_linear_acc"])
        system_ok = mean["lhs_eps"] <= baseline_error
        users_ok = mean["users_ok"] >= 0.5
        region = "not-IA" if not system_ok else ("IA" if users_ok else "IA-but-ytilde-better")
        rows.append({
            "epsilon": eps,
            "strategic_acc": mean["strategic_acc"],
            "raw_acc": mean["raw_acc"],
            "baseline_acc": 1.0 - baseline_error,
            "user_info_acc": 1.0 - eps,
            "ia_lhs": mean["lhs_eps"],
            "strategic_error": mean["lhs"],
            "baseline_error": baseline_error,
            "system_ia": system_ok,
            "users_ia_frac": mean["users_ok"],
            "region": region,
            "n_seeds": S,
        })
        log.info("epsilon %.2f: strategic %.4f baseline %.4f lhs %.4f -> %s", eps, mean["strategic_acc"],
                 1.0 - baseline_error, mean["lhs_eps"], region)
    return rows


def widest_ia_interval(rows) -> float:
    """Width of the longest run of consecutive grid points whose system check holds."""
    best = 0.0
    start = None
    for i, r in enumerate(rows):
        if r["system_ia"]:
            if start is None:
                start = i
            best = max(best, rows[i]["epsilon"] - rows[start]["epsilon"])
        else:
            start = None
    return best


# ---------------------------------------------------------------------------
# PPE


def ppe_data(cfg: PPEConfig, history_size: int) -> PPEDataset:
    from .datagen import gen_ppe_synthetic, load_coats

    if cfg.synthetic:
        return gen_ppe_synthetic(cfg.seed, cfg.n_users, cfg.n_items, cfg.user_dim, cfg.item_dim,
                                 history_size, preference_scale=cfg.preference_scale,
                                 label_noise=cfg.label_noise, max_history=max(cfg.history_sizes))
    thr = None if math.isnan(cfg.rating_threshold) else cfg.rating_threshold
    return load_coats(cfg.data_path, thr, history_size, cfg.seed, max(cfg.history_sizes))


def _ppe_cv(data: PPEDataset, loss, cfg: PPEConfig, opt: OptimizerConfig, key: tuple, train_users):
    """Pick lambda by held-out strategic accuracy (squared users) over user folds."""
    setting = ResponseSetting.ppe(UserLoss.SQUARED)
    parts = np.array_split(train_users, cfg.folds)
    scores = np.zeros((len(cfg.lambdas), cfg.folds))
    for j, held in enumerate(parts):
        fit_users = np.setdiff1d(train_users, held)
        W, _ = fit_ppe_batch(data.select_users(fit_users), cfg.lambdas, opt, key + (j,), loss=loss,
                             lambda_d=cfg.lambda_d, temperature=cfg.temperature)
        held_data = data.select_users(held)
        for i in range(len(cfg.lambdas)):
            scores[i, j] = evaluate_ppe(setting, BilinearModel(W[i]), held_data).strategic_accuracy
    return pick_lambda(list(cfg.lambdas), scores.mean(axis=1))


def run_ppe(cfg: PPEConfig) -> list:
    """gs-hinge vs standard hinge across history sizes and user response types."""
    opt = OptimizerConfig(step_size=cfg.step_size, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    rows = []
    for ni, n in enumerate(cfg.history_sizes):
        data = ppe_data(cfg, n)
        train_users, test_users = split_users(data.users.shape[0], cfg.test_fraction, cfg.seed)
        train, test = data.select_users(train_users), data.select_users(test_users)
        models = {}
        for li, loss in enumerate((StrategicLoss.PPE_GS_HINGE, StrategicLoss.STANDARD_HINGE)):
            if loss is StrategicLoss.PPE_GS_HINGE and n == 0:
                continue  # without histories users cannot respond; both methods coincide
            key = (30, ni, li)
            lam = _ppe_cv(data, loss, cfg, opt, key, train_users)
            W, _ = fit_ppe_batch(train, [lam], opt, key + (99,), loss=loss, lambda_d=cfg.lambda_d,
                                 temperature=cfg.temperature)
            models[loss] = (BilinearModel(W[0]), lam)
        if StrategicLoss.PPE_GS_HINGE not in models:
            models[StrategicLoss.PPE_GS_HINGE] = models[StrategicLoss.STANDARD_HINGE]
        for user_loss in cfg.user_losses:
            setting = ResponseSetting.ppe(UserLoss(user_loss), ppe_inner_steps=cfg.inner_steps,
                                          ppe_inner_lr=cfg.inner_lr)
            gs = evaluate_ppe(setting, models[StrategicLoss.PPE_GS_HINGE][0], test)
            hs = evaluate_ppe(setting, models[StrategicLoss.STANDARD_HINGE][0], test)
            rows.append({
                "history_size": n, "user_loss": user_loss,
                "gs_hinge_acc": gs.strategic_accuracy, "hinge_acc": hs.strategic_accuracy,
                "gain": gs.strategic_accuracy - hs.strategic_accuracy,
                "gs_hinge_lambda": models[StrategicLoss.PPE_GS_HINGE][1],
                "hinge_lambda": models[StrategicLoss.STANDARD_HINGE][1],
                "n_test_pairs": len(test),
            })
            log.info("n=%d %s: gs-hinge %.4f hinge %.4f", n, user_loss, gs.strategic_accuracy, hs.strategic_accuracy)
    return rows


def aggregate_ppe(per_seed: list) -> list:
    """Average per-seed PPE rows keyed by (history size, user loss)."""
    rows = []
    for first in per_seed[0]:
        n, ul = first["history_size"], first["user_loss"]
        sel = [r for rs in per_seed for r in rs if r["history_size"] == n and r["user_loss"] == ul]
        gains = np.array([r["gain"] for r in sel])
        rows.append({
            "history_size": n, "user_loss": ul,
            "gs_hinge_acc": float(np.mean([r["gs_hinge_acc"] for r in sel])),
            "hinge_acc": float(np.mean([r["hinge_acc"] for r in sel])),
            "gain": float(gains.mean()),
            "gain_se": float(gains.std(ddof=1) / np.sqrt(len(gains))) if len(gains) > 1 else 0.0,
            "n_seeds": len(sel),
        })
    return rows


def ppe_seed_configs(cfg: PPEConfig, n_seeds: int) -> list:
    """Per-seed copies of ``cfg`` (seeds ``cfg.seed * 1000 + s``)."""
    return [replace(cfg, seed=cfg.seed * 1000 + s) for s in range(n_seeds)]


def run_ppe_seeds(cfg: PPEConfig, n_seeds: int = 5) -> tuple:
    """Run ``run_ppe`` over several seeds; returns ``(averaged_rows, per_seed_rows)``."""
    cfgs = ppe_seed_configs(cfg, n_seeds)
    per_seed = [run_ppe(c) for c in cfgs]
    flat = [dict(r, seed=c.seed) for c, rs in zip(cfgs, per_seed) for r in rs]
    return aggregate_ppe(per_seed), flat


__all__ = [
    "FRACTIONS", "EPSILON_GRID", "HISTORY_SIZES", "GEN_METHODS",
    "GeneralizationConfig", "EpsilonSweepConfig", "PPEConfig", "config_dict",
    "percentile_band", "run_generalization", "run_epsilon_sweep", "widest_ia_interval", "ppe_data", "run_ppe",
    "aggregate_ppe", "ppe_seed_configs", "run_ppe_seeds",
]
