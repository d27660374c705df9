"""Synthetic data generators and coats-format ingestion for the PPE setting."""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .core import Dataset, PPEDataset, make_rng


# stream tags so that each generator owns independent randomness
_EPS_STREAM, _GEN_STREAM, _PPE_STREAM, _COATS_STREAM = 11, 12, 13, 14


@dataclass(frozen=True)
class Cluster:
    mean: tuple
    var: tuple  # diagonal covariance
    p_pos: float  # P(y = +1)
    z: object = None  # fixed target label, or None


EPSILON_CLUSTERS = (
    Cluster((-5.0, 0.0), (0.5, 20.0), 0.95),
    Cluster((0.3, 0.0), (0.5, 20.0), 0.0),
    Cluster((-0.3, 0.0), (0.5, 20.0), 1.0),
    Cluster((5.0, 0.0), (0.5, 20.0), 0.05),
)

GENERALIZATION_ENVS = {
    "NL": (
        Cluster((10.0, 0.0), (5.0, 0.2), 1.0, 1),
        Cluster((-10.0, 0.0), (5.0, 0.2), 0.0, -1),
    ),
    "ADV": (
        Cluster((15.5, 0.0), (1.5, 0.2), 1.0, -1),
        Cluster((4.5, 0.0), (1.5, 0.2), 0.0, 1),
    ),
    "SC": (
        Cluster((15.0, 0.0), (1.5, 0.2), 1.0, 1),
        Cluster((4.0, 0.0), (1.5, 0.2), 0.0, 1),
    ),
    "SC_HARD": (
        Cluster((2.25, 0.0), (0.5, 0.2), 1.0, 1),
        Cluster((-2.25, 0.0), (0.5, 0.2), 0.0, 1),
    ),
}

ENV_SETTING = {"NL": "NL", "ADV": "ADV", "SC": "SC", "SC_HARD": "SC"}


def _clusters_meta(clusters):
    return [{"mean": list(c.mean), "cov_diag": list(c.var), "p_pos": c.p_pos, "z": c.z} for c in clusters]


def _sample_clusters(rng, clusters, n_per_cluster):
    X, y, z = [], [], []
    for c in clusters:
        X.append(rng.normal(c.mean, np.sqrt(c.var), size=(n_per_cluster, len(c.mean))))
        y.append(np.where(rng.random(n_per_cluster) < c.p_pos, 1.0, -1.0))
        z.append(np.full(n_per_cluster, np.nan if c.z is None else float(c.z)))
    return np.vstack(X), np.concatenate(y), np.concatenate(z)


def gen_varying_eps(seed: int, epsilon: float, n_train_per_cluster: int = 50,
                    n_test_per_cluster: int = 1250) -> tuple:
    """Four-cluster noisy-label data; ``z`` is the true label flipped with probability ``epsilon``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    out = []
    for split, n in enumerate((n_train_per_cluster, n_test_per_cluster)):
        rng = make_rng(seed, _EPS_STREAM, split)
        X, y, _ = _sample_clusters(rng, EPSILON_CLUSTERS, n)
        # a separate stream for the noise keeps (X, y) fixed across epsilon
        flip = make_rng(seed, _EPS_STREAM, split, 1).random(len(y)) < epsilon
        z = np.where(flip, -y, y)
        meta = {
            "generator": "varying_eps", "seed": seed, "epsilon": epsilon, "split": ("train", "test")[split],
            "n_per_cluster": n, "clusters": _clusters_meta(EPSILON_CLUSTERS),
        }
        out.append(Dataset(X, y, z, meta=meta))
    return tuple(out)


def gen_generalization_env(env: str, seed: int, n_train_per_cluster: int = 25,
                           n_test_per_cluster: int = 1250) -> tuple:
    """Two-cluster environments with deterministic target labels per cluster."""
    env = env.upper()
    if env not in GENERALIZATION_ENVS:
        raise ValueError(f"unknown environment {env!r}; expected one of {sorted(GENERALIZATION_ENVS)}")
    clusters = GENERALIZATION_ENVS[env]
    out = []
    for split, n in enumerate((n_train_per_cluster, n_test_per_cluster)):
        rng = make_rng(seed, _GEN_STREAM, sorted(GENERALIZATION_ENVS).index(env), split)
        X, y, z = _sample_clusters(rng, clusters, n)
        meta = {
            "generator": "generalization", "env": env, "seed": seed, "split": ("train", "test")[split],
            "n_per_cluster": n, "clusters": _clusters_meta(clusters),
        }
        out.append(Dataset(X, y, z, meta=meta))
    return tuple(out)


# ---------------------------------------------------------------------------
# PPE


@dataclass
class RatingTable:
    """Raw PPE data before history/evaluation partitioning."""

    users: np.ndarray
    items: np.ndarray
    rating_user: np.ndarray
    rating_item: np.ndarray
    label: np.ndarray
    meta: dict


def partition_histories(table: RatingTable, history_size: int, seed: int, max_history: int = 24) -> PPEDataset:
    """Split each user's rated items into a private history and evaluation pairs.

    Items are ordered by a seeded per-user shuffle. The first ``history_size``
    form the history; positions from ``max_history`` on are evaluation pairs,
    so the evaluation set does not change as ``history_size`` varies.
    """
    if not 0 <= history_size <= max_history:
        raise ValueError(f"history size must lie in [0, {max_history}]")
    U = table.users.shape[0]
    hist_items = np.zeros((U, history_size), dtype=np.int64)
    hist_labels = np.ones((U, history_size))
    pu, pi, pl = [], [], []
    for u in range(U):
        idx = np.flatnonzero(table.rating_user == u)
        if idx.size <= max_history:
            raise ValueError(f"user {u} has {idx.size} ratings; need more than {max_history}")
        idx = idx[make_rng(seed, _COATS_STREAM, u).permutation(idx.size)]
        hist_items[u] = table.rating_item[idx[:history_size]]
        hist_labels[u] = table.label[idx[:history_size]]
        rest = idx[max_history:]
        pu.append(np.full(rest.size, u))
        pi.append(table.rating_item[rest])
        pl.append(table.label[rest])
    meta = dict(table.meta, history_size=history_size, max_history=max_history, partition_seed=seed)
    return PPEDataset(table.users, table.items, hist_items, hist_labels,
                      np.concatenate(pu), np.concatenate(pi), np.concatenate(pl), meta)


def ppe_synthetic_table(seed: int, n_users: int = 290, n_items: int = 300, d: int = 10, l: int = 3,
                        ratings_per_user: int = 40, preference_scale: float = 1.5,
                        label_noise: float = 0.0) -> RatingTable:
    """Bilinear ground truth with a private per-user preference offset.

    ``y = sign(a^T (W* x + xi_u) + noise)`` where ``xi_u`` is visible only
    through the user's ratings, which is what makes histories informative.
    With ``preference_scale = label_noise = 0`` labels are realizable by ``W*``.
    """
    if min(n_users, n_items, d, l, ratings_per_user) < 1:
        raise ValueError("sizes must be positive")
    if ratings_per_user > n_items:
        raise ValueError("cannot rate more items than exist")
    rng = make_rng(seed, _PPE_STREAM)
    W_star = rng.normal(0.0, 1.0 / np.sqrt(d), size=(l, d))
    users = rng.normal(size=(n_users, d))
    items = rng.normal(size=(n_items, l))
    xi = rng.normal(0.0, preference_scale, size=(n_users, l))
    ru = np.repeat(np.arange(n_users), ratings_per_user)
    ri = np.concatenate([rng.choice(n_items, ratings_per_user, replace=False) for _ in range(n_users)])
    score = np.einsum("ul,ul->u", items[ri], users[ru] @ W_star.T + xi[ru])
    score = score + label_noise * rng.normal(size=score.size)
    labels = np.where(score >= 0, 1.0, -1.0)
    meta = {
        "generator": "ppe_synthetic", "seed": seed, "n_users": n_users, "n_items": n_items, "d": d, "l": l,
        "ratings_per_user": ratings_per_user, "preference_scale": preference_scale, "label_noise": label_noise,
        "W_star": W_star.tolist(),
    }
    return RatingTable(users, items, ru, ri, labels, meta)


def gen_ppe_synthetic(seed: int, n_users: int = 290, n_items: int = 300, d: int = 10, l: int = 3,
                      history_size: int = 12, **kw) -> PPEDataset:
    max_history = kw.pop("max_history", 24)
    table = ppe_synthetic_table(seed, n_users, n_items, d, l, **kw)
    return partition_histories(table, history_size, seed, max_history)


# ---------------------------------------------------------------------------
# coats-format CSV ingestion


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: missing header row")
        return list(reader.fieldnames), list(reader)


def _encode_features(path, id_col):
    """One-hot encode non-numeric columns, standardize numeric ones."""
    header, rows = _read_csv(path)
    if id_col not in header:
        raise ValueError(f"{path}: missing column {id_col!r}")
    ids = [r[id_col] for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate {id_col}")
    cols = []
    for name in header:
        if name == id_col:
            continue
        raw = [r[name] for r in rows]
        try:
            vals = np.array([float(v) for v in raw])
        except ValueError:
            for level in sorted(set(raw)):
                cols.append(np.array([v == level for v in raw], dtype=float))
            continue
        sd = vals.std()
        cols.append((vals - vals.mean()) / sd if sd > 0 else vals - vals.mean())
    if not cols:
        raise ValueError(f"{path}: no feature columns")
    return ids, np.stack(cols, axis=1)


def read_coats_table(path: str, rating_threshold=None) -> RatingTable:
    user_ids, users = _encode_features(os.path.join(path, "users.csv"), "user_id")
    item_ids, items = _encode_features(os.path.join(path, "items.csv"), "item_id")
    header, rows = _read_csv(os.path.join(path, "ratings.csv"))
    for col in ("user_id", "item_id", "rating"):
        if col not in header:
            raise ValueError(f"ratings.csv: missing column {col!r}")
    upos = {u: i for i, u in enumerate(user_ids)}
    ipos = {a: i for i, a in enumerate(item_ids)}
    ru, ri, rating = [], [], []
    for r in rows:
        if r["user_id"] not in upos:
            raise ValueError(f"ratings.csv references undefined user id {r['user_id']!r}")
        if r["item_id"] not in ipos:
            raise ValueError(f"ratings.csv references undefined item id {r['item_id']!r}")
        ru.append(upos[r["user_id"]])
        ri.append(ipos[r["item_id"]])
        rating.append(float(r["rating"]))
    rating = np.array(rating)
    if rating_threshold is None:
        rating_threshold = (rating.min() + rating.max()) / 2.0
    labels = np.where(rating >= rating_threshold, 1.0, -1.0)
    ru = np.array(ru, dtype=np.int64)
    counts = np.bincount(ru, minlength=len(user_ids))
    for what, got, want in (("users", len(user_ids), 290), ("items", len(item_ids), 300),
                            ("ratings per user", int(np.median(counts)), 40)):
        if abs(got - want) > 0.1 * want:
            warnings.warn(f"coats data: {got} {what}, expected about {want}", RuntimeWarning, stacklevel=2)
    meta = {"generator": "coats", "path": os.path.abspath(path), "rating_threshold": float(rating_threshold),
            "user_ids": user_ids, "item_ids": item_ids}
    return RatingTable(users, items, ru, np.array(ri, dtype=np.int64), labels, meta)


def load_coats(path: str, rating_threshold=None, history_size: int = 12, seed: int = 0,
               max_history: int = 24) -> PPEDataset:
    """Read ``users.csv``, ``items.csv`` and ``ratings.csv`` from ``path``.

    Ratings at or above ``rating_threshold`` (default: midpoint of the
    observed rating range) become +1, the rest -1.
    """
    table = read_coats_table(path, rating_threshold)
    return partition_histories(table, history_size, seed, max_history)


def split_users(n_users: int, test_fraction: float, seed: int) -> tuple:
    """Seeded disjoint (train, test) user index arrays."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must lie in (0, 1)")
    perm = make_rng(seed, _PPE_STREAM, 1).permutation(n_users)
    n_test = int(round(test_fraction * n_users))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# CSV emission


def dataset_to_rows(dataset: Dataset) -> tuple:
    d = dataset.dim
    header = [f"x_{i}" for i in range(d)]
    cols = [dataset.X[:, i] for i in range(d)]
    if dataset.z is not None and not np.all(np.isnan(dataset.z)):
        header.append("z")
        cols.append(dataset.z)
    if dataset.noise is not None:
        header += [f"noise_{i}" for i in range(d)]
        cols += [dataset.noise[:, i] for i in range(d)]
    header.append("y")
    cols.append(dataset.y)
    return header, np.stack(cols, axis=1)


def write_dataset_csv(dataset: Dataset, path: str) -> None:
    header, rows = dataset_to_rows(dataset)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_dataset_csv(path: str) -> Dataset:
    header, rows = _read_csv(path)
    xs = [h for h in header if h.startswith("x_")]
    ns = [h for h in header if h.startswith("noise_")]
    if not xs or "y" not in header:
        raise ValueError(f"{path}: expected x_0..x_{{d-1}} and y columns")
    X = np.array([[float(r[h]) for h in xs] for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    z = np.array([float(r["z"]) for r in rows]) if "z" in header else None
    noise = np.array([[float(r[h]) for h in ns] for r in rows]) if ns else None
    return Dataset(X, y, z, noise)


__all__ = [
    "Cluster", "EPSILON_CLUSTERS", "GENERALIZATION_ENVS", "ENV_SETTING",
    "gen_varying_eps", "gen_generalization_env", "RatingTable", "partition_histories",
    "ppe_synthetic_table", "gen_ppe_synthetic", "read_coats_table", "load_coats", "split_users",
    "dataset_to_rows", "write_dataset_csv", "read_dataset_csv",
]
