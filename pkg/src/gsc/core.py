"""Domain types, seeded randomness and the small dense linear algebra used everywhere else."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.special


class CostKind(enum.Enum):
    L2_NORM = "l2"
    L2_NORM_SQUARED = "l2sq"


@dataclass(frozen=True)
class CostSpec:
    """User modification cost ``weight * c(x, x')``.

    ``weight = inf`` forbids any movement (zero budget).
    """

    kind: CostKind = CostKind.L2_NORM
    weight: float = 0.5

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"cost weight must be positive, got {self.weight}")

    def budget(self, gain: float = 1.0) -> float:
        # distance a user will travel for a utility gain (L2Norm only)
        return gain / self.weight

    def cost(self, x, x_new):
        diff = np.asarray(x_new, dtype=float) - np.asarray(x, dtype=float)
        dist = np.linalg.norm(diff, axis=-1)
        if self.kind is CostKind.L2_NORM_SQUARED:
            return dist**2
        return dist


# ---------------------------------------------------------------------------
# side information


@dataclass(frozen=True)
class TargetLabel:
    value: int

    def __post_init__(self):
        if self.value not in (-1, 1):
            raise ValueError(f"target label must be -1 or +1, got {self.value}")


@dataclass(frozen=True)
class NoiseVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("noise vector must be a finite 1-d array")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class History:
    """Previously experienced (item, label) pairs held privately by a user."""

    items: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        items = np.atleast_2d(np.asarray(self.items, dtype=float))
        labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if labels.size == 0 or items.shape[0] == 0:
            raise ValueError("history must be non-empty")
        if items.shape[0] != labels.size:
            raise ValueError(
                f"history has {items.shape[0]} items but {labels.size} labels"
            )
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("history labels must be -1 or +1")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.labels.size)


SideInfo = Union[None, TargetLabel, NoiseVector, History]


@dataclass(frozen=True)
class Example:
    x: np.ndarray
    z: SideInfo = None
    y: int = 1

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if self.y not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.y}")
        object.__setattr__(self, "x", x)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class LinearModel:
    """h(x) = sign(w.x + b).

    The intercept defaults to zero; the strategic geometry only ever
    normalizes by ``||w||``.
    """

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)) or not math.isfinite(self.b):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.w.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.w))

    def checked_norm(self) -> float:
        n = self.norm()
        if n == 0.0:
            raise ValueError("operation requires a model with ||w|| > 0")
        return n

    def score(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.w + self.b

    def predict(self, X) -> np.ndarray:
        return sign_pred(self.score(X))

    def scaled(self, c: float) -> "LinearModel":
        return LinearModel(self.w * c, self.b * c)


@dataclass(frozen=True)
class BilinearModel:
    """h(x, a) = sign(a^T W x) with W of shape (item_dim, user_dim)."""

    W: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if not np.all(np.isfinite(W)):
            raise ValueError("bilinear weights must be finite")
        object.__setattr__(self, "W", W)

    @property
    def item_dim(self) -> int:
        return self.W.shape[0]

    @property
    def user_dim(self) -> int:
        return self.W.shape[1]

    def score(self, x, a) -> np.ndarray:
        # row-wise a_i^T W x_i for batches, or a scalar for single vectors
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.einsum("...i,ij,...j->...", a, self.W, x)

    def predict(self, x, a) -> np.ndarray:
        return sign_pred(self.score(x, a))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """A batch of examples stored column-wise.

    ``z`` holds target labels (NL/GP side information) or ``None``;
    ``noise`` holds per-row noise vectors for the NOISE setting.
    """

    X: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        m = self.X.shape[0]
        if self.y.size != m:
            raise ValueError(f"{m} rows but {self.y.size} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float).reshape(-1)
            if self.z.size != m or not np.all(np.isin(self.z, (-1.0, 1.0))):
                raise ValueError("side-information labels must be -1/+1, one per row")
        if self.noise is not None:
            self.noise = np.atleast_2d(np.asarray(self.noise, dtype=float))
            if self.noise.shape != self.X.shape:
                raise ValueError("noise vectors must match the feature matrix shape")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx],
            self.y[idx],
            None if self.z is None else self.z[idx],
            None if self.noise is None else self.noise[idx],
            dict(self.meta),
        )

    def examples(self) -> Iterator[Example]:
        for i in range(len(self)):
            if self.noise is not None:
                side: SideInfo = NoiseVector(self.noise[i])
            elif self.z is not None:
                side = TargetLabel(int(self.z[i]))
            else:
                side = None
            yield Example(self.X[i], side, int(self.y[i]))

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Dataset":
        if not examples:
            raise ValueError("empty example list")
        X = np.stack([e.x for e in examples])
        y = np.array([e.y for e in examples], dtype=float)
        z = noise = None
        first = examples[0].z
        if isinstance(first, TargetLabel):
            z = np.array([e.z.value for e in examples], dtype=float)
        elif isinstance(first, NoiseVector):
            noise = np.stack([e.z.values for e in examples])
        return cls(X, y, z, noise)


@dataclass
class PPEDataset:
    """Users, items, per-user private histories and labelled (user, item) pairs.

    Every user holds the same number of history entries (``history_size``),
    stored as indices into ``items``. Pairs index users and items globally.
    """

    users: np.ndarray
    items: np.ndarray
    hist_items: np.ndarray
    hist_labels: np.ndarray
    pair_user: np.ndarray
    pair_item: np.ndarray
    pair_label: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.users = np.atleast_2d(np.asarray(self.users, dtype=float))
        self.items = np.atleast_2d(np.asarray(self.items, dtype=float))
        U = self.users.shape[0]
        self.hist_items = np.asarray(self.hist_items, dtype=np.int64).reshape(U, -1)
        self.hist_labels = np.asarray(self.hist_labels, dtype=float).reshape(U, -1)
        self.pair_user = np.asarray(self.pair_user, dtype=np.int64).reshape(-1)
        self.pair_item = np.asarray(self.pair_item, dtype=np.int64).reshape(-1)
        self.pair_label = np.asarray(self.pair_label, dtype=float).reshape(-1)
        if self.hist_items.shape != self.hist_labels.shape:
            raise ValueError("history items and labels must align")
        if not (self.pair_user.size == self.pair_item.size == self.pair_label.size):
            raise ValueError("pair arrays must have equal length")
        for name, lab in (("history", self.hist_labels), ("pair", self.pair_label)):
            if not np.all(np.isin(lab, (-1.0, 1.0))):
                raise ValueError(f"{name} labels must be -1 or +1")
        if self.pair_user.size and (self.pair_user.min() < 0 or self.pair_user.max() >= U):
            raise ValueError("pair references an unknown user")
        n_items = self.items.shape[0]
        for idx in (self.pair_item, self.hist_items):
            if idx.size and (idx.min() < 0 or idx.max() >= n_items):
                raise ValueError("reference to an unknown item")

    def __len__(self):
        return int(self.pair_label.size)

    @property
    def history_size(self) -> int:
        return self.hist_items.shape[1]

    @property
    def user_dim(self) -> int:
        return self.users.shape[1]

    @property
    def item_dim(self) -> int:
        return self.items.shape[1]

    def user_history(self, u: int) -> Optional[History]:
        if self.history_size == 0:
            return None
        return History(self.items[self.hist_items[u]], self.hist_labels[u])

    def history_arrays(self, user_idx) -> tuple:
        """Stacked ``(A, Y)`` of shapes (k, n, l) and (k, n) for the given users."""
        user_idx = np.asarray(user_idx)
        return self.items[self.hist_items[user_idx]], self.hist_labels[user_idx]

    def select_pairs(self, mask_or_idx) -> "PPEDataset":
        sel = np.asarray(mask_or_idx)
        return PPEDataset(
            self.users, self.items, self.hist_items, self.hist_labels,
            self.pair_user[sel], self.pair_item[sel], self.pair_label[sel], dict(self.meta),
        )

    def select_users(self, user_ids) -> "PPEDataset":
        return self.select_pairs(np.isin(self.pair_user, np.asarray(user_ids)))


# ---------------------------------------------------------------------------
# randomness


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) stream for ``seed`` split by integer ``keys``.

    Streams for distinct key tuples are statistically independent, so each
    task can own its stream regardless of scheduling order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# linear algebra


def dot(u, v) -> float:
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if u.size != v.size:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    total = 0.0
    for a, b in zip(u.tolist(), v.tolist()):
        total += a * b
    return total


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def solve_spd(M, b) -> np.ndarray:
    """Solve ``M v = b`` for symmetric positive definite ``M`` by Cholesky.

    Raises NotPositiveDefiniteError when the factorization hits a
    non-positive pivot.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.asarray(b, dtype=float)
    if M.shape[0] != M.shape[1] or b.shape[0] != M.shape[0]:
        raise ValueError(f"dimension mismatch: M is {M.shape}, b is {b.shape}")
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return scipy.linalg.cho_solve(factor, b)


def sign_pred(s):
    """+1 for s >= 0, else -1 (sign(0) = +1 by convention)."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 0, 1.0, -1.0)
    return float(out) if out.ndim == 0 else out


def sigmoid(t):
    return scipy.special.expit(t)
