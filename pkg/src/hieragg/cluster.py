"""Household partitions: random, attribute-based, and NMF + k-means."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
import pandas as pd

from .errors import (
    KTooLarge,
    MismatchedSets,
    NegativeInput,
    RankTooLarge,
    UnknownColumn,
    ZeroColumn,
    ZeroMeanHousehold,
    ConfigError,
)

MIN_ATTRIBUTE_SIZE = 20


@dataclass(frozen=True)
class Clustering:
    """Assignment of household ids to clusters ``1..k`` (no empty cluster)."""

    assignment: dict
    k: int
    provenance: tuple = ("unknown",)
    labels: tuple | None = None  # display label per cluster index, e.g. attribute values
    dropped: tuple = ()
    name: str = "cluster"

    @classmethod
    def from_labels(cls, ids, raw_labels, provenance=("unknown",), name="cluster", dropped=()):
        """Compact arbitrary labels into ``1..k`` in order of first appearance."""
        codes, uniques = pd.factorize(pd.Series(list(raw_labels)), sort=False)
        assignment = {hid: int(c) + 1 for hid, c in zip(ids, codes)}
        return cls(assignment, len(uniques), tuple(provenance), tuple(map(str, uniques)), tuple(dropped), name)

    def groups(self) -> dict:
        """``{label: [household ids]}`` in cluster-index order."""
        out: dict = {}
        for hid, c in self.assignment.items():
            out.setdefault(c, []).append(hid)
        return {self.label(c): out[c] for c in sorted(out)}

    def label(self, c: int) -> str:
        if self.labels is not None:
            return f"{self.name}={self.labels[c - 1]}"
        return f"{self.name}{c}"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"household_id": list(self.assignment), "cluster": list(self.assignment.values())})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, name="cluster") -> "Clustering":
        df = pd.read_csv(path, dtype={"household_id": str})
        ids = df["household_id"].tolist()
        return cls.from_labels(ids, df["cluster"].tolist(), ("file", str(path)), name)


# -- NMF -----------------------------------------------------------------------------


@dataclass
class NmfFactorization:
    W: np.ndarray
    H: np.ndarray
    r: int
    objective: float
    history: list = field(default_factory=list)


def rescale_history(series) -> np.ndarray:
    """Divide each household row (``|I| x T0``) by its mean."""
    Y = np.asarray(getattr(series, "values", series), dtype=float)
    means = Y.mean(axis=1)
    bad = np.flatnonzero(~(means > 0))
    if bad.size:
        raise ZeroMeanHousehold(f"household rows {bad.tolist()} have non-positive mean")
    return Y / means[:, None]


def _objective(Y, W, H):
    R = Y - W @ H
    return float(np.einsum("ij,ij->", R, R))


def _hals_update(Y, W, H):
    # exact minimization over each column of W in turn, H fixed
    YH = Y @ H.T
    HH = H @ H.T
    for j in range(W.shape[1]):
        if HH[j, j] <= 0:
            continue
        W[:, j] = np.maximum(0.0, W[:, j] + (YH[:, j] - W @ HH[:, j]) / HH[j, j])


def nmf(Y0, r: int = 10, seed: int = 0, max_sweeps: int = 2000, tol: float = 1e-6) -> NmfFactorization:
    """Nonnegative factorization ``Y0 ~ W H`` by alternating coordinate descent.

    Each sweep updates every column of ``W`` and every row of ``H`` by its exact
    nonnegative minimizer, so the objective never increases.
    """
    Y = np.asarray(Y0, dtype=float)
    if np.any(Y < 0):
        raise NegativeInput("NMF input has negative entries")
    n, T = Y.shape
    if not 1 <= r <= min(n, T):
        raise RankTooLarge(f"rank {r} not in [1, {min(n, T)}]")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(Y.mean() / r)
    W = rng.random((n, r)) * scale
    H = rng.random((r, T)) * scale
    obj = _objective(Y, W, H)
    history = [obj]
    for _ in range(max_sweeps):
        _hals_update(Y, W, H)
        Ht = H.T.copy()
        _hals_update(Y.T, Ht, W.T)
        H = Ht.T.copy()
        new = _objective(Y, W, H)
        history.append(new)
        done = obj - new <= tol * max(obj, np.finfo(float).tiny)
        obj = new
        if done:
            break
    return NmfFactorization(W, H, r, obj, history)


def characteristic_vectors(W) -> np.ndarray:
    """Normalize each column of ``W`` to sum 1; row ``i`` is household ``i``'s vector."""
    W = np.asarray(W, dtype=float)
    sums = W.sum(axis=0)
    bad = np.flatnonzero(~(sums > 0))
    if bad.size:
        raise ZeroColumn(f"columns {bad.tolist()} of W sum to zero")
    return W / sums


# -- k-means -------------------------------------------------------------------------


def _sq_dists(P, centers):
    return ((P[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_fit(points, k: int, seed: int = 0, max_iters: int = 300):
    """Lloyd iterations from k-means++ seeding.

    Returns ``(labels in 0..k-1, centers, objective history)``.
    """
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} for {n} points")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, P.shape[1]))
    centers[0] = P[rng.integers(n)]
    d2 = ((P - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else int(rng.integers(n))
        centers[c] = P[idx]
        d2 = np.minimum(d2, ((P - centers[c]) ** 2).sum(axis=1))

    labels = np.argmin(_sq_dists(P, centers), axis=1)  # argmin keeps the lowest index on ties
    history = [float(_sq_dists(P, centers)[np.arange(n), labels].sum())]
    for _ in range(max_iters):
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = P[members].mean(axis=0)
            else:
                dist = _sq_dists(P, centers)[np.arange(n), labels]
                far = int(np.argmax(dist))
                centers[c] = P[far]
                labels[far] = c
        D = _sq_dists(P, centers)
        new_labels = np.argmin(D, axis=1)
        history.append(float(D[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers, history


def kmeans_best(points, k: int, seed: int = 0, max_iters: int = 300, n_init: int = 10):
    """Best of ``n_init`` seeded runs by final objective (earliest run on ties)."""
    best = None
    for s in np.random.SeedSequence(seed).spawn(n_init):
        run = kmeans_fit(points, k, s, max_iters)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    return best


def kmeans(points, k: int, seed: int = 0, max_iters: int = 300, ids=None, name="nmf", n_init: int = 10) -> Clustering:
    labels, _, _ = kmeans_best(points, k, seed, max_iters, n_init)
    ids = list(range(len(labels))) if ids is None else list(ids)
    return replace(Clustering.from_labels(ids, labels, ("kmeans", k, seed), name), labels=None)


def nmf_clustering(history, k: int, r: int = 10, seed: int = 0, ids=None, name="nmf", n_init: int = 10) -> Clustering:
    """Rescale, factorize, normalize and cluster household histories (rows)."""
    if ids is None and hasattr(history, "index"):
        ids = list(history.index)
    fac = nmf(rescale_history(history), r=r, seed=seed)
    labels, _, _ = kmeans_best(characteristic_vectors(fac.W), k, seed, n_init=n_init)
    ids = list(range(len(labels))) if ids is None else list(ids)
    return replace(Clustering.from_labels(ids, labels, ("nmf", r, k, seed), name), labels=None)


# -- other partitions ----------------------------------------------------------------


def random_clustering(ids, k: int, seed: int = 0, name="rand") -> Clustering:
    if k < 1:
        raise ConfigError("k must be at least 1")
    ids = list(ids)
    rng = np.random.default_rng(seed)
    raw = rng.integers(k, size=len(ids))
    return replace(Clustering.from_labels(ids, raw, ("random", seed), name), labels=None)


def attribute_clustering(table: pd.DataFrame, column: str, min_size: int | None = MIN_ATTRIBUTE_SIZE,
                         id_column: str = "household_id") -> Clustering:
    """One cluster per distinct value of ``column``; rare values are dropped.

    Pass ``min_size=None`` to keep every value.
    """
    if column not in table.columns:
        raise UnknownColumn(f"no column {column!r}")
    ids = table[id_column].tolist() if id_column in table.columns else list(table.index)
    values = table[column].astype(str).tolist()
    counts = pd.Series(values).value_counts()
    keep_vals = set(counts.index) if min_size is None else set(counts.index[counts >= min_size])
    kept = [(i, v) for i, v in zip(ids, values) if v in keep_vals]
    dropped = tuple(i for i, v in zip(ids, values) if v not in keep_vals)
    if not kept:
        return Clustering({}, 0, ("attribute", column), (), dropped, column)
    ordered = sorted(kept, key=lambda iv: iv[1])
    k_ids, k_vals = zip(*ordered)
    return Clustering.from_labels(k_ids, k_vals, ("attribute", column), column, dropped)


def adjusted_rand_index(P, Q) -> float:
    """Adjusted Rand index between two partitions of the same items.

    Accepts :class:`Clustering` objects, dicts ``id -> label`` or equal-length
    label sequences.
    """
    p, q = _as_mapping(P), _as_mapping(Q)
    if set(p) != set(q):
        raise MismatchedSets("partitions cover different item sets")
    keys = list(p)
    table = pd.crosstab(pd.Series([p[i] for i in keys]), pd.Series([q[i] for i in keys])).to_numpy()
    n = len(keys)
    pairs = lambda v: sum(comb(int(x), 2) for x in np.ravel(v))  # noqa: E731
    sum_ij = pairs(table)
    sum_a, sum_b = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def _as_mapping(P) -> dict:
    if isinstance(P, Clustering):
        return P.assignment
    if isinstance(P, dict):
        return P
    return dict(enumerate(P))
