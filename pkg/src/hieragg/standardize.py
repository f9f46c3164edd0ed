"""Per-node residual scaling and feature whitening.

Observations are mapped to scaled residuals ``(y - x) / S`` and the feature
vector to ``E @ x`` with ``E = (Gram / T0)^{-1/2}``; a standardized prediction
``ybar`` maps back to ``S * ybar + x``. No mean recentering is applied.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularGram, UnknownNode, WindowTooShort

SCALE_FLOOR = 1e-9
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class StandardizationStats:
    scales: np.ndarray
    whitener: np.ndarray
    window_len: int
    empirical_bound: float
    nodes: tuple[str, ...] | None = None

    @property
    def dim(self) -> int:
        return self.scales.shape[0]

    @property
    def whitener_inv(self) -> np.ndarray:
        return _sym_power(self.whitener, -1.0)

    def node_index(self, node) -> int:
        if isinstance(node, (int, np.integer)):
            if not 0 <= node < self.dim:
                raise UnknownNode(f"node index {node} out of range")
            return int(node)
        if self.nodes is None or node not in self.nodes:
            raise UnknownNode(f"unknown node {node!r}")
        return self.nodes.index(node)

    def to_dict(self) -> dict:
        return {
            "scales": self.scales.tolist(),
            "whitener": self.whitener.ravel().tolist(),
            "window_len": self.window_len,
            "empirical_bound": self.empirical_bound,
            "nodes": list(self.nodes) if self.nodes is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc) -> "StandardizationStats":
        scales = np.asarray(doc["scales"], dtype=float)
        n = scales.shape[0]
        W = np.asarray(doc["whitener"], dtype=float).reshape(n, n)
        nodes = tuple(doc["nodes"]) if doc.get("nodes") is not None else None
        return cls(scales, W, int(doc["window_len"]), float(doc["empirical_bound"]), nodes)

    @classmethod
    def from_json(cls, text: str) -> "StandardizationStats":
        return cls.from_dict(json.loads(text))


def _sym_power(M: np.ndarray, power: float) -> np.ndarray:
    lam, V = np.linalg.eigh(M)
    return (V * lam**power) @ V.T


def _as_array(panel) -> np.ndarray:
    return np.asarray(getattr(panel, "values", panel), dtype=float)


def fit_standardizer(history_obs, history_feat) -> StandardizationStats:
    """Estimate scales and the whitening matrix on a ``(T0, n)`` history.

    Both inputs are aligned panels (arrays or DataFrames with node columns).
    """
    Y, X = _as_array(history_obs), _as_array(history_feat)
    if Y.shape != X.shape or Y.ndim != 2:
        raise DimensionMismatch(f"observation panel {Y.shape} vs feature panel {X.shape}")
    T0, n = X.shape
    if T0 < n:
        raise WindowTooShort(f"window of {T0} instants is shorter than {n} nodes")
    gram = X.T @ X / T0
    lam, V = np.linalg.eigh(gram)
    if lam[0] <= EIG_FLOOR * max(lam[-1], 0.0) or lam[-1] <= 0:
        raise SingularGram(f"feature Gram eigenvalues span [{lam[0]:.3g}, {lam[-1]:.3g}]")
    whitener = (V / np.sqrt(lam)) @ V.T
    whitener = 0.5 * (whitener + whitener.T)
    scales = np.maximum(np.abs(Y - X).max(axis=0), SCALE_FLOOR)
    bound = max(np.abs((Y - X) / scales).max(), np.abs(X @ whitener).max())
    nodes = tuple(map(str, history_feat.columns)) if hasattr(history_feat, "columns") else None
    return StandardizationStats(scales, whitener, T0, float(bound), nodes)


def transform(stats: StandardizationStats, y, x) -> tuple[np.ndarray, np.ndarray]:
    """Standardize observations and whiten features (single instant or panel)."""
    y, x = np.asarray(y, dtype=float), np.asarray(x, dtype=float)
    if x.shape[-1] != stats.dim or (y.size and y.shape != x.shape):
        raise DimensionMismatch(f"expected {stats.dim} nodes, got y{y.shape} x{x.shape}")
    return (y - x) / stats.scales, x @ stats.whitener


def transform_features(stats: StandardizationStats, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != stats.dim:
        raise DimensionMismatch(f"expected {stats.dim} nodes, got {x.shape}")
    return x @ stats.whitener


def inverse_transform(stats: StandardizationStats, node, y_bar: float, x_t) -> float:
    """Map a standardized prediction at ``node`` back to the original scale."""
    j = stats.node_index(node)
    return float(stats.scales[j] * y_bar + np.asarray(x_t, dtype=float)[j])


def inverse_transform_all(stats: StandardizationStats, y_bar, x) -> np.ndarray:
    """Vectorized ``S * ybar + x`` for all nodes (instant or panel)."""
    return stats.scales * np.asarray(y_bar, dtype=float) + np.asarray(x, dtype=float)


def real_weights(stats: StandardizationStats, node, u_std) -> np.ndarray:
    """Original-space weights ``delta + S * E u`` matching standardized weights ``u_std``."""
    j = stats.node_index(node)
    u = stats.scales[j] * (stats.whitener @ np.asarray(u_std, dtype=float))
    u[j] += 1.0
    return u


def standardized_weights(stats: StandardizationStats, node, u) -> np.ndarray:
    """Inverse of :func:`real_weights`."""
    j = stats.node_index(node)
    d = np.asarray(u, dtype=float).copy()
    d[j] -= 1.0
    return np.linalg.solve(stats.whitener, d) / stats.scales[j]
