"""Error and regret metrics for forecast strategies on a hierarchy."""
from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import MisalignedPanels, NoLeaves, SingularRunGram
from .hierarchy import HierarchySpec, Projector

log = logging.getLogger(__name__)

STRATEGIES = ("benchmark", "projection", "aggregation", "aggregation+projection")


def _panel(a) -> np.ndarray:
    return np.asarray(getattr(a, "values", a), dtype=float)


def _aligned(y, f):
    Y, F = _panel(y), _panel(f)
    if Y.shape != F.shape:
        raise MisalignedPanels(f"observation panel {Y.shape} vs forecast panel {F.shape}")
    if Y.ndim == 1:
        Y, F = Y[:, None], F[:, None]
    return Y, F


def strategy_errors(y, forecast, nodes=None) -> tuple[float, float]:
    """``(E_T, sigma_T)`` over the node subset ``nodes`` (column indices or labels).

    ``E_T = sum_g mean_t eps`` and ``sigma_T^2 = mean_t sum_g (eps - E_T)^2``
    where ``eps`` is the squared error of each (instant, node).
    """
    if nodes is not None and hasattr(y, "columns"):
        y, forecast = y[list(nodes)], forecast[list(nodes)]
        nodes = None
    Y, F = _aligned(y, forecast)
    if nodes is not None:
        Y, F = Y[:, list(nodes)], F[:, list(nodes)]
    eps = (Y - F) ** 2
    T = eps.shape[0]
    E = float(eps.mean(axis=0).sum())
    sigma2 = float(((eps - E) ** 2).sum() / T)
    return E, float(np.sqrt(sigma2))


@dataclass(frozen=True)
class Comparator:
    matrix: np.ndarray  # forecasts are X @ matrix.T
    loss: float


def comparator_loss(y, x, matrix) -> float:
    """Average squared error per (instant, node) of the linear forecaster ``matrix``."""
    Y, X = _aligned(y, x)
    R = Y - X @ np.asarray(matrix).T
    return float((R * R).mean())


def constrained_comparator(y, x, projector: Projector | None = None, cond_limit: float = 1e12) -> Comparator:
    """Best fixed linear forecaster whose outputs satisfy the constraints.

    The unconstrained least-squares map ``(sum y x^T)(sum x x^T)^{-1}`` is
    projected on the left by the projector.
    """
    Y, X = _aligned(y, x)
    G = X.T @ X
    if np.linalg.cond(G) > cond_limit:
        raise SingularRunGram("feature Gram over the run is singular")
    ols = np.linalg.solve(G, X.T @ Y).T
    M = ols if projector is None else projector.matrix @ ols
    return Comparator(M, comparator_loss(Y, X, M))


def regret_trace(y, forecast, x, matrix) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative regret against ``matrix`` (total series and per-node panel)."""
    Y, F = _aligned(y, forecast)
    _, X = _aligned(y, x)
    inst = (Y - F) ** 2 - (Y - X @ np.asarray(matrix).T) ** 2
    per_node = np.cumsum(inst, axis=0)
    return per_node.sum(axis=1), per_node


def bottom_up(features: pd.DataFrame, spec: HierarchySpec) -> pd.Series:
    """Root forecast as the sum of the leaf features."""
    leaves = list(spec.leaves)
    if not leaves:
        raise NoLeaves("hierarchy has no leaves")
    return features[leaves].sum(axis=1).rename(spec.root)


@dataclass
class EvaluationReport:
    rows: list = field(default_factory=list)
    regret: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, strategy: str, nodeset: str, E: float, sigma: float, T: int, algorithm: str = ""):
        self.rows.append(
            {
                "strategy": strategy,
                "algorithm": algorithm,
                "nodeset": nodeset,
                "error": round(E, 10),
                "halfwidth": round(sigma / np.sqrt(T), 10),
                "T": int(T),
            }
        )

    def error(self, strategy: str, nodeset: str = "all", algorithm: str | None = None) -> float:
        for r in self.rows:
            if r["strategy"] == strategy and r["nodeset"] == nodeset and (algorithm is None or r["algorithm"] == algorithm):
                return r["error"]
        raise KeyError((strategy, nodeset))

    def to_dict(self) -> dict:
        return {"rows": self.rows, "regret": self.regret, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text) -> "EvaluationReport":
        doc = json.loads(text)
        return cls(doc["rows"], doc["regret"], doc["metadata"])

    def to_frame(self) -> pd.DataFrame:
        """Strategy x node-set table of ``error +- halfwidth``."""
        df = pd.DataFrame(self.rows)
        if df.empty:
            return df
        df["cell"] = df["error"].map("{:.3f}".format) + " +- " + df["halfwidth"].map("{:.3f}".format)
        return df.pivot_table(index=["algorithm", "strategy"], columns="nodeset", values="cell", aggfunc="first")

    def to_csv(self) -> str:
        buf = io.StringIO()
        pd.DataFrame(self.rows).to_csv(buf, index=False)
        return buf.getvalue()


def evaluate_strategies(y: pd.DataFrame, forecasts: dict, spec: HierarchySpec, x=None, projector=None,
                        algorithm: str = "", report: EvaluationReport | None = None) -> EvaluationReport:
    """Score every strategy on the node sets all / leaves / root (plus bottom-up at the root).

    ``forecasts`` maps strategy name -> panel aligned with ``y``. When ``x`` is
    given the regret against the constrained comparator is recorded too.
    """
    report = report or EvaluationReport()
    for f in forecasts.values():
        if f.shape != y.shape:
            raise MisalignedPanels("forecast panels are not aligned with observations")
    sets = {"all": list(spec.nodes), "leaves": list(spec.leaves), "root": [spec.root]}
    T = y.shape[0]
    for name, f in forecasts.items():
        for set_name, cols in sets.items():
            E, s = strategy_errors(y[cols], f[cols])
            report.add(name, set_name, E, s, T, algorithm)
    if "benchmark" in forecasts:
        bu = bottom_up(forecasts["benchmark"], spec)
        E, s = strategy_errors(y[spec.root], bu)
        report.add("bottom-up", "root", E, s, T, algorithm)
    if x is not None:
        try:
            comp = constrained_comparator(y, x, projector)
        except SingularRunGram as exc:
            log.warning("regret not reported: %s", exc)
            report.metadata["regret_unavailable"] = str(exc)
            comp = None
        for name, f in (forecasts.items() if comp is not None else ()):
            total, _ = regret_trace(y, f, x, comp.matrix)
            report.regret[f"{algorithm}:{name}" if algorithm else name] = round(float(total[-1]), 8)
    report.metadata.setdefault("hierarchy_hash", hashlib.sha256(spec.to_json().encode()).hexdigest())
    return report
