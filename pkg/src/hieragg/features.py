"""Benchmark forecasts per node: auto-regressive model, regression forest, and
exogenous-variable preparation."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DegenerateDesign,
    EmptyNode,
    EmptyTraining,
    GapInTimestamps,
    InsufficientHistory,
    MissingNode,
    UnknownNode,
    DataError,
)

STEPS_PER_DAY = 48
LAG_DAY = 48
LAG_WEEK = 7 * 48
FOREST_COLUMNS = ("lag336", "lag48", "temp", "temp_smooth", "visibility", "humidity", "year_pos", "dow", "half_hour")
METEO_VARS = ("temp", "visibility", "humidity")


# -- exogenous variables -------------------------------------------------------------


def smooth_temperature(temp, a: float = 0.999) -> np.ndarray:
    """Exponential smoothing started at the first raw value."""
    tau = np.asarray(temp, dtype=float)
    if tau.size == 0:
        raise DataError("empty temperature series")
    out = np.empty_like(tau)
    out[0] = tau[0]
    for t in range(1, tau.size):
        out[t] = a * out[t - 1] + (1.0 - a) * tau[t]
    return out


def calendar_frame(index: pd.DatetimeIndex) -> pd.DataFrame:
    """Day of week (1 = Monday), half-hour of day 1..48 and position in the year."""
    idx = pd.DatetimeIndex(index)
    year_start = pd.to_datetime(idx.year.astype(str) + "-01-01").tz_localize(idx.tz)
    year_end = pd.to_datetime((idx.year + 1).astype(str) + "-01-01").tz_localize(idx.tz)
    last = (year_end - year_start) - pd.Timedelta(minutes=30)
    rho = (idx - year_start) / last
    return pd.DataFrame(
        {
            "dow": idx.dayofweek + 1,
            "half_hour": idx.hour * 2 + idx.minute // 30 + 1,
            "year_pos": np.asarray(rho, dtype=float),
        },
        index=index,
    )


def region_weights(members, household_region: dict, household_mean: dict) -> dict:
    """Share of each region in a node's historical consumption."""
    members = list(members)
    if not members:
        raise EmptyNode("node has no households")
    total = float(sum(household_mean[i] for i in members))
    if not total > 0:
        raise EmptyNode("node has zero historical consumption")
    w: dict = {}
    for i in members:
        reg = household_region[i]
        w[reg] = w.get(reg, 0.0) + household_mean[i] / total
    return w


def mix_regional_meteo(members, regional: dict, household_region: dict, household_mean: dict) -> pd.DataFrame:
    """Convex combination of regional meteo frames weighted by consumption share.

    ``regional`` maps region -> DataFrame with the columns in ``METEO_VARS``.
    """
    w = region_weights(members, household_region, household_mean)
    mixed = None
    for reg, share in sorted(w.items()):
        part = regional[reg][list(METEO_VARS)] * share
        mixed = part if mixed is None else mixed + part
    return mixed


# -- auto-regressive model -----------------------------------------------------------


@dataclass(frozen=True)
class ArModel:
    a1: float
    a7: float

    def to_dict(self):
        return {"a1": self.a1, "a7": self.a7}

    @classmethod
    def from_dict(cls, doc):
        return cls(float(doc["a1"]), float(doc["a7"]))


def ar_design(y):
    y = np.asarray(y, dtype=float)
    X = np.column_stack([y[LAG_WEEK - LAG_DAY : -LAG_DAY], y[: -LAG_WEEK]])
    return X, y[LAG_WEEK:]


def ar_fit(y, cond_limit: float = 1e10) -> ArModel:
    """Least squares of ``y_t`` on ``(y_{t-48}, y_{t-336})`` without intercept."""
    y = np.asarray(y, dtype=float)
    if y.size < LAG_WEEK + 2:
        raise InsufficientHistory(f"need at least {LAG_WEEK + 2} points, got {y.size}")
    X, target = ar_design(y)
    G = X.T @ X
    if np.linalg.matrix_rank(X) < 2 or np.linalg.cond(G) > cond_limit:
        raise DegenerateDesign("lagged regressors are collinear")
    coef = np.linalg.solve(G, X.T @ target)
    return ArModel(float(coef[0]), float(coef[1]))


def ar_predict(model: ArModel, lag48, lag336):
    return model.a1 * np.asarray(lag48, dtype=float) + model.a7 * np.asarray(lag336, dtype=float)


def ar_forecast_series(model: ArModel, y) -> np.ndarray:
    """Forecasts for every instant with both lags available (NaN before)."""
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, np.nan)
    out[LAG_WEEK:] = ar_predict(model, y[LAG_WEEK - LAG_DAY : -LAG_DAY], y[: -LAG_WEEK])
    return out


# -- regression forest ---------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    sample_size: int | None = None
    min_node_size: int = 5
    n_vars: int | None = None
    seed: int = 0
    bootstrap: bool = True
    threads: int = 1


def best_split(X, y, variables):
    """Minimize ``(SSE_left + SSE_right) / n`` over variables and midpoint thresholds.

    Returns ``(criterion, variable, threshold)`` or ``None`` when no variable
    takes two distinct values. Points go left when ``value < threshold``.
    """
    n = y.shape[0]
    best = None
    for v in variables:
        order = np.argsort(X[:, v], kind="stable")
        xs, ys = X[order, v], y[order]
        cut = np.flatnonzero(xs[1:] > xs[:-1])  # split after position cut
        if cut.size == 0:
            continue
        c1, c2 = np.cumsum(ys), np.cumsum(ys * ys)
        nl = cut + 1.0
        nr = n - nl
        sl, sr = c1[cut], c1[-1] - c1[cut]
        ql, qr = c2[cut], c2[-1] - c2[cut]
        crit = ((ql - sl * sl / nl) + (qr - sr * sr / nr)) / n
        j = int(np.argmin(crit))
        if best is None or crit[j] < best[0]:
            best = (float(crit[j]), int(v), 0.5 * (xs[cut[j]] + xs[cut[j] + 1]))
    return best


class RegressionTree:
    """Binary tree stored as flat arrays; ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.value = np.asarray(value, dtype=float)

    @classmethod
    def grow(cls, X, y, min_node_size: int, n_vars: int, rng) -> "RegressionTree":
        feature, threshold, left, right, value = [], [], [], [], []
        stack = [(np.arange(y.shape[0]), None, False)]
        while stack:
            idx, parent, is_right = stack.pop()
            node = len(value)
            if parent is not None:
                (right if is_right else left)[parent] = node
            ys = y[idx]
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            value.append(float(ys.mean()))
            if idx.size <= min_node_size or np.ptp(ys) == 0:
                continue
            variables = np.sort(rng.choice(X.shape[1], size=n_vars, replace=False))
            split = best_split(X[idx], ys, variables)
            if split is None:
                continue
            _, v, s = split
            feature[node], threshold[node] = v, s
            go_left = X[idx, v] < s
            stack.append((idx[~go_left], node, True))
            stack.append((idx[go_left], node, False))
        return cls(feature, threshold, left, right, value)

    def splits(self):
        """``(node, variable, threshold)`` for each internal node."""
        return [(i, int(f), float(self.threshold[i])) for i, f in enumerate(self.feature) if f >= 0]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] < self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": [None if np.isnan(t) else float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        thr = [np.nan if t is None else t for t in doc["threshold"]]
        return cls(doc["feature"], thr, doc["left"], doc["right"], doc["value"])


@dataclass
class RegressionForest:
    trees: list
    config: ForestConfig
    columns: tuple = field(default_factory=tuple)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(getattr(X, "values", X), dtype=float)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_json(self) -> str:
        doc = {
            "config": self.config.__dict__,
            "columns": list(self.columns),
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text) -> "RegressionForest":
        doc = json.loads(text)
        return cls([RegressionTree.from_dict(t) for t in doc["trees"]], ForestConfig(**doc["config"]), tuple(doc["columns"]))


def forest_fit(X, y, config: ForestConfig = ForestConfig()) -> RegressionForest:
    columns = tuple(map(str, getattr(X, "columns", ())))
    X = np.asarray(getattr(X, "values", X), dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptyTraining("no training rows")
    n_obs, p = X.shape
    size = config.sample_size or n_obs
    n_vars = config.n_vars or int(np.ceil(2 * p / 3))
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)

    def grow(ss):
        rng = np.random.default_rng(ss)
        rows = rng.integers(n_obs, size=size) if config.bootstrap else np.arange(n_obs)
        return RegressionTree.grow(X[rows], y[rows], config.min_node_size, n_vars, rng)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            trees = list(pool.map(grow, seeds))
    else:
        trees = [grow(s) for s in seeds]
    return RegressionForest(trees, config, columns)


def forest_table(y: pd.Series, exog: pd.DataFrame) -> pd.DataFrame:
    """Forest input records for one node, aligned on ``y``'s index; rows lacking lags dropped."""
    df = pd.DataFrame(index=y.index)
    df["lag336"] = y.shift(LAG_WEEK)
    df["lag48"] = y.shift(LAG_DAY)
    for col in FOREST_COLUMNS[2:]:
        df[col] = exog[col]
    return df.iloc[LAG_WEEK:]


# -- external features ---------------------------------------------------------------


def ingest_external_features(path, nodes, freq: str = "30min") -> pd.DataFrame:
    """Read a long ``timestamp,node_id,value`` CSV into a dense panel with node columns."""
    df = pd.read_csv(path, dtype={"node_id": str})
    df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True)
    nodes = [str(n) for n in nodes]
    unknown = sorted(set(df["node_id"]) - set(nodes))
    if unknown:
        raise UnknownNode(f"unknown nodes in feature file: {unknown}")
    missing = [n for n in nodes if n not in set(df["node_id"])]
    if missing:
        raise MissingNode(f"feature file lacks node(s) {missing}")
    if df.duplicated(["timestamp", "node_id"]).any():
        raise GapInTimestamps("duplicated (timestamp, node) rows")
    panel = df.pivot(index="timestamp", columns="node_id", values="value").sort_index()
    full = pd.date_range(panel.index[0], panel.index[-1], freq=freq)
    if len(full) != len(panel) or panel.isna().any().any():
        raise GapInTimestamps("feature file is not complete over its half-hourly range")
    return panel[nodes]


def write_long_panel(panel: pd.DataFrame, path, value_name="value", extra: dict | None = None):
    long = panel.rename_axis("timestamp").reset_index().melt(id_vars="timestamp", var_name="node_id", value_name=value_name)
    for key, val in (extra or {}).items():
        long[key] = val
    long["timestamp"] = pd.DatetimeIndex(long["timestamp"]).strftime("%Y-%m-%dT%H:%M:%SZ")
    long.to_csv(path, index=False)
