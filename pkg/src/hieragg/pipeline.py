"""End-to-end runs: synthetic fleets, configuration and the forecasting loop.

A run clusters households, sums them into node series, builds one benchmark
forecast per node, standardizes, aggregates online with delayed feedback and a
hyper-parameter grid, projects every forecast vector onto the constraint
subspace and scores the four strategies on the evaluation window.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import aggregate, cluster, features, hierarchy, standardize
from .errors import ConfigError, DataError, HieraggError, GapInTimestamps, InvalidDateRange, StageError, UnknownColumn
from .evaluate import EvaluationReport, evaluate_strategies

log = logging.getLogger(__name__)

FREQ = "30min"


# -- synthetic fleet -----------------------------------------------------------------


def _bump(hours, center, width):
    d = np.minimum(np.abs(hours - center), 24 - np.abs(hours - center))
    return np.exp(-0.5 * (d / width) ** 2)


def archetype_shapes(n: int) -> np.ndarray:
    """``(n, 48)`` daily load shapes with distinct peak structure."""
    h = np.arange(48) / 2.0
    base = [
        0.3 + 1.5 * _bump(h, 19.0, 1.5),  # evening peak
        0.2 + 1.4 / (1 + np.exp(2 * (h - 6.5))),  # night heating
        0.4 + 1.0 * _bump(h, 13.0, 2.5),  # daytime
        0.3 + 1.5 * _bump(h, 7.5, 1.2),  # morning peak
        0.5 + 0.8 * _bump(h, 10.0, 1.5) + 0.8 * _bump(h, 22.0, 1.5),
        0.6 + 0.9 * _bump(h, 16.0, 2.0),
    ]
    out = []
    for i in range(n):
        shape = base[i % len(base)]
        if i >= len(base):  # extra archetypes: shifted copies
            shape = np.roll(shape, 3 * (i // len(base)))
        out.append(shape / shape.mean())
    return np.array(out)


@dataclass(frozen=True)
class SyntheticFleetSpec:
    n_households: int = 200
    n_regions: int = 3
    n_archetypes: int = 4
    start: str = "2010-01-01"
    days: int = 181
    mean_load: float = 0.5
    scale_spread: float = 0.4
    weekend_factor: tuple = (1.15, 1.0, 1.25, 1.1)
    temp_sensitivity: tuple = (0.25, 0.5, 0.15, 0.35)
    comfort_temp: float = 16.0
    noise: float = 0.4
    day_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_households", "n_regions", "n_archetypes", "days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.noise < 0 or self.day_noise < 0:
            raise ConfigError("noise must be non-negative")

    def index(self) -> pd.DatetimeIndex:
        try:
            start = pd.Timestamp(self.start, tz="UTC")
        except (ValueError, TypeError) as exc:
            raise InvalidDateRange(f"bad start date {self.start!r}") from exc
        return pd.date_range(start, periods=self.days * 48, freq=FREQ)


@dataclass
class Fleet:
    consumption: pd.DataFrame  # instants x households
    meteo: dict  # region -> DataFrame(temp, visibility, humidity)
    attributes: pd.DataFrame
    root: pd.Series

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        c = self.consumption.copy()
        c.index = c.index.strftime("%Y-%m-%dT%H:%M:%SZ")
        c.rename_axis("timestamp").to_csv(out / "households.csv")
        frames = []
        for reg, df in self.meteo.items():
            d = df.copy()
            d.insert(0, "region", reg)
            frames.append(d)
        m = pd.concat(frames)
        m.index = m.index.strftime("%Y-%m-%dT%H:%M:%SZ")
        m.rename_axis("timestamp").to_csv(out / "meteo.csv")
        self.attributes.to_csv(out / "attributes.csv", index=False)
        r = self.root.copy()
        r.index = r.index.strftime("%Y-%m-%dT%H:%M:%SZ")
        r.rename_axis("timestamp").rename("value").to_csv(out / "root.csv")

    @classmethod
    def read(cls, in_dir) -> "Fleet":
        d = Path(in_dir)
        c = pd.read_csv(d / "households.csv", index_col="timestamp")
        c.index = pd.to_datetime(c.index, utc=True)
        m = pd.read_csv(d / "meteo.csv", index_col="timestamp")
        m.index = pd.to_datetime(m.index, utc=True)
        meteo = {str(reg): g.drop(columns="region") for reg, g in m.groupby("region", sort=True)}
        attrs = pd.read_csv(d / "attributes.csv", dtype=str)
        for name, frame in (("households.csv", c), ("meteo.csv", m.loc[m.region == m.region.iloc[0]])):
            step = np.diff(frame.index.asi8)
            if len(step) and (step != pd.Timedelta("30min").value).any():
                raise GapInTimestamps(f"{name} is not on a regular half-hourly grid")
        return cls(c, meteo, attrs, c.sum(axis=1).rename("total"))


def _regional_meteo(spec: SyntheticFleetSpec, idx: pd.DatetimeIndex, rng) -> dict:
    T = len(idx)
    day_of_year = (idx.dayofyear.values - 1) + (idx.hour.values * 2 + idx.minute.values // 30) / 48.0
    hour = idx.hour.values + idx.minute.values / 60.0
    season = 10.0 - 7.0 * np.cos(2 * np.pi * (day_of_year - 15) / 365.25)
    daily = 3.0 * np.cos(2 * np.pi * (hour - 15) / 24.0)
    common = np.empty(T)
    common[0] = 0.0
    shocks = rng.normal(0, 0.15, T)
    for t in range(1, T):
        common[t] = 0.998 * common[t - 1] + shocks[t]
    out = {}
    for r in range(spec.n_regions):
        local = np.empty(T)
        local[0] = 0.0
        ls = rng.normal(0, 0.08, T)
        for t in range(1, T):
            local[t] = 0.995 * local[t - 1] + ls[t]
        temp = season + daily + common + local - 1.5 * r
        humidity = np.clip(75 - 1.5 * (temp - 10) + rng.normal(0, 5, T), 0, 100)
        visibility = np.clip(7 + 0.1 * (temp - 10) + rng.normal(0, 1.5, T), 0, 10)
        out[f"R{r + 1}"] = pd.DataFrame({"temp": temp, "visibility": visibility, "humidity": humidity}, index=idx)
    return out


def generate_fleet(spec: SyntheticFleetSpec = SyntheticFleetSpec()) -> Fleet:
    """Half-hourly household loads: scale x shape x temperature response x noise.

    Noise is multiplicative lognormal with unit mean; ``noise=0`` gives
    deterministic series proportional within an archetype and region.
    """
    rng = np.random.default_rng(spec.seed)
    idx = spec.index()
    meteo = _regional_meteo(spec, idx, rng)
    n = spec.n_households
    ids = [f"H{i:04d}" for i in range(n)]
    region = rng.integers(spec.n_regions, size=n)
    arche = rng.integers(spec.n_archetypes, size=n)
    scale = spec.mean_load * np.exp(rng.normal(-0.5 * spec.scale_spread**2, spec.scale_spread, n))
    shapes = archetype_shapes(spec.n_archetypes)
    hh = idx.hour.values * 2 + idx.minute.values // 30
    weekend = idx.dayofweek.values >= 5
    wf = np.array([spec.weekend_factor[a % len(spec.weekend_factor)] for a in range(spec.n_archetypes)])
    sens = np.array([spec.temp_sensitivity[a % len(spec.temp_sensitivity)] for a in range(spec.n_archetypes)])

    region_names = sorted(meteo)
    heat = np.column_stack([np.maximum(spec.comfort_temp - meteo[r]["temp"].values, 0.0) / 10.0 for r in region_names])
    Y = np.empty((len(idx), n))
    day = (idx - idx[0]).days.values
    n_days = day.max() + 1
    for i in range(n):
        a = arche[i]
        profile = shapes[a][hh] * np.where(weekend, wf[a], 1.0)
        response = 1.0 + sens[a] * heat[:, region[i]]
        eps = np.exp(rng.normal(-0.5 * spec.noise**2, spec.noise, len(idx))) if spec.noise > 0 else 1.0
        if spec.day_noise > 0:  # occupancy level of each day
            eps = eps * np.exp(rng.normal(-0.5 * spec.day_noise**2, spec.day_noise, n_days))[day]
        Y[:, i] = scale[i] * profile * response * eps
    consumption = pd.DataFrame(Y, index=idx, columns=ids)
    acorn = np.array(list("ABCDE"))[(arche + rng.integers(0, 2, n)) % 5]
    tariff = np.where(rng.random(n) < 0.5, "Standard", "Economy7")
    attributes = pd.DataFrame(
        {
            "household_id": ids,
            "region": [region_names[r] for r in region],
            "archetype": [f"P{a + 1}" for a in arche],
            "acorn": acorn,
            "tariff": tariff,
        }
    )
    return Fleet(consumption, meteo, attributes, consumption.sum(axis=1).rename("total"))


# -- configuration -------------------------------------------------------------------


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: {"synthetic": {}})
    partitions: list = field(default_factory=lambda: [
        {"method": "attribute", "column": "region", "min_size": 20},
        {"method": "nmf", "k": 4, "r": 10},
    ])
    features: dict = field(default_factory=lambda: {"method": "ar"})
    aggregation: dict = field(default_factory=lambda: {
        "algorithms": ["mlpol"],
        "grid": list(aggregate.default_grid()),
        "delay": 48,
        "selection_lag": 48,
        "per_node": False,
    })
    dates: dict = field(default_factory=lambda: {"train_days": 120, "init_days": 10})
    seed: int = 0
    threads: int = 1
    out: str | None = None

    def validate(self):
        agg = self.aggregation
        for alg in agg.get("algorithms", []):
            if alg not in aggregate.ALGORITHMS:
                raise ConfigError(f"unknown aggregation algorithm {alg!r}")
        if not agg.get("algorithms"):
            raise ConfigError("no aggregation algorithm configured")
        if not agg.get("grid"):
            raise aggregate.EmptyGrid("hyper-parameter grid is empty")
        if agg.get("delay", 48) < 0:
            raise ConfigError("delay must be non-negative")
        if not 1 <= len(self.partitions) <= 2:
            raise ConfigError("one or two partitions are supported")
        if self.features.get("method") not in ("ar", "forest", "external"):
            raise ConfigError(f"unknown feature method {self.features.get('method')!r}")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("out", None)
        doc.pop("threads", None)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        base = cls()
        known = set(asdict(base))
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        merged = asdict(base)
        for key, val in doc.items():
            if isinstance(merged.get(key), dict) and isinstance(val, dict) and key != "data":
                merged[key] = {**merged[key], **val}
            else:
                merged[key] = val
        return cls(**merged).validate()

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def stage_seeds(seed: int, n: int = 4) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class DateSplit:
    train: slice
    init: slice
    eval: slice

    @classmethod
    def from_config(cls, dates: dict, index: pd.DatetimeIndex) -> "DateSplit":
        T = len(index)
        if "train_end" in dates:
            pos = lambda key: int(index.searchsorted(pd.Timestamp(dates[key], tz="UTC")))  # noqa: E731
            tr, ini, ev = pos("train_end"), pos("init_end"), pos(dates.get("eval_end", str(index[-1] + pd.Timedelta(FREQ))))
        else:
            tr = 48 * int(dates.get("train_days", 120))
            ini = tr + 48 * int(dates.get("init_days", 10))
            ev = T
        if not 0 < tr < ini < ev <= T:
            raise InvalidDateRange(f"need train < init < eval inside {T} instants, got {tr}, {ini}, {ev}")
        return cls(slice(0, tr), slice(tr, ini), slice(ini, ev))


# -- stages --------------------------------------------------------------------------


def _stage(name):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except HieraggError as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def load_fleet(cfg: RunConfig) -> Fleet:
    data = cfg.data
    if "synthetic" in data:
        doc = dict(data["synthetic"] or {})
        doc.setdefault("seed", cfg.seed)
        for key in ("weekend_factor", "temp_sensitivity"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return generate_fleet(SyntheticFleetSpec(**doc))
    if "dir" in data:
        return Fleet.read(data["dir"])
    raise ConfigError("data section needs 'synthetic' or 'dir'")


@_stage("cluster")
def build_partitions(cfg: RunConfig, fleet: Fleet, train: slice, seed: int) -> list:
    attrs = fleet.attributes.set_index("household_id", drop=False)
    ids = list(fleet.consumption.columns)
    parts = []
    for j, p in enumerate(cfg.partitions):
        method = p.get("method")
        if method == "attribute":
            col = p["column"]
            if col not in attrs.columns:
                raise UnknownColumn(f"no attribute column {col!r}")
            parts.append(cluster.attribute_clustering(attrs.loc[ids].reset_index(drop=True), col, p.get("min_size", 20)))
        elif method == "nmf":
            hist = fleet.consumption.iloc[train].T
            parts.append(cluster.nmf_clustering(hist, p.get("k", 4), p.get("r", 10), seed + j, ids=ids, name=p.get("name", "nmf")))
        elif method == "random":
            parts.append(cluster.random_clustering(ids, p.get("k", 4), seed + j, name=p.get("name", "rand")))
        else:
            raise ConfigError(f"unknown clustering method {method!r}")
    # households dropped by any partition are excluded everywhere
    keep = set(ids)
    for part in parts:
        keep &= set(part.assignment)
    parts = [_restrict(part, keep) for part in parts]
    return parts


def _restrict(part: cluster.Clustering, keep: set) -> cluster.Clustering:
    if set(part.assignment) == keep:
        return part
    ids = [i for i in part.assignment if i in keep]
    raw = [part.labels[part.assignment[i] - 1] if part.labels else part.assignment[i] for i in ids]
    return cluster.Clustering.from_labels(ids, raw, part.provenance, part.name, part.dropped)


def build_hierarchy(parts) -> hierarchy.HierarchySpec:
    if len(parts) == 1:
        return hierarchy.enumerate_two_level(parts[0])
    return hierarchy.enumerate_crossed_nodes(parts[0], parts[1])


def node_series(consumption: pd.DataFrame, spec: hierarchy.HierarchySpec) -> pd.DataFrame:
    """Sum the member households of every node."""
    cols = {}
    for node in spec.nodes:
        members = sorted(spec.members[node])
        cols[node] = consumption[members].sum(axis=1)
    return pd.DataFrame(cols, index=consumption.index)[list(spec.nodes)]


@_stage("features")
def build_features(cfg: RunConfig, fleet: Fleet, Y: pd.DataFrame, spec, split: DateSplit, seed: int):
    method = cfg.features.get("method", "ar")
    if method == "external":
        return features.ingest_external_features(cfg.features["path"], spec.nodes).reindex(Y.index), {}
    train_end = split.train.stop
    models, cols = {}, {}
    if method == "ar":
        for node in spec.nodes:
            m = features.ar_fit(Y[node].values[:train_end])
            models[node] = m.to_dict()
            cols[node] = features.ar_forecast_series(m, Y[node].values)
        return pd.DataFrame(cols, index=Y.index), models
    # forest
    exog = node_exogenous(fleet, spec, Y.index, slice(0, train_end), cfg.features.get("smoothing", 0.999))
    fc = features.ForestConfig(
        n_trees=cfg.features.get("n_trees", 50),
        min_node_size=cfg.features.get("min_node_size", 5),
        seed=seed,
        threads=cfg.threads,
    )
    for node in spec.nodes:
        table = features.forest_table(Y[node], exog[node])
        n_train = train_end - features.LAG_WEEK
        forest = features.forest_fit(table.iloc[:n_train], Y[node].iloc[features.LAG_WEEK:train_end], fc)
        out = np.full(len(Y), np.nan)
        out[features.LAG_WEEK:] = forest.predict(table)
        cols[node] = out
        models[node] = {"n_trees": len(forest.trees)}
    return pd.DataFrame(cols, index=Y.index), models


def node_exogenous(fleet: Fleet, spec, index, train: slice, a: float) -> dict:
    attrs = fleet.attributes.set_index("household_id")
    hh_region = attrs["region"].to_dict()
    hh_mean = fleet.consumption.iloc[train].mean().to_dict()
    cal = features.calendar_frame(index)
    out = {}
    for node in spec.nodes:
        mixed = features.mix_regional_meteo(spec.members[node], fleet.meteo, hh_region, hh_mean).reindex(index)
        frame = mixed.copy()
        frame["temp_smooth"] = features.smooth_temperature(frame["temp"].values, a)
        out[node] = frame.join(cal)
    return out


@dataclass
class AggregationResult:
    aggregation: np.ndarray  # real-space aggregated forecasts, (T, n)
    projected: np.ndarray
    selected: np.ndarray  # selected grid index per instant


def run_aggregation(Y, X, stats: standardize.StandardizationStats, projector: hierarchy.Projector, algorithm: str,
                    grid, delay: int = 48, selection_lag: int = 48, per_node: bool = False) -> AggregationResult:
    """Online aggregation over a grid of banks with per-instant projection.

    ``Y`` and ``X`` are real-space ``(T, n)`` arrays covering the online period.
    """
    Y, X = np.asarray(Y, dtype=float), np.asarray(X, dtype=float)
    T, n = X.shape
    Ys, Xs = standardize.transform(stats, Y, X)
    C = stats.empirical_bound
    banks = [aggregate.DelayedLearner(aggregate.make_learner(algorithm, n, beta, n_targets=n, C=C), delay) for beta in grid]
    selector = aggregate.OnlineGridSelector(grid, lag=selection_lag, per_node=per_node)
    agg = np.empty((T, n))
    selected = np.empty((T,) if not per_node else (T, n), dtype=int)
    preds = np.empty((len(grid), n))
    for t in range(T):
        for g, bank in enumerate(banks):
            preds[g] = bank.predict(Xs[t])
        real = stats.scales * preds + X[t]
        idx = selector.select(t + 1)
        agg[t] = real[idx] if not per_node else real[idx, np.arange(n)]
        selected[t] = idx
        for bank in banks:
            bank.update(Ys[t])
        selector.record((real - Y[t]) ** 2)
    projected = projector.project(agg)
    return AggregationResult(agg, projected, selected)


def run_pipeline(cfg: RunConfig) -> tuple[EvaluationReport, dict]:
    """Execute every stage; returns the report and the forecast panels per algorithm."""
    cfg.validate()
    s_cluster, s_feat = stage_seeds(cfg.seed, 2)
    try:
        fleet = load_fleet(cfg)
    except HieraggError as exc:
        raise StageError("data", exc) from exc
    split = DateSplit.from_config(cfg.dates, fleet.consumption.index)
    parts = build_partitions(cfg, fleet, split.train, s_cluster)
    spec = _stage("hierarchy")(build_hierarchy)(parts)
    K = hierarchy.build_constraint_matrix(spec)
    P = hierarchy.build_projector(K)
    Y = node_series(fleet.consumption, spec)
    X, models = build_features(cfg, fleet, Y, spec, split, s_feat)

    lag_start = features.LAG_WEEK if cfg.features.get("method", "ar") != "external" else 0
    train = slice(lag_start, split.train.stop)
    try:
        stats = standardize.fit_standardizer(Y.iloc[train], X.iloc[train])
    except HieraggError as exc:
        raise StageError("standardize", exc) from exc

    online = slice(split.init.start, split.eval.stop)
    Yo, Xo = Y.iloc[online], X.iloc[online]
    if Xo.isna().any().any():
        raise StageError("features", DataError("features missing over the online period"))
    n_init = split.init.stop - split.init.start
    Ye, Xe = Yo.iloc[n_init:], Xo.iloc[n_init:]
    agg_cfg = cfg.aggregation
    report = EvaluationReport()
    panels = {}
    bench_proj = pd.DataFrame(P.project(Xe.values), index=Xe.index, columns=Xe.columns)
    for alg in agg_cfg["algorithms"]:
        try:
            res = run_aggregation(Yo.values, Xo.values, stats, P, alg, agg_cfg["grid"], agg_cfg.get("delay", 48),
                                  agg_cfg.get("selection_lag", 48), agg_cfg.get("per_node", False))
        except HieraggError as exc:
            raise StageError("aggregate", exc) from exc
        fc = {
            "benchmark": Xe,
            "projection": bench_proj,
            "aggregation": pd.DataFrame(res.aggregation[n_init:], index=Xe.index, columns=Xe.columns),
            "aggregation+projection": pd.DataFrame(res.projected[n_init:], index=Xe.index, columns=Xe.columns),
        }
        try:
            evaluate_strategies(Ye, fc, spec, Xe, P, alg, report)
        except HieraggError as exc:
            raise StageError("evaluate", exc) from exc
        panels[alg] = fc
    report.metadata.update(
        {
            "config_digest": cfg.digest(),
            "constraint_digest": K.digest(),
            "n_nodes": len(spec.nodes),
            "n_households": sum(len(p.assignment) for p in parts[:1]),
            "eval_instants": int(len(Ye)),
        }
    )
    panels["_observations"] = Ye
    panels["_spec"] = spec
    panels["_partitions"] = parts
    panels["_models"] = models
    if cfg.out:
        write_outputs(cfg, report, panels)
    return report, panels


def write_outputs(cfg: RunConfig, report: EvaluationReport, panels: dict):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "config.json").write_text(cfg.to_json())
    (out / "hierarchy.json").write_text(panels["_spec"].to_json())
    for j, part in enumerate(panels["_partitions"]):
        part.to_csv(out / f"clustering_{j + 1}.csv")
    frames = []
    for alg, fc in panels.items():
        if alg.startswith("_"):
            continue
        for strategy, panel in fc.items():
            long = panel.rename_axis("timestamp").reset_index().melt(id_vars="timestamp", var_name="node_id")
            long.insert(2, "strategy", f"{alg}:{strategy}")
            frames.append(long)
    fcs = pd.concat(frames, ignore_index=True)
    fcs["timestamp"] = pd.DatetimeIndex(fcs["timestamp"]).strftime("%Y-%m-%dT%H:%M:%SZ")
    fcs[["timestamp", "node_id", "strategy", "value"]].to_csv(out / "forecasts.csv", index=False)
    obs = panels["_observations"]
    features.write_long_panel(obs, out / "observations.csv")


def default_config(**overrides) -> RunConfig:
    cfg = RunConfig()
    for key, val in overrides.items():
        setattr(cfg, key, copy.deepcopy(val))
    return cfg.validate()
