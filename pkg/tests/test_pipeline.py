import numpy as np
import pandas as pd
import pytest

from hieragg import features, hierarchy, pipeline
from hieragg.errors import ConfigError, InvalidDateRange, SingularGram, StageError

SMALL_FLEET = {"n_households": 120, "days": 42}
SMALL_DATES = {"train_days": 21, "init_days": 3}


def small_config(**kw):
    doc = {"data": {"synthetic": dict(SMALL_FLEET)}, "dates": dict(SMALL_DATES)}
    doc.update(kw)
    return pipeline.RunConfig.from_dict(doc)


@pytest.fixture(scope="module")
def small_run():
    return pipeline.run_pipeline(small_config())


def test_fleet_shapes_and_root():
    spec = pipeline.SyntheticFleetSpec(n_households=10, days=3, seed=4)
    fleet = pipeline.generate_fleet(spec)
    assert fleet.consumption.shape == (144, 10)
    assert np.array_equal(fleet.root.values, fleet.consumption.sum(axis=1).values)
    assert set(fleet.attributes.columns) >= {"household_id", "region", "archetype"}
    assert (fleet.consumption.values >= 0).all()


def test_fleet_noise_free_proportional():
    fleet = pipeline.generate_fleet(pipeline.SyntheticFleetSpec(n_households=80, days=7, noise=0.0, seed=1))
    attrs = fleet.attributes
    key = attrs.groupby(["archetype", "region"]).household_id.apply(list)
    group = next(g for g in key if len(g) >= 2)
    a, b = fleet.consumption[group[0]], fleet.consumption[group[1]]
    ratio = a / b
    assert np.allclose(ratio, ratio.iloc[0], rtol=1e-12)


def test_fleet_csv_round_trip(tmp_path):
    fleet = pipeline.generate_fleet(pipeline.SyntheticFleetSpec(n_households=5, days=2))
    fleet.write(tmp_path)
    back = pipeline.Fleet.read(tmp_path)
    assert np.allclose(back.consumption.values, fleet.consumption.values, rtol=1e-15)
    assert sorted(back.meteo) == sorted(fleet.meteo)
    root = pd.read_csv(tmp_path / "root.csv")
    assert np.allclose(root["value"].values, fleet.root.values, rtol=1e-15)


def test_spec_validation():
    with pytest.raises(ConfigError):
        pipeline.SyntheticFleetSpec(n_households=0)
    with pytest.raises(ConfigError):
        pipeline.SyntheticFleetSpec(noise=-1.0)
    with pytest.raises(InvalidDateRange):
        pipeline.generate_fleet(pipeline.SyntheticFleetSpec(start="not a date"))


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"nonsense": 1})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"aggregation": {"algorithms": ["sgd"]}})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"aggregation": {"grid": []}})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"aggregation": {"delay": -1}})
    bad = tmp_path / "c.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_json(bad)
    idx = pd.date_range("2010-01-01", periods=48 * 10, freq="30min", tz="UTC")
    with pytest.raises(InvalidDateRange):
        pipeline.DateSplit.from_config({"train_days": 8, "init_days": 5}, idx)


def test_stage_seeds_deterministic():
    assert pipeline.stage_seeds(3) == pipeline.stage_seeds(3)
    assert pipeline.stage_seeds(3) != pipeline.stage_seeds(4)


def test_run_structure(small_run):
    report, panels = small_run
    spec = panels["_spec"]
    obs = panels["_observations"]
    assert len(obs) == 48 * (42 - 21 - 3)  # init window excluded exactly
    assert report.metadata["eval_instants"] == len(obs)
    K = hierarchy.build_constraint_matrix(spec).matrix
    for name in ("projection", "aggregation+projection"):
        F = panels["mlpol"][name].values
        assert np.all(np.abs(F @ K.T).max(axis=1) <= 1e-6 * np.linalg.norm(F, axis=1))
    for fc in panels["mlpol"].values():
        assert fc.index.equals(obs.index) and list(fc.columns) == list(obs.columns)


def test_run_ordering(small_run):
    report, _ = small_run
    assert report.error("aggregation+projection") <= report.error("aggregation")
    assert report.error("projection") <= report.error("benchmark")


def test_pythagorean_every_instant(small_run):
    _, panels = small_run
    y = panels["_observations"].values
    for alg, raw, proj in (("mlpol", "aggregation", "aggregation+projection"), ("mlpol", "benchmark", "projection")):
        v, pv = panels[alg][raw].values, panels[alg][proj].values
        lhs, rhs = ((y - pv) ** 2).sum(1), ((y - v) ** 2).sum(1)
        slack = 1e-12 * ((y**2).sum(1) + (v**2).sum(1))
        assert np.all(lhs <= rhs + slack)


def test_rerun_byte_identical(tmp_path):
    cfg1 = small_config(out=str(tmp_path / "a"))
    cfg2 = small_config(out=str(tmp_path / "b"))
    pipeline.run_pipeline(cfg1)
    pipeline.run_pipeline(cfg2)
    for name in ("report.json", "report.csv", "forecasts.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    fc = pd.read_csv(tmp_path / "a" / "forecasts.csv")
    assert list(fc.columns) == ["timestamp", "node_id", "strategy", "value"]


def _write_external(cfg, path, perturb_train):
    fleet = pipeline.load_fleet(cfg)
    split = pipeline.DateSplit.from_config(cfg.dates, fleet.consumption.index)
    parts = pipeline.build_partitions(cfg, fleet, split.train, pipeline.stage_seeds(cfg.seed, 2)[0])
    spec = pipeline.build_hierarchy(parts)
    Y = pipeline.node_series(fleet.consumption, spec)
    X = Y.copy()
    if perturb_train:
        rng = np.random.default_rng(0)
        X.iloc[: split.train.stop] += rng.normal(size=(split.train.stop, Y.shape[1]))
    features.write_long_panel(X, path)


def test_external_features_equal_to_observations(tmp_path):
    cfg = small_config()
    _write_external(cfg, tmp_path / "f.csv", perturb_train=True)
    cfg = small_config(features={"method": "external", "path": str(tmp_path / "f.csv")},
                       aggregation={"algorithms": ["nlridge", "boa", "mlpol"]})
    report, _ = pipeline.run_pipeline(cfg)
    for row in report.rows:
        assert row["error"] <= 1e-8
    assert "regret_unavailable" in report.metadata


def test_coherent_external_features_fail_loudly(tmp_path):
    cfg = small_config()
    _write_external(cfg, tmp_path / "f.csv", perturb_train=False)
    cfg = small_config(features={"method": "external", "path": str(tmp_path / "f.csv")})
    with pytest.raises(StageError) as err:
        pipeline.run_pipeline(cfg)
    assert err.value.stage == "standardize" and isinstance(err.value.cause, SingularGram)


@pytest.mark.slow
def test_delay_zero_not_worse_than_day_delay():
    zero = day = 0.0
    for seed in range(10):
        agg = {"delay": 0, "selection_lag": 0}
        zero += pipeline.run_pipeline(small_config(seed=seed, aggregation=agg))[0].error("aggregation")
        day += pipeline.run_pipeline(small_config(seed=seed))[0].error("aggregation")
    assert zero <= day


def test_forest_features_and_other_partitions():
    cfg = small_config(
        features={"method": "forest", "n_trees": 4},
        partitions=[{"method": "random", "k": 3}],
        aggregation={"algorithms": ["nlridge", "boa"], "grid": [0.25, 1.0, 4.0]},
    )
    report, panels = pipeline.run_pipeline(cfg)
    assert panels["_spec"].kind == "two_level"
    assert len(panels["_spec"].nodes) == 4
    assert {r["algorithm"] for r in report.rows} == {"nlridge", "boa"}


def test_stage_tagging():
    cfg = small_config(partitions=[{"method": "attribute", "column": "no_such_column"}])
    with pytest.raises(StageError) as err:
        pipeline.run_pipeline(cfg)
    assert err.value.stage == "cluster"
