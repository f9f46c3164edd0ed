import json
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from conftest import consistent_vector

from hieragg import evaluate as V
from hieragg import hierarchy as H
from hieragg.errors import MisalignedPanels, NoLeaves, SingularRunGram


def test_strategy_errors_examples():
    y = np.arange(12.0).reshape(4, 3)
    assert V.strategy_errors(y, y) == (0.0, 0.0)
    E, s = V.strategy_errors(np.array([0.0, 0.0]), np.array([1.0, np.sqrt(3.0)]))
    assert E == pytest.approx(2.0) and s**2 == pytest.approx(1.0)
    with pytest.raises(MisalignedPanels):
        V.strategy_errors(y, y[:, :2])


def test_error_equals_scaled_average_loss(rng):
    y, f = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    E, _ = V.strategy_errors(y, f)
    assert E == pytest.approx(6 * ((y - f) ** 2).mean(), rel=1e-12)


def test_nodeset_selection(rng):
    y = pd.DataFrame(rng.normal(size=(20, 3)), columns=["t", "a", "b"])
    f = y + 1.0
    assert V.strategy_errors(y, f, ["a"])[0] == pytest.approx(1.0)
    assert V.strategy_errors(y.values, f.values, [0, 2])[0] == pytest.approx(2.0)


@pytest.fixture
def crossed_setup(rng):
    spec = H.crossed(["a", "b"], ["x", "y"])
    P = H.build_projector(H.build_constraint_matrix(spec))
    return spec, P


def test_comparator_realizable(rng, crossed_setup):
    spec, P = crossed_setup
    n = len(spec.nodes)
    M0 = P.matrix @ rng.normal(size=(n, n))
    X = rng.normal(size=(200, n))
    comp = V.constrained_comparator(X @ M0.T, X, P)
    assert comp.loss < 1e-10
    assert np.abs(P.matrix @ comp.matrix - comp.matrix).max() < 1e-8


def test_comparator_unconstrained_is_ols(rng):
    X, Y = rng.normal(size=(100, 3)), rng.normal(size=(100, 3))
    comp = V.constrained_comparator(Y, X, None)
    assert np.allclose(comp.matrix.T, np.linalg.lstsq(X, Y, rcond=None)[0])


def test_comparator_optimality(rng, crossed_setup):
    spec, P = crossed_setup
    n = len(spec.nodes)
    X = rng.normal(size=(300, n))
    Y = consistent_vector(spec, rng, size=300) + 0.3 * rng.normal(size=(300, n))
    comp = V.constrained_comparator(Y, X, P)
    assert np.abs(P.matrix @ comp.matrix - comp.matrix).max() < 1e-8
    for _ in range(100):
        B = rng.normal(size=(n, n))
        assert comp.loss <= V.comparator_loss(Y, X, P.matrix @ B) + 1e-12


def test_comparator_against_projected_gradient(rng):
    spec = H.two_level(["a", "b", "c"])
    P = H.build_projector(H.build_constraint_matrix(spec)).matrix
    X = rng.normal(size=(50, 4))
    Y = rng.normal(size=(50, 4))
    M = np.zeros((4, 4))
    L = np.linalg.eigvalsh(X.T @ X).max() * 2 / (50 * 4)
    for _ in range(20000):
        grad = -2 * (Y - X @ M.T).T @ X / (50 * 4)
        M = P @ (M - grad / L)
    comp = V.constrained_comparator(Y, X, H.Projector(P, ""))
    assert comp.loss == pytest.approx(V.comparator_loss(Y, X, M), abs=1e-4)


def test_comparator_singular():
    X = np.ones((10, 2))
    with pytest.raises(SingularRunGram):
        V.constrained_comparator(X, X)


def test_regret_trace_and_decomposition(rng):
    X, Y = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
    M = rng.normal(size=(3, 3))
    total, per_node = V.regret_trace(Y, X @ M.T, X, M)
    assert np.all(total == 0) and per_node.shape == (40, 3)
    F = rng.normal(size=(40, 3))
    total, _ = V.regret_trace(Y, F, X, M)
    avg_loss = ((Y - F) ** 2).mean()
    assert avg_loss == pytest.approx(V.comparator_loss(Y, X, M) + total[-1] / (40 * 3), abs=1e-10)


def test_projection_reduces_regret(rng, crossed_setup):
    spec, P = crossed_setup
    n = len(spec.nodes)
    X = rng.normal(size=(100, n))
    Y = consistent_vector(spec, rng, size=100)
    F = Y + rng.normal(size=Y.shape)
    comp = V.constrained_comparator(Y, X, P)
    r_agg, _ = V.regret_trace(Y, F, X, comp.matrix)
    r_proj, _ = V.regret_trace(Y, P.project(F), X, comp.matrix)
    assert r_proj[-1] <= r_agg[-1]


def test_bottom_up(rng):
    spec = H.two_level(["a", "b"])
    feats = pd.DataFrame({"total": [0.0], "a": [3.0], "b": [4.0]})
    assert V.bottom_up(feats, spec).iloc[0] == 7.0
    with pytest.raises(NoLeaves):
        V.bottom_up(feats, SimpleNamespace(leaves=(), root="total"))


def test_bottom_up_wins_with_constructed_noise(rng):
    spec = H.two_level(["a", "b"])
    T, v = 20000, 1.0
    leaves = rng.normal(size=(T, 2))
    y = pd.DataFrame({"total": leaves.sum(1), "a": leaves[:, 0], "b": leaves[:, 1]})
    x = y + pd.DataFrame({"total": rng.normal(scale=np.sqrt(3 * v), size=T),
                          "a": rng.normal(scale=np.sqrt(v), size=T), "b": rng.normal(scale=np.sqrt(v), size=T)})
    e_bu = ((y["total"] - V.bottom_up(x, spec)) ** 2).mean()
    e_bench = ((y["total"] - x["total"]) ** 2).mean()
    assert e_bu == pytest.approx(2 * v, rel=0.05) and e_bench == pytest.approx(3 * v, rel=0.05)


def test_report_round_trip_and_determinism(rng, crossed_setup):
    spec, P = crossed_setup
    y = pd.DataFrame(consistent_vector(spec, rng, size=60), columns=spec.nodes)
    x = y + rng.normal(size=y.shape)
    fc = {"benchmark": x, "projection": pd.DataFrame(P.project(x.values), columns=spec.nodes)}
    r1 = V.evaluate_strategies(y, fc, spec, x, P, "mlpol")
    r2 = V.evaluate_strategies(y, fc, spec, x, P, "mlpol")
    assert r1.to_json() == r2.to_json()
    back = V.EvaluationReport.from_json(r1.to_json())
    assert back.rows == r1.rows
    assert r1.error("projection") <= r1.error("benchmark")
    assert {r["nodeset"] for r in r1.rows} == {"all", "leaves", "root"}
    assert "bottom-up" in {r["strategy"] for r in r1.rows}
    assert list(pd.read_csv(__import__("io").StringIO(r1.to_csv())).columns)[:3] == ["strategy", "algorithm", "nodeset"]
    with pytest.raises(MisalignedPanels):
        V.evaluate_strategies(y, {"benchmark": x.iloc[:5]}, spec)
