import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import adjusted_rand_score

from hieragg import cluster as C
from hieragg.errors import (
    KTooLarge,
    MismatchedSets,
    NegativeInput,
    RankTooLarge,
    UnknownColumn,
    ZeroColumn,
    ZeroMeanHousehold,
)


def test_rescale_history(rng):
    assert np.all(C.rescale_history(np.full((1, 5), 2.0)) == 1.0)
    Y = rng.uniform(0, 3, size=(10, 40))
    assert np.allclose(C.rescale_history(Y).mean(axis=1), 1.0, atol=1e-12)
    Y[3] = 0
    with pytest.raises(ZeroMeanHousehold):
        C.rescale_history(Y)


def test_nmf_exact_rank_one(rng):
    Y = np.outer(rng.uniform(0.5, 2, 20), rng.uniform(0.5, 2, 30))
    fac = C.nmf(Y, r=1, seed=0, tol=1e-14)
    assert fac.objective < 1e-8 * (Y**2).sum()
    assert np.all(fac.W >= 0) and np.all(fac.H >= 0)


def test_nmf_monotone(rng):
    for s in range(5):
        Y = rng.uniform(0, 1, size=(15, 25))
        hist = C.nmf(Y, r=4, seed=s, max_sweeps=100, tol=0).history
        assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))


def test_nmf_full_rank_not_worse(rng):
    Y = rng.uniform(0, 1, size=(6, 8))
    full = C.nmf(Y, r=6, seed=1, max_sweeps=3000, tol=1e-12)
    less = C.nmf(Y, r=5, seed=1, max_sweeps=3000, tol=1e-12)
    assert full.objective <= less.objective


def test_nmf_errors(rng):
    with pytest.raises(NegativeInput):
        C.nmf(-np.ones((3, 3)), r=1)
    with pytest.raises(RankTooLarge):
        C.nmf(np.ones((3, 5)), r=4)


def test_characteristic_vectors():
    W = np.array([[1.0, 2.0], [3.0, 2.0]])
    assert np.allclose(C.characteristic_vectors(W), [[0.25, 0.5], [0.75, 0.5]])
    assert np.allclose(C.characteristic_vectors(np.ones((4, 1))), 0.25)
    with pytest.raises(ZeroColumn):
        C.characteristic_vectors(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_kmeans_each_point_own_cluster(rng):
    P = rng.normal(size=(6, 2))
    labels, _, hist = C.kmeans_fit(P, 6, seed=0)
    assert len(set(labels)) == 6 and hist[-1] == pytest.approx(0.0, abs=1e-20)


def test_kmeans_blobs(rng):
    a = rng.normal(0, 1, size=(50, 2))
    b = rng.normal(10, 1, size=(50, 2))
    part = C.kmeans(np.vstack([a, b]), 2, seed=3)
    truth = [0] * 50 + [1] * 50
    assert C.adjusted_rand_index(part.assignment, dict(enumerate(truth))) == 1.0


def test_kmeans_monotone(rng):
    for s in range(5):
        P = rng.normal(size=(80, 3))
        _, _, hist = C.kmeans_fit(P, 5, seed=s)
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    with pytest.raises(KTooLarge):
        C.kmeans_fit(np.zeros((3, 2)), 4)


def test_ari_examples(rng):
    P = [1, 1, 2, 2]
    assert C.adjusted_rand_index(P, P) == 1.0
    assert C.adjusted_rand_index(P, [1, 2, 1, 2]) == pytest.approx(-0.5)
    a, b = rng.integers(4, size=1000), rng.integers(4, size=1000)
    assert abs(C.adjusted_rand_index(list(a), list(b))) < 0.05


def test_ari_matches_reference_and_symmetric(rng):
    for _ in range(20):
        a, b = rng.integers(5, size=60), rng.integers(3, size=60)
        ours = C.adjusted_rand_index(list(a), list(b))
        assert ours == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
        assert ours == C.adjusted_rand_index(list(b), list(a))
    with pytest.raises(MismatchedSets):
        C.adjusted_rand_index({"a": 1}, {"b": 1})


def test_random_clustering():
    ids = [f"h{i}" for i in range(50)]
    one = C.random_clustering(ids, 1, seed=2)
    assert one.k == 1 and set(one.assignment.values()) == {1}
    assert C.random_clustering(ids, 4, seed=9).assignment == C.random_clustering(ids, 4, seed=9).assignment
    c = C.random_clustering(ids[:3], 10, seed=0)
    assert sorted(set(c.assignment.values())) == list(range(1, c.k + 1))


def test_attribute_clustering():
    table = pd.DataFrame({"household_id": ["x", "y", "z"], "acorn": ["A", "A", "B"]})
    c = C.attribute_clustering(table, "acorn", min_size=None)
    assert {k: len(v) for k, v in c.groups().items()} == {"acorn=A": 2, "acorn=B": 1}
    d = C.attribute_clustering(table, "acorn", min_size=2)
    assert d.dropped == ("z",) and d.k == 1
    with pytest.raises(UnknownColumn):
        C.attribute_clustering(table, "tariff")


def test_clustering_csv(tmp_path):
    c = C.Clustering.from_labels(["a", "b", "c"], ["x", "y", "x"])
    c.to_csv(tmp_path / "c.csv")
    back = C.Clustering.from_csv(tmp_path / "c.csv")
    assert C.adjusted_rand_index(c, back) == 1.0
    assert list(pd.read_csv(tmp_path / "c.csv").columns) == ["household_id", "cluster"]


def test_archetype_recovery_small():
    from hieragg.pipeline import SyntheticFleetSpec, generate_fleet

    fleet = generate_fleet(SyntheticFleetSpec(n_households=60, days=30, seed=5))
    part = C.nmf_clustering(fleet.consumption.T, k=4, r=10, seed=1)
    truth = dict(zip(fleet.attributes.household_id, fleet.attributes.archetype))
    assert C.adjusted_rand_index(part, truth) >= 0.9
