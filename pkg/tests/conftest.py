import numpy as np
import pytest

from hieragg import hierarchy as H


def random_hierarchies(rng):
    """One instance of each hierarchy kind with sizes drawn from [2, 6]."""
    n = lambda: int(rng.integers(2, 7))  # noqa: E731
    leaves = [f"L{i}" for i in range(n())]
    tree = {"total": {f"M{i}": {f"M{i}.{j}": None for j in range(n())} for i in range(n())}}
    a = [f"A{i}" for i in range(n())]
    b = [f"B{j}" for j in range(n())]
    return {
        "two_level": H.two_level(leaves),
        "multi_level": H.multi_level(tree),
        "two_partitions": H.two_partitions(a, b),
        "crossed": H.crossed(a, b),
    }


def consistent_vector(spec, rng, size=None):
    """Random vector(s) in Ker(K), built from an SVD null-space basis."""
    K = H.build_constraint_matrix(spec).matrix
    _, sv, Vt = np.linalg.svd(K)
    rank = int((sv > 1e-10 * sv[0]).sum())
    N = Vt[rank:].T
    z = rng.normal(size=(size or 1, N.shape[1])) * 3
    y = z @ N.T
    return y if size else y[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
