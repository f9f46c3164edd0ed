"""Online aggregation of a shared feature vector.

Every learner here runs a *bank* of ``n_targets`` independent copies that see
the same feature vector ``x_t`` but their own observation. In the forecasting
pipeline one bank covers all nodes of the hierarchy; ``n_targets=1`` gives the
plain single-node learner. The protocol per instant is ``predict(x_t)`` then
``update(y_t)``; after ``predict`` the weights used are in ``.weights``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    EmptyGrid,
    L1RadiusExceeded,
    NonPositiveE,
    NonPositiveLambda,
    NotInSimplex,
    OutOfOrderObservation,
)

ALGORITHMS = ("nlridge", "boa", "mlpol")


@dataclass(frozen=True)
class AggregatorConfig:
    algorithm: str = "mlpol"
    lam: float = 1.0
    alpha: float = 1.0
    loss_bound_E: float | None = None
    delay: int = 48

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown aggregation algorithm {self.algorithm!r}")
        if self.algorithm == "nlridge" and not self.lam > 0:
            raise NonPositiveLambda(f"lambda must be positive, got {self.lam}")
        if self.algorithm != "nlridge":
            if not self.alpha > 0:
                raise ConfigError(f"alpha must be positive, got {self.alpha}")
            if self.loss_bound_E is not None and not self.loss_bound_E > 0:
                raise NonPositiveE(f"E must be positive, got {self.loss_bound_E}")
        if self.delay < 0:
            raise ConfigError("delay must be non-negative")


def lifted_loss_bound(alpha: float, C: float) -> float:
    """Bound ``2 alpha (alpha + 1) C^2`` on pseudo-losses of the L1-ball scheme."""
    return 2.0 * alpha * (alpha + 1.0) * C**2


class _Learner:
    dim: int
    n_targets: int
    weights: np.ndarray

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"feature vector must have shape ({self.dim},), got {x.shape}")
        return x

    def _check_y(self, y):
        y = np.broadcast_to(np.asarray(y, dtype=float), (self.n_targets,))
        return y

    def step(self, x, y):
        """Predict at ``x`` then observe ``y``; returns the prediction(s)."""
        pred = self.predict(x)
        self.update(y)
        return pred


class SequentialRidge(_Learner):
    """Non-linear sequential ridge regression (Vovk / Azoury-Warmuth forecaster).

    ``A_t = lam*I + sum_{s<=t} x_s x_s^T`` is shared by the whole bank since all
    targets see the same features; only ``b`` is per target. ``A_t^{-1}`` is
    kept by Sherman-Morrison rank-one updates and recomputed from ``A_t`` every
    ``refresh_every`` steps.
    """

    name = "nlridge"

    def __init__(self, dim: int, lam: float, n_targets: int = 1, refresh_every: int = 1024):
        if not lam > 0:
            raise NonPositiveLambda(f"lambda must be positive, got {lam}")
        self.dim, self.lam, self.n_targets = dim, float(lam), n_targets
        self.refresh_every = refresh_every
        self.gram = lam * np.eye(dim)
        self.gram_inv = np.eye(dim) / lam
        self.bvec = np.zeros((n_targets, dim))
        self.t = 0
        self.weights = self.initial_weights()
        self._x = None

    def initial_weights(self) -> np.ndarray:
        return np.zeros((self.n_targets, self.dim))

    def predict(self, x) -> np.ndarray:
        if self._x is not None:
            raise OutOfOrderObservation("predict called twice without an observation")
        x = self._check_x(x)
        self.gram += np.outer(x, x)
        self.t += 1
        if self.t % self.refresh_every == 0:
            self.gram_inv = np.linalg.inv(self.gram)
        else:
            Ax = self.gram_inv @ x
            self.gram_inv -= np.outer(Ax, Ax) / (1.0 + x @ Ax)
        self.weights = self.bvec @ self.gram_inv
        self._x = x
        return self.weights @ x

    def update(self, y):
        if self._x is None:
            raise OutOfOrderObservation("observation received before a prediction")
        self.bvec += np.outer(self._check_y(y), self._x)
        self._x = None

    def to_dict(self) -> dict:
        return {
            "algorithm": self.name,
            "dim": self.dim,
            "lam": self.lam,
            "n_targets": self.n_targets,
            "refresh_every": self.refresh_every,
            "t": self.t,
            "gram": self.gram.tolist(),
            "gram_inv": self.gram_inv.tolist(),
            "bvec": self.bvec.tolist(),
            "pending_x": None if self._x is None else self._x.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "SequentialRidge":
        obj = cls(doc["dim"], doc["lam"], doc["n_targets"], doc["refresh_every"])
        obj.t = doc["t"]
        obj.gram = np.asarray(doc["gram"])
        obj.gram_inv = np.asarray(doc["gram_inv"])
        obj.bvec = np.asarray(doc["bvec"]).reshape(obj.n_targets, obj.dim)
        if doc["pending_x"] is not None:
            obj._x = np.asarray(doc["pending_x"])
            obj.weights = obj.bvec @ obj.gram_inv
        return obj


class _SimplexLearner(_Learner):
    """Expert aggregation with the gradient trick; weights live in the simplex."""

    name = "simplex"

    def __init__(self, dim: int, E: float, n_targets: int = 1):
        if not E > 0:
            raise NonPositiveE(f"E must be positive, got {E}")
        self.dim, self.E, self.n_targets = dim, float(E), n_targets
        self.cum = np.zeros((n_targets, dim))
        self.cum_sq = np.zeros((n_targets, dim))
        self.learning_rates = np.zeros((n_targets, dim))
        self.weights = self.initial_weights()
        self.t = 0
        self._x = None
        self._pred = None

    def initial_weights(self) -> np.ndarray:
        return np.full((self.n_targets, self.dim), 1.0 / self.dim)

    def predict(self, x) -> np.ndarray:
        if self._x is not None:
            raise OutOfOrderObservation("predict called twice without an observation")
        x = self._check_x(x)
        self._x = x
        self._pred = self.weights @ x
        return self._pred

    def update(self, y):
        if self._x is None:
            raise OutOfOrderObservation("observation received before a prediction")
        y = self._check_y(y)
        pred = self._pred
        r = 2.0 * (pred - y)[:, None] * (pred[:, None] - self._x[None, :])
        self._accumulate(r)
        self.t += 1
        self._x = self._pred = None

    def _accumulate(self, r):  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "algorithm": self.name,
            "dim": self.dim,
            "E": self.E,
            "n_targets": self.n_targets,
            "t": self.t,
            "cum": self.cum.tolist(),
            "cum_sq": self.cum_sq.tolist(),
            "learning_rates": self.learning_rates.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        obj = cls(doc["dim"], doc["E"], doc["n_targets"])
        obj.t = doc["t"]
        for key in ("cum", "cum_sq", "learning_rates", "weights"):
            setattr(obj, key, np.asarray(doc[key], dtype=float).reshape(obj.n_targets, obj.dim))
        return obj


class BOA(_SimplexLearner):
    """Fully adaptive Bernstein Online Aggregation with the gradient trick.

    ``cum`` holds the regularized cumulative quantity ``Q``. Weights are
    ``exp(eta * Q)`` normalized (computed with a max shift).
    """

    name = "boa"

    def _accumulate(self, r):
        self.cum += r * (1.0 + self.learning_rates * r)
        self.cum_sq += r * r
        with np.errstate(divide="ignore"):
            adaptive = np.sqrt(math.log(self.dim) / self.cum_sq)
        self.learning_rates = np.minimum(1.0 / (2.0 * self.E), adaptive)
        z = self.learning_rates * self.cum
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        self.weights = w / w.sum(axis=1, keepdims=True)


class MLPol(_SimplexLearner):
    """Polynomially weighted average forecaster with multiple learning rates.

    ``cum`` holds the cumulative pseudo-regret ``R``; weights are proportional
    to ``eta * max(R, 0)``, uniform when every truncated regret is zero.
    """

    name = "mlpol"

    def _accumulate(self, r):
        self.cum += r
        self.cum_sq += r * r
        self.learning_rates = 1.0 / (self.E + self.cum_sq)
        w = self.learning_rates * np.maximum(self.cum, 0.0)
        total = w.sum(axis=1, keepdims=True)
        flat = total[:, 0] <= 0
        w[flat] = 1.0 / self.dim
        total[flat] = 1.0
        self.weights = w / total


def psi(u_bar, alpha: float) -> np.ndarray:
    """Map a ``2d``-simplex vector to the L1 ball of radius ``alpha``: ``alpha (u+ - u-)``."""
    u_bar = np.asarray(u_bar, dtype=float)
    if u_bar.shape[-1] % 2:
        raise NotInSimplex("lifted weight vector must have even length")
    if np.any(u_bar < -1e-12) or np.any(np.abs(u_bar.sum(axis=-1) - 1.0) > 1e-9):
        raise NotInSimplex("vector is not in the simplex")
    d = u_bar.shape[-1] // 2
    return alpha * (u_bar[..., :d] - u_bar[..., d:])


def psi_inverse(u, alpha: float) -> np.ndarray:
    """A simplex preimage of ``u`` under :func:`psi`; requires ``||u||_1 <= alpha``."""
    u = np.asarray(u, dtype=float)
    norm = np.abs(u).sum()
    if norm > alpha * (1.0 + 1e-12):
        raise L1RadiusExceeded(f"||u||_1 = {norm} exceeds alpha = {alpha}")
    d = u.shape[0]
    slack = max(alpha - norm, 0.0) / (2 * d)
    return np.concatenate([slack + np.maximum(u, 0.0), slack + np.maximum(-u, 0.0)]) / alpha


def lift_features(x, alpha: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([alpha * x, -alpha * x])


class LiftedAggregator(_Learner):
    """Runs a simplex learner on ``(alpha x | -alpha x)``; weights lie in the L1 ball."""

    def __init__(self, inner: _SimplexLearner, alpha: float):
        if not alpha > 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")
        if inner.dim % 2:
            raise ConfigError("inner learner dimension must be even")
        self.inner, self.alpha = inner, float(alpha)
        self.dim, self.n_targets = inner.dim // 2, inner.n_targets
        self.weights = self.initial_weights()
        self.name = f"{inner.name}+l1"

    def _to_ball(self, u_bar):
        return self.alpha * (u_bar[:, : self.dim] - u_bar[:, self.dim :])

    def initial_weights(self) -> np.ndarray:
        return self._to_ball(self.inner.initial_weights())

    def predict(self, x) -> np.ndarray:
        x = self._check_x(x)
        pred = self.inner.predict(lift_features(x, self.alpha))
        self.weights = self._to_ball(self.inner.weights)
        return pred

    def update(self, y):
        self.inner.update(y)

    def to_dict(self) -> dict:
        return {"algorithm": "lifted", "alpha": self.alpha, "inner": self.inner.to_dict()}


_SIMPLEX = {"boa": BOA, "mlpol": MLPol}


def make_learner(algorithm: str, dim: int, beta: float, n_targets: int = 1, C: float = 1.0,
                 E: float | None = None):
    """Build a bank for one hyper-parameter value.

    ``beta`` is the ridge penalty for ``nlridge`` and the L1 radius for
    ``boa``/``mlpol``; the latter default to ``E = 2 beta (beta + 1) C^2``.
    """
    if algorithm == "nlridge":
        return SequentialRidge(dim, beta, n_targets)
    if algorithm in _SIMPLEX:
        E = lifted_loss_bound(beta, C) if E is None else E
        return LiftedAggregator(_SIMPLEX[algorithm](2 * dim, E, n_targets), beta)
    raise ConfigError(f"unknown aggregation algorithm {algorithm!r}")


def learner_from_dict(doc):
    kind = doc["algorithm"]
    if kind == "nlridge":
        return SequentialRidge.from_dict(doc)
    if kind == "lifted":
        return LiftedAggregator(learner_from_dict(doc["inner"]), doc["alpha"])
    if kind in _SIMPLEX:
        return _SIMPLEX[kind].from_dict(doc)
    raise ConfigError(f"unknown learner state {kind!r}")


class DelayedLearner:
    """Feeds a learner observations ``delay`` instants late.

    At instant ``t`` the prediction is ``u_{t-delay} . x_t`` where ``u_k`` is the
    weight vector the undelayed learner would use at its own step ``k``; before
    any such step exists the learner's initial weights are used. Observations
    must be delivered in order, one per prediction.
    """

    def __init__(self, inner, delay: int):
        if delay < 0:
            raise ConfigError("delay must be non-negative")
        self.inner, self.delay = inner, int(delay)
        self.t = 0
        self.n_observed = 0
        self._xs: deque = deque()
        self._ys: deque = deque()
        self._presented = 0
        self._completed = 0
        self.weights = inner.initial_weights()

    @property
    def dim(self):
        return self.inner.dim

    @property
    def n_targets(self):
        return self.inner.n_targets

    def predict(self, x) -> np.ndarray:
        if self.n_observed != self.t:
            raise OutOfOrderObservation(f"observation for instant {self.t} not delivered yet")
        x = np.asarray(x, dtype=float)
        self.t += 1
        self._xs.append(x)
        k = self.t - self.delay
        if k < 1:
            self.weights = self.inner.initial_weights()
            return self.weights @ x
        if self._presented > self._completed:
            self.inner.update(self._ys.popleft())
            self._completed += 1
        inner_pred = self.inner.predict(self._xs.popleft())
        self._presented += 1
        self.weights = self.inner.weights
        if self.delay == 0:
            return inner_pred
        return self.weights @ x

    def update(self, y, t: int | None = None):
        if t is not None and t != self.t:
            raise OutOfOrderObservation(f"expected observation for instant {self.t}, got {t}")
        if self.n_observed >= self.t:
            raise OutOfOrderObservation("observation delivered before its prediction")
        self._ys.append(np.asarray(y, dtype=float))
        self.n_observed += 1

    def step(self, x, y):
        pred = self.predict(x)
        self.update(y)
        return pred


class OnlineGridSelector:
    """Chooses a hyper-parameter from a grid by past average squared error.

    ``record`` takes, for the current instant, the squared errors of every grid
    value (shape ``(|G|,)`` or ``(|G|, n_nodes)``). ``select(t)`` returns the
    grid index minimizing the mean error over instants ``s <= t - lag``; for
    ``t <= lag`` the median grid value is used. Ties go to the smallest value.
    With ``per_node`` the choice is made separately for each node.
    """

    def __init__(self, grid, lag: int = 48, per_node: bool = False):
        grid = tuple(float(g) for g in grid)
        if not grid:
            raise EmptyGrid("hyper-parameter grid is empty")
        self.grid, self.lag, self.per_node = grid, int(lag), per_node
        self._rank = np.argsort(np.asarray(grid), kind="stable")
        self._history: list[np.ndarray] = []
        self._cum = None
        self._n_cum = 0

    @property
    def median_index(self) -> int:
        return int(self._rank[(len(self.grid) - 1) // 2])

    def record(self, sq_errors):
        e = np.asarray(sq_errors, dtype=float)
        if e.shape[0] != len(self.grid):
            raise ValueError("one error entry per grid value is required")
        if e.ndim == 2 and not self.per_node:
            e = e.mean(axis=1)
        self._history.append(e)

    def select(self, t: int):
        available = min(t - self.lag, len(self._history))
        if available < 1:
            idx = self.median_index
            if self.per_node and self._history:
                return np.full(self._history[0].shape[1:], idx)
            return idx
        if self._cum is None:
            self._cum = np.zeros_like(self._history[0])
        while self._n_cum < available:
            self._cum = self._cum + self._history[self._n_cum]
            self._n_cum += 1
        ordered = self._cum[self._rank]
        best = np.argmin(ordered, axis=0)  # first minimum = smallest beta
        return self._rank[best] if np.ndim(best) else int(self._rank[best])

    def selected_value(self, t: int):
        idx = self.select(t)
        return np.asarray(self.grid)[idx] if np.ndim(idx) else self.grid[idx]


def default_grid() -> tuple[float, ...]:
    return tuple(4.0**i for i in range(-5, 6))


# -- regret bounds -----------------------------------------------------------------


def ridge_regret_bound(lam: float, u_sq_norm: float, dim: int, C: float, T: int) -> float:
    """``lam ||u||^2 + dim C^2 ln(1 + C^2 T / lam)`` for one node."""
    return lam * u_sq_norm + dim * C**2 * math.log(1.0 + C**2 * T / lam)


def boa_regret_bound(E: float, n_experts: int, T: int) -> float:
    ln_n = math.log(n_experts)
    lnln = math.log(1.0 + 0.5 * math.log(T)) if T > 1 else 0.0
    return (
        math.sqrt(T + 1) * E * (math.sqrt(2 * ln_n) / (math.sqrt(2) - 1) + lnln / math.sqrt(ln_n))
        + E * (2 * ln_n + 2 * lnln + 1)
    )


def mlpol_regret_bound(E: float, n_experts: int, T: int) -> float:
    return E * math.sqrt(n_experts * (T + 1) * (1 + math.log(1 + T)))
