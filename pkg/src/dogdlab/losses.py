"""Convex loss oracles and synthetic ridge-regression streams.

A loss oracle is any object exposing ``dimension``, ``eval(x)`` and
``grad(x)``. The concrete classes here are immutable and their methods are
pure, so oracles can be shared freely between threads.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Protocol

import numpy as np

from .errors import DimensionMismatch, DomainViolation, EmptyBatch, IoError
from .rng import substream

RIDGE_FEATURE_LO = 0.3
RIDGE_FEATURE_HI = 0.4
RIDGE_NOISE_VAR = 0.5
RIDGE_PENALTY = 0.001


class LossOracle(Protocol):
    dimension: int

    def eval(self, x) -> float: ...

    def grad(self, x) -> np.ndarray: ...


def _as_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != dim:
        raise DimensionMismatch(f"expected a point of dimension {dim}, got {x.size}")
    return x


@dataclass(frozen=True, eq=False)
class RidgeSample:
    u: np.ndarray
    v: float
    penalty: float = RIDGE_PENALTY

    def __post_init__(self) -> None:
        if not self.penalty > 0:
            raise ValueError(f"ridge penalty must be positive, got {self.penalty}")
        object.__setattr__(self, "u", np.asarray(self.u, dtype=np.float64).reshape(-1))


@dataclass(frozen=True, eq=False)
class RidgeLoss:
    """``(u.x - v)^2 + penalty * |x|^2``."""

    sample: RidgeSample

    @property
    def dimension(self) -> int:
        return self.sample.u.size

    def eval(self, x) -> float:
        x = _as_point(x, self.dimension)
        r = float(self.sample.u @ x) - self.sample.v
        return r * r + self.sample.penalty * float(x @ x)

    def grad(self, x) -> np.ndarray:
        x = _as_point(x, self.dimension)
        r = float(self.sample.u @ x) - self.sample.v
        return 2.0 * r * self.sample.u + 2.0 * self.sample.penalty * x

    def minimizer(self) -> np.ndarray:
        u, p = self.sample.u, self.sample.penalty
        a = 2.0 * np.outer(u, u) + 2.0 * p * np.eye(u.size)
        return np.linalg.solve(a, 2.0 * self.sample.v * u)


def ridge_loss(sample: RidgeSample) -> RidgeLoss:
    return RidgeLoss(sample)


@dataclass(frozen=True, eq=False)
class LogisticBatch:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.shape[0] != labels.size:
            raise DimensionMismatch(
                f"{feats.shape[0]} feature rows but {labels.size} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class LogisticLoss:
    """Mean multiclass cross-entropy of a linear softmax model.

    Points are flattened ``(d, C)`` parameter matrices in row-major order,
    so class ``k`` scores are ``features @ X[:, k]``.
    """

    batch: LogisticBatch

    def __post_init__(self) -> None:
        if self.batch.labels.size == 0:
            raise EmptyBatch("logistic loss needs at least one sample")

    @property
    def n_features(self) -> int:
        return self.batch.features.shape[1]

    @property
    def dimension(self) -> int:
        return self.n_features * self.batch.n_classes

    def _logits(self, x) -> np.ndarray:
        x = _as_point(x, self.dimension).reshape(self.n_features, self.batch.n_classes)
        z = self.batch.features @ x
        return z - z.max(axis=1, keepdims=True)

    def eval(self, x) -> float:
        z = self._logits(x)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        rows = np.arange(self.batch.labels.size)
        return float(-logp[rows, self.batch.labels].mean())

    def grad(self, x) -> np.ndarray:
        z = self._logits(x)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(self.batch.labels.size), self.batch.labels] -= 1.0
        g = self.batch.features.T @ p / self.batch.labels.size
        return g.reshape(-1)


def logistic_loss(batch: LogisticBatch) -> LogisticLoss:
    return LogisticLoss(batch)


def bregman_l2(theta, phi) -> float:
    d = np.asarray(theta, dtype=np.float64) - np.asarray(phi, dtype=np.float64)
    return 0.5 * float(d @ d)


@dataclass(frozen=True, eq=False)
class InitLoss:
    """Meta-loss on the initialization: ``B(theta*, phi) * G * sqrt(m)``."""

    theta_star: np.ndarray
    g_lip: float
    m: int

    def __post_init__(self) -> None:
        if not self.g_lip > 0:
            raise ValueError(f"G must be positive, got {self.g_lip}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        object.__setattr__(
            self, "theta_star", np.asarray(self.theta_star, dtype=np.float64).reshape(-1)
        )

    @property
    def dimension(self) -> int:
        return self.theta_star.size

    @property
    def scale(self) -> float:
        return self.g_lip * math.sqrt(self.m)

    def eval(self, phi) -> float:
        phi = _as_point(phi, self.dimension)
        return bregman_l2(self.theta_star, phi) * self.scale

    def grad(self, phi) -> np.ndarray:
        phi = _as_point(phi, self.dimension)
        return (phi - self.theta_star) * self.scale


def f_init(theta_star, g_lip: float, m: int) -> InitLoss:
    return InitLoss(theta_star, g_lip, m)


@dataclass(frozen=True, eq=False)
class RateLoss:
    """Meta-loss on the rate scalar: ``(B / v + v) * G * sqrt(m)`` for ``v >= eps``."""

    bregman_value: float
    g_lip: float
    m: int
    eps: float = 0.0

    def __post_init__(self) -> None:
        if self.bregman_value < 0:
            raise ValueError(f"Bregman value must be >= 0, got {self.bregman_value}")
        if not self.g_lip > 0:
            raise ValueError(f"G must be positive, got {self.g_lip}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")

    dimension = 1

    @property
    def scale(self) -> float:
        return self.g_lip * math.sqrt(self.m)

    @property
    def minimizer(self) -> float:
        return math.sqrt(self.bregman_value)

    def _v(self, v) -> float:
        v = float(_as_point(v, 1)[0])
        if v < self.eps or v <= 0.0:
            raise DomainViolation(f"rate loss evaluated at v={v} below eps={self.eps}")
        return v

    def eval(self, v) -> float:
        v = self._v(v)
        return (self.bregman_value / v + v) * self.scale

    def grad(self, v) -> np.ndarray:
        v = self._v(v)
        return np.array([(1.0 - self.bregman_value / (v * v)) * self.scale])

    # scalar conveniences for the 1-D learners
    def value(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return (self.bregman_value / v + v) * self.scale


def f_rate(bregman_value: float, g_lip: float, m: int, eps: float = 0.0) -> RateLoss:
    return RateLoss(float(bregman_value), g_lip, m, eps)


Setup = Literal["stochastic", "adversarial"]


@dataclass(frozen=True, eq=False)
class RidgeStream:
    """Pre-generated per-round, per-agent ridge samples.

    Arrays are indexed ``[t, i]``: ``u`` is ``(T, N, p)``, ``v`` is ``(T, N)``
    and ``x_tilde`` holds the generating parameter of every sample.
    """

    setup: str
    u: np.ndarray
    v: np.ndarray
    x_tilde: np.ndarray
    penalty: float = RIDGE_PENALTY
    seed: int | None = None

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    @property
    def n_agents(self) -> int:
        return self.u.shape[1]

    @property
    def dimension(self) -> int:
        return self.u.shape[2]

    def oracle(self, t: int, i: int) -> RidgeLoss:
        return RidgeLoss(RidgeSample(self.u[t, i], float(self.v[t, i]), self.penalty))

    def round_oracles(self, t: int) -> list[RidgeLoss]:
        return [self.oracle(t, i) for i in range(self.n_agents)]

    def table(self) -> list[list[RidgeLoss]]:
        """``table()[t][i]`` is agent ``i``'s loss in round ``t``."""
        return [self.round_oracles(t) for t in range(self.horizon)]

    def column(self, i: int) -> RidgeStream:
        """Single-agent view of agent ``i``'s samples."""
        sl = slice(i, i + 1)
        return RidgeStream(
            self.setup, self.u[:, sl], self.v[:, sl], self.x_tilde[:, sl], self.penalty, self.seed
        )

    def second_moment(self) -> np.ndarray:
        flat = self.u.reshape(-1, self.dimension)
        return flat.T @ flat / flat.shape[0]

    def smoothness(self) -> float:
        """Smoothness estimate ``2 lambda_max(E[uu^T]) + 2 penalty`` from the data."""
        return 2.0 * float(np.linalg.eigvalsh(self.second_moment())[-1]) + 2.0 * self.penalty

    def expected_minimizer(self) -> np.ndarray:
        """Minimizer of the population loss in the stochastic setup.

        Uses the exact moments of ``Uniform[lo, hi]^p`` features:
        ``E[uu^T] = mu^2 11^T + (hi-lo)^2/12 I``.
        """
        if self.setup != "stochastic":
            raise DomainViolation("no single population minimizer outside the stochastic setup")
        p = self.dimension
        mom = expected_feature_moment(p)
        xt = self.x_tilde[0, 0]
        return np.linalg.solve(mom + self.penalty * np.eye(p), mom @ xt)

    def cache_key(self) -> str:
        return f"{self.setup}-p{self.dimension}-T{self.horizon}-N{self.n_agents}-s{self.seed}"

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.u, self.v, self.x_tilde):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        try:
            np.savez(
                path,
                setup=self.setup,
                u=self.u,
                v=self.v,
                x_tilde=self.x_tilde,
                penalty=self.penalty,
                seed=-1 if self.seed is None else self.seed,
            )
        except OSError as exc:
            raise IoError(str(exc)) from exc
        return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")

    @classmethod
    def load(cls, path) -> RidgeStream:
        try:
            with np.load(path) as data:
                seed = int(data["seed"])
                return cls(
                    str(data["setup"]),
                    data["u"],
                    data["v"],
                    data["x_tilde"],
                    float(data["penalty"]),
                    None if seed < 0 else seed,
                )
        except OSError as exc:
            raise IoError(str(exc)) from exc

    def to_csv(self) -> str:
        """Long-format CSV: ``t,agent,v,u0..u{p-1},xt0..xt{p-1}``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = self.dimension
        w.writerow(["t", "agent", "v"] + [f"u{k}" for k in range(p)] + [f"xt{k}" for k in range(p)])
        for t in range(self.horizon):
            for i in range(self.n_agents):
                row = [t, i, repr(float(self.v[t, i]))]
                row += [repr(float(a)) for a in self.u[t, i]]
                row += [repr(float(a)) for a in self.x_tilde[t, i]]
                w.writerow(row)
        return buf.getvalue()


def expected_feature_moment(p: int) -> np.ndarray:
    mu = 0.5 * (RIDGE_FEATURE_LO + RIDGE_FEATURE_HI)
    var = (RIDGE_FEATURE_HI - RIDGE_FEATURE_LO) ** 2 / 12.0
    return mu * mu * np.ones((p, p)) + var * np.eye(p)


def gen_ridge_stream(
    setup: Setup,
    p: int,
    horizon: int,
    n_agents: int,
    seed: int,
    penalty: float = RIDGE_PENALTY,
) -> RidgeStream:
    """Synthetic online ridge-regression data.

    Features are ``Uniform[0.3, 0.4]^p``; targets are ``u.x_tilde + noise`` with
    Gaussian noise of variance 0.5. In the stochastic setup a single
    ``x_tilde ~ Uniform[0, 5]^p`` is shared by every sample of the run; in the
    adversarial setup each ``(t, i)`` draws its own ``x_tilde ~ Uniform[0, 10]^p``.

    Agent ``i``'s samples come from the substream ``(seed, i)``, so they do
    not change when the number of agents changes.
    """
    if min(p, horizon, n_agents) < 1:
        raise ValueError("p, horizon and n_agents must all be >= 1")
    if setup not in ("stochastic", "adversarial"):
        raise ValueError(f"unknown ridge setup {setup!r}")
    u = np.empty((horizon, n_agents, p))
    noise = np.empty((horizon, n_agents))
    xt = np.empty((horizon, n_agents, p))
    if setup == "stochastic":
        shared = substream(seed, "ridge_target").uniform(0.0, 5.0, size=p)
        xt[...] = shared
    for i in range(n_agents):
        rng = substream(seed, "ridge", i)
        u[:, i] = rng.uniform(RIDGE_FEATURE_LO, RIDGE_FEATURE_HI, size=(horizon, p))
        noise[:, i] = rng.normal(0.0, math.sqrt(RIDGE_NOISE_VAR), size=horizon)
        if setup == "adversarial":
            xt[:, i] = rng.uniform(0.0, 10.0, size=(horizon, p))
    v = np.einsum("tip,tip->ti", u, xt) + noise
    return RidgeStream(setup, u, v, xt, penalty, seed)
