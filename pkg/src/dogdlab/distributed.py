"""Synchronous-round engine for distributed online gradient descent.

Three algorithms share the engine:

* ``dogd_gt``: consensus step plus descent along a gradient tracker that
  mixes neighbours' trackers and adds the local gradient increment;
* ``dogd``: consensus step plus descent along the local gradient;
* ``independent_ogd``: every agent runs OGD alone.

Rounds are two-phase: every agent reads the previous round's vectors
before anything is written, and neighbour sums run in agent-index order so
results are reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np
from scipy import optimize

from . import kernels
from .errors import DimensionMismatch, DomainViolation, ShapeMismatch, StepSizeNonPositive
from .losses import RidgeStream
from .topology import WeightMatrix

Algorithm = Literal["dogd_gt", "dogd", "independent_ogd"]
ALGORITHMS: tuple[str, ...] = ("dogd_gt", "dogd", "independent_ogd")
_ALGO_CODES = {"dogd_gt": kernels.GT, "dogd": kernels.DOGD, "independent_ogd": kernels.INDEPENDENT}


@dataclass(frozen=True, eq=False)
class AgentState:
    x: np.ndarray
    s: np.ndarray | None = None  # None before the first gradient-tracking round
    prev_grad: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class RoundMetrics:
    t: int
    per_agent_loss: np.ndarray
    avg_loss: float
    cum_regret_per_agent: float
    consensus_err: float
    tracking_err: float


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of ``T`` rounds.

    Per-round series are stored as arrays; :attr:`metrics` exposes them as
    :class:`RoundMetrics` records. Trajectories are kept for diagnostics:
    ``x_traj`` has ``T + 1`` rows (the last is the model after round ``T``).
    """

    algo: str
    eta: float
    per_agent_loss: np.ndarray  # (T, N)
    regret: np.ndarray  # (T,) cumulative, per agent
    consensus_err: np.ndarray  # (T,)
    tracking_err: np.ndarray  # (T,)
    x_traj: np.ndarray  # (T+1, N, d)
    s_traj: np.ndarray  # (T, N, d), zeros for algorithms without a tracker
    grad_traj: np.ndarray  # (T, N, d)
    comparator: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.per_agent_loss.shape[0]

    @property
    def avg_loss(self) -> np.ndarray:
        return self.per_agent_loss.mean(axis=1)

    @property
    def running_avg_loss(self) -> np.ndarray:
        """``(1/(N t)) sum_{tau <= t} sum_i f_{tau,i}(x_{tau,i})``."""
        return np.cumsum(self.avg_loss) / np.arange(1, self.horizon + 1)

    @property
    def metrics(self) -> list[RoundMetrics]:
        return [
            RoundMetrics(
                t + 1,
                self.per_agent_loss[t],
                float(self.avg_loss[t]),
                float(self.regret[t]),
                float(self.consensus_err[t]),
                float(self.tracking_err[t]),
            )
            for t in range(self.horizon)
        ]

    @property
    def averaged_iterates(self) -> np.ndarray:
        """Per-agent time average of the played models, ``(1/T) sum_t x_{t,i}``."""
        return self.x_traj[:-1].mean(axis=0)

    @property
    def final_states(self) -> list[AgentState]:
        x = self.x_traj[-1]
        if self.algo == "dogd_gt":
            s = self.s_traj[-1]
            return [AgentState(x[i], s[i], self.grad_traj[-1, i]) for i in range(x.shape[0])]
        return [AgentState(x[i], None, self.grad_traj[-1, i]) for i in range(x.shape[0])]


def _check_step(eta: float) -> None:
    if not eta > 0:
        raise StepSizeNonPositive(f"step size must be positive, got {eta}")


def _stack_states(states: Sequence[AgentState], w: WeightMatrix, losses_t) -> np.ndarray:
    n = len(states)
    if n != w.n_agents or n != len(losses_t):
        raise DimensionMismatch(
            f"{n} states, {w.n_agents}x{w.n_agents} weights and {len(losses_t)} losses"
        )
    x = np.stack([np.asarray(st.x, dtype=np.float64).reshape(-1) for st in states])
    for loss in losses_t:
        if loss.dimension != x.shape[1]:
            raise DimensionMismatch(f"loss dimension {loss.dimension} != model dimension {x.shape[1]}")
    return x


def _observe(x: np.ndarray, losses_t) -> tuple[np.ndarray, np.ndarray]:
    vals = np.array([loss.eval(x[i]) for i, loss in enumerate(losses_t)])
    grads = np.stack([np.asarray(loss.grad(x[i]), dtype=np.float64) for i, loss in enumerate(losses_t)])
    return vals, grads


def _dispersion(a: np.ndarray) -> float:
    d = a - a.mean(axis=0)
    return float(np.sum(d * d))


def gt_round(
    states: Sequence[AgentState], w: WeightMatrix, losses_t, eta: float, t: int = 0
) -> tuple[list[AgentState], RoundMetrics]:
    """One gradient-tracking round.

    An agent whose ``s`` is ``None`` is in its first round and initialises
    the tracker with its fresh gradient. The returned metrics use the
    played (pre-update) models and the updated trackers; the regret field
    is NaN because it depends on a comparator.
    """
    _check_step(eta)
    x = _stack_states(states, w, losses_t)
    vals, g = _observe(x, losses_t)
    first = [st.s is None for st in states]
    if any(first) and not all(first):
        raise ValueError("agents disagree about whether this is the first round")
    if first[0]:
        s = g.copy()
    else:
        s_old = np.stack([st.s for st in states])
        prev = np.stack([st.prev_grad for st in states])
        s = (kernels.mix(w.entries, s_old) + g) - prev
    x_new = kernels.mix(w.entries, x) - eta * s
    new_states = [AgentState(x_new[i], s[i], g[i]) for i in range(len(states))]
    metrics = RoundMetrics(
        t, vals, float(vals.mean()), math.nan, _dispersion(x), _dispersion(s)
    )
    return new_states, metrics


def dogd_round(
    states: Sequence[AgentState], w: WeightMatrix, losses_t, eta: float, t: int = 0
) -> tuple[list[AgentState], RoundMetrics]:
    """Consensus step followed by descent along the local gradient.

    The tracking-error slot reports the dispersion of the local gradients.
    """
    _check_step(eta)
    x = _stack_states(states, w, losses_t)
    vals, g = _observe(x, losses_t)
    x_new = kernels.mix(w.entries, x) - eta * g
    new_states = [AgentState(x_new[i], None, g[i]) for i in range(len(states))]
    metrics = RoundMetrics(t, vals, float(vals.mean()), math.nan, _dispersion(x), _dispersion(g))
    return new_states, metrics


def ogd_round(
    states: Sequence[AgentState], losses_t, eta: float, t: int = 0
) -> tuple[list[AgentState], RoundMetrics]:
    _check_step(eta)
    x = np.stack([np.asarray(st.x, dtype=np.float64).reshape(-1) for st in states])
    vals, g = _observe(x, losses_t)
    x_new = x - eta * g
    new_states = [AgentState(x_new[i], None, g[i]) for i in range(len(states))]
    metrics = RoundMetrics(t, vals, float(vals.mean()), math.nan, _dispersion(x), _dispersion(g))
    return new_states, metrics


def eta_bound(rho: float, L_smooth: float, n_agents: int, horizon: int) -> float:
    """Largest step size for which the gradient-tracking regret bound holds.

    ``min((1 - rho^2)^1.5 / (32 L sqrt(1 + rho^2)), sqrt(N / T) / (2 L))``.
    """
    if not 0.0 <= rho < 1.0:
        raise DomainViolation(f"rho must lie in [0, 1), got {rho}")
    if not L_smooth > 0:
        raise DomainViolation(f"smoothness must be positive, got {L_smooth}")
    if n_agents < 1 or horizon < 1:
        raise DomainViolation("n_agents and horizon must be >= 1")
    r2 = rho * rho
    consensus = (1.0 - r2) ** 1.5 / (32.0 * L_smooth * math.sqrt(1.0 + r2))
    rate = math.sqrt(n_agents / horizon) / (2.0 * L_smooth)
    return min(consensus, rate)


# -- comparators ----------------------------------------------------------


def erm_minimizer(stream, tol: float = 1e-8) -> np.ndarray:
    """Minimizer of the summed loss over the whole stream.

    Closed form for ridge streams; otherwise L-BFGS until the gradient norm
    is below ``tol``.
    """
    if isinstance(stream, RidgeStream):
        p = stream.dimension
        u = stream.u.reshape(-1, p)
        v = stream.v.reshape(-1)
        a = u.T @ u + stream.penalty * u.shape[0] * np.eye(p)
        return np.linalg.solve(a, u.T @ v)
    table = _as_table(stream)
    flat = [loss for row in table for loss in row]
    dim = flat[0].dimension

    def fun(x):
        return sum(l.eval(x) for l in flat), np.sum([l.grad(x) for l in flat], axis=0)

    # gtol bounds the max-norm; scale it so the 2-norm meets tol
    opts = {"gtol": tol / math.sqrt(dim), "ftol": 0.0, "maxiter": 10_000}
    res = optimize.minimize(fun, np.zeros(dim), jac=True, method="L-BFGS-B", options=opts)
    return res.x


def _as_table(stream) -> list[list]:
    if isinstance(stream, RidgeStream):
        return stream.table()
    return [list(row) for row in stream]


def _resolve_comparator(stream, comparator) -> np.ndarray | None:
    if comparator is None:
        return None
    if isinstance(comparator, str):
        if comparator == "erm_offline":
            return erm_minimizer(stream)
        if comparator == "known_optimum":
            if not isinstance(stream, RidgeStream):
                raise ValueError("known_optimum needs a generator with a known population minimizer")
            return stream.expected_minimizer()
        raise ValueError(f"unknown comparator {comparator!r}")
    return np.asarray(comparator, dtype=np.float64).reshape(-1)


def _comparator_losses(stream, x_star: np.ndarray) -> np.ndarray:
    if isinstance(stream, RidgeStream):
        r = stream.u @ x_star - stream.v
        return r * r + stream.penalty * float(x_star @ x_star)
    return np.array([[loss.eval(x_star) for loss in row] for row in stream])


# -- runner ---------------------------------------------------------------


def _assemble(algo, eta, losses, xs, ss, gs, stream, x_star) -> RunResult:
    T = losses.shape[0]
    if x_star is not None:
        excess = losses - _comparator_losses(stream, x_star)
        regret = np.cumsum(excess.mean(axis=1))
    else:
        regret = np.full(T, math.nan)
    played = xs[:-1]
    cons = np.sum((played - played.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2))
    tracked = ss if algo == "dogd_gt" else gs
    trk = np.sum((tracked - gs.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2))
    return RunResult(algo, eta, losses, regret, cons, trk, xs, ss, gs, x_star)


def run_distributed(
    algo: Algorithm,
    stream,
    w: WeightMatrix,
    eta: float,
    comparator="erm_offline",
    x0=None,
    fast: bool = True,
) -> RunResult:
    """Run ``T`` rounds of ``algo`` over ``stream``.

    ``stream`` is either a :class:`RidgeStream` or a ``T x N`` table of loss
    oracles (``stream[t][i]``). Ridge streams go through the fused kernel
    unless ``fast`` is false. ``comparator`` is ``"erm_offline"``,
    ``"known_optimum"``, an explicit point, or ``None`` to skip regret.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}")
    _check_step(eta)
    if isinstance(stream, RidgeStream):
        T, N, d = stream.horizon, stream.n_agents, stream.dimension
    else:
        T, N = len(stream), len(stream[0])
        d = stream[0][0].dimension
    if N != w.n_agents:
        raise ShapeMismatch(f"stream has {N} agents but W is {w.n_agents}x{w.n_agents}")
    x0 = np.zeros((N, d)) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(N, d)
    x_star = _resolve_comparator(stream, comparator)

    if fast and isinstance(stream, RidgeStream):
        xs, ss, gs, losses = kernels.ridge_network_run(
            _ALGO_CODES[algo], stream.u, stream.v, stream.penalty, w.entries, eta, x0
        )
        return _assemble(algo, eta, losses, xs, ss, gs, stream, x_star)

    table = _as_table(stream)
    xs = np.empty((T + 1, N, d))
    ss = np.zeros((T, N, d))
    gs = np.empty((T, N, d))
    losses = np.empty((T, N))
    states = [AgentState(x0[i]) for i in range(N)]
    xs[0] = x0
    for t in range(T):
        if algo == "dogd_gt":
            states, m = gt_round(states, w, table[t], eta, t + 1)
            ss[t] = np.stack([st.s for st in states])
        elif algo == "dogd":
            states, m = dogd_round(states, w, table[t], eta, t + 1)
        else:
            states, m = ogd_round(states, table[t], eta, t + 1)
        losses[t] = m.per_agent_loss
        gs[t] = np.stack([st.prev_grad for st in states])
        xs[t + 1] = np.stack([st.x for st in states])
    return _assemble(algo, eta, losses, xs, ss, gs, stream, x_star)


def with_regret(result: RunResult, stream, comparator) -> RunResult:
    """Recompute the regret series of ``result`` against another comparator."""
    x_star = _resolve_comparator(stream, comparator)
    excess = result.per_agent_loss - _comparator_losses(stream, x_star)
    return replace(result, regret=np.cumsum(excess.mean(axis=1)), comparator=x_star)


def logistic_smoothness(features: np.ndarray) -> float:
    """Upper bound on the smoothness of the mean softmax cross-entropy.

    The Hessian is ``E[(diag(p) - pp^T) kron uu^T]`` and the softmax factor
    has spectral norm at most 1/2, so the top eigenvalue of the empirical
    feature second moment divided by 2 bounds it. (Dividing by 4 only bounds
    the diagonal class blocks.)
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return float(np.linalg.eigvalsh(f.T @ f / f.shape[0])[-1]) / 2.0
