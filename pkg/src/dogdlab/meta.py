"""Multi-agent online meta-learning.

Each agent adapts to its current task by online gradient descent from a
shared-by-consensus initialization ``phi`` with step ``v / (G sqrt(m))``.
After the task, two gradient-tracking networks advance: one over the
initialization meta-loss in ``phi`` and one over the rate meta-loss in
``v`` (kept above ``eps`` by projection). The single-agent baseline
replaces both networks with a running mean of task optima and an
exponentially weighted learner for ``v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import kernels
from .datasets import LabeledDataset, sample_batches
from .distributed import AgentState, gt_round
from .errors import DomainViolation, InsufficientData, ShapeMismatch
from .losses import RIDGE_NOISE_VAR, RIDGE_PENALTY, LogisticLoss, RidgeLoss, RidgeSample, f_init, f_rate
from .oco import EwooLearner, within_task_run
from .rng import substream
from .topology import WeightMatrix

ThetaStarMode = Literal["oracle", "last_iterate"]

DEFAULT_G = 10.0
DEFAULT_ETA_META = 0.001
DEFAULT_DIAMETER = 10.0


def default_eps(horizon: int) -> float:
    """Lower end of the rate domain, ``T^(-1/4)``."""
    return 1.0 / horizon ** 0.25


@dataclass(frozen=True, eq=False)
class MetaState:
    phi: np.ndarray
    v: float


@dataclass(frozen=True, eq=False)
class Task:
    losses: Sequence
    theta_star: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.losses) < 1:
            raise ValueError("a task needs at least one loss")

    @property
    def m(self) -> int:
        return len(self.losses)

    @property
    def dimension(self) -> int:
        return self.losses[0].dimension


@dataclass(frozen=True, eq=False)
class TaskStream:
    """``T x N`` table of tasks.

    Synthetic linear-regression streams additionally carry their raw arrays
    (``u``: ``(T, N, m, d)``, ``y``: ``(T, N, m)``) so the within-task loop
    can run in the compiled kernel.
    """

    kind: str
    m: int
    dim: int
    theta0: np.ndarray | None
    sigma_task: float | None
    theta_star: np.ndarray | None = None  # (T, N, d)
    u: np.ndarray | None = None
    y: np.ndarray | None = None
    penalty: float = RIDGE_PENALTY
    task_table: list[list[Task]] | None = None
    seed: int | None = None
    _shape: tuple[int, int] = field(default=(0, 0))

    @property
    def horizon(self) -> int:
        return self._shape[0]

    @property
    def n_agents(self) -> int:
        return self._shape[1]

    @property
    def has_arrays(self) -> bool:
        return self.u is not None

    def task(self, t: int, n: int) -> Task:
        if self.task_table is not None:
            return self.task_table[t][n]
        losses = [
            RidgeLoss(RidgeSample(self.u[t, n, i], float(self.y[t, n, i]), self.penalty))
            for i in range(self.m)
        ]
        return Task(losses, self.theta_star[t, n])

    @property
    def tasks(self) -> list[list[Task]]:
        return [[self.task(t, n) for n in range(self.n_agents)] for t in range(self.horizon)]

    def column(self, n: int) -> TaskStream:
        sl = slice(n, n + 1)
        return TaskStream(
            self.kind,
            self.m,
            self.dim,
            self.theta0,
            self.sigma_task,
            None if self.theta_star is None else self.theta_star[:, sl],
            None if self.u is None else self.u[:, sl],
            None if self.y is None else self.y[:, sl],
            self.penalty,
            None if self.task_table is None else [[row[n]] for row in self.task_table],
            self.seed,
            (self.horizon, 1),
        )

    def estimated_v_phi(self) -> float:
        """Sample estimate of ``sqrt(min_phi E[B(theta*, phi)])`` (min at the mean)."""
        if self.theta_star is None:
            raise ValueError("task optima are unknown for this stream")
        flat = self.theta_star.reshape(-1, self.dim)
        if np.all(flat == flat[0]):
            return 0.0  # the mean would carry roundoff
        d = flat - flat.mean(axis=0)
        return math.sqrt(0.5 * float(np.mean(np.sum(d * d, axis=1))))


def default_theta0(d: int, seed: int) -> np.ndarray:
    return substream(seed, "tasks", 0).uniform(-1.0, 1.0, size=d)


def gen_task_stream(
    kind: str,
    d: int,
    m: int,
    n_agents: int,
    horizon: int,
    theta0=None,
    sigma_task: float = 0.5,
    seed: int = 0,
    *,
    dataset: LabeledDataset | None = None,
    n_way: int = 5,
    batch_size: int = 10,
    noise_var: float = RIDGE_NOISE_VAR,
    penalty: float = RIDGE_PENALTY,
) -> TaskStream:
    """Generate ``horizon`` tasks for each of ``n_agents`` agents.

    ``synthetic_linreg``: optima ``theta* ~ Normal(theta0, sigma_task^2 I)``;
    each of the ``m`` rounds is a ridge sample with features
    ``Normal(0, I/d)`` and target ``u.theta* + noise``. ``theta0`` defaults
    to a seeded draw from ``Uniform[-1, 1]^d``.

    ``from_dataset``: every task picks ``n_way`` classes of ``dataset`` and
    serves ``m`` batches of ``batch_size`` examples from them, labels
    re-indexed to ``0..n_way-1``; ``d`` is ignored (the model has
    ``n_features * n_way`` parameters) and task optima are unknown.
    """
    if min(m, n_agents, horizon) < 1:
        raise ValueError("m, n_agents and horizon must be >= 1")
    if sigma_task < 0:
        raise ValueError("sigma_task must be non-negative")
    if kind == "synthetic_linreg":
        if d < 1:
            raise ValueError("d must be >= 1")
        theta0 = default_theta0(d, seed) if theta0 is None else np.asarray(theta0, dtype=np.float64)
        if theta0.shape != (d,):
            raise ShapeMismatch(f"theta0 must have shape ({d},), got {theta0.shape}")
        theta_star = np.empty((horizon, n_agents, d))
        u = np.empty((horizon, n_agents, m, d))
        y = np.empty((horizon, n_agents, m))
        sd = math.sqrt(noise_var)
        for n in range(n_agents):
            rng = substream(seed, "task_data", n)
            theta_star[:, n] = theta0 + sigma_task * rng.standard_normal((horizon, d))
            u[:, n] = rng.standard_normal((horizon, m, d)) / math.sqrt(d)
            noise = sd * rng.standard_normal((horizon, m))
            y[:, n] = np.einsum("tmd,td->tm", u[:, n], theta_star[:, n]) + noise
        return TaskStream(
            kind, m, d, theta0, sigma_task, theta_star, u, y, penalty, None, seed, (horizon, n_agents)
        )
    if kind == "from_dataset":
        if dataset is None:
            raise ValueError("from_dataset needs a dataset")
        classes = np.unique(dataset.labels)
        if classes.size < n_way:
            raise InsufficientData(f"dataset has {classes.size} classes, need {n_way}")
        table: list[list[Task]] = [[None] * n_agents for _ in range(horizon)]  # type: ignore[list-item]
        for n in range(n_agents):
            rng = substream(seed, "task_data", n)
            for t in range(horizon):
                subset = np.sort(rng.choice(classes, size=n_way, replace=False))
                batches = sample_batches(
                    dataset, batch_size, m, seed=int(rng.integers(2**63)), class_subset=subset
                )
                table[t][n] = Task([LogisticLoss(b) for b in batches])
        dim = dataset.features.shape[1] * n_way
        return TaskStream(
            kind, m, dim, None, None, None, None, None, penalty, table, seed, (horizon, n_agents)
        )
    raise ValueError(f"unknown task stream kind {kind!r}")


def _within_task_all(stream: TaskStream, t: int, phi: np.ndarray, alpha: np.ndarray):
    """Adapt every agent to its task ``t``. Returns ``(step_losses (N, m), last (N, d))``."""
    if stream.has_arrays:
        return kernels.ridge_ogd_paths(phi, alpha, stream.u[t], stream.y[t], stream.penalty)
    N = stream.n_agents
    step_losses = np.empty((N, stream.m))
    last = np.empty_like(phi)
    for n in range(N):
        res = within_task_run(phi[n], float(alpha[n]), stream.task(t, n).losses)
        step_losses[n] = res.step_losses
        last[n] = res.last_iterate
    return step_losses, last


def _task_comparator_loss(stream: TaskStream, t: int, n: int) -> float:
    task = stream.task(t, n)
    if task.theta_star is not None:
        ref = task.theta_star
    elif isinstance(task.losses[0], RidgeLoss):
        u = np.stack([l.sample.u for l in task.losses])
        y = np.array([l.sample.v for l in task.losses])
        pen = task.losses[0].sample.penalty
        ref = np.linalg.solve(u.T @ u + pen * len(y) * np.eye(u.shape[1]), u.T @ y)
    else:
        from scipy import optimize

        def fun(x):
            return sum(l.eval(x) for l in task.losses), np.sum([l.grad(x) for l in task.losses], axis=0)

        ref = optimize.minimize(fun, np.zeros(task.dimension), jac=True, method="L-BFGS-B").x
    return float(sum(l.eval(ref) for l in task.losses))


def comparator_losses(stream: TaskStream) -> np.ndarray:
    """Per-task loss of the comparator: ``sum_i l^i(theta*)`` at the known optimum,
    else at the offline per-task minimizer."""
    if stream.has_arrays:
        r = np.einsum("tnmd,tnd->tnm", stream.u, stream.theta_star) - stream.y
        reg = stream.penalty * np.sum(stream.theta_star ** 2, axis=2)
        return np.sum(r * r, axis=2) + stream.m * reg
    return np.array(
        [[_task_comparator_loss(stream, t, n) for n in range(stream.n_agents)] for t in range(stream.horizon)]
    )


@dataclass(frozen=True, eq=False)
class MetaRunResult:
    """Per-task totals and meta-parameter trajectories.

    ``phi`` is ``(T + 1, N, d)`` and ``v`` is ``(T + 1, N)``; row ``t`` holds
    the values used for task ``t`` and the last row is after the final
    meta-update. ``phi_trackers`` and ``phi_grads`` record the
    initialization network's trackers and gradients for every task.
    """

    task_losses: np.ndarray  # (T, N)
    comparator: np.ndarray  # (T, N)
    phi: np.ndarray
    v: np.ndarray
    theta_used: np.ndarray  # (T, N, d)
    m: int
    phi_trackers: np.ndarray | None = None
    phi_grads: np.ndarray | None = None
    eta_phi: float | None = None

    @property
    def horizon(self) -> int:
        return self.task_losses.shape[0]

    @property
    def atar(self) -> float:
        return atar(self.task_losses, self.comparator)

    @property
    def atar_running(self) -> np.ndarray:
        excess = (self.task_losses - self.comparator).mean(axis=1)
        return np.cumsum(excess) / np.arange(1, self.horizon + 1)

    @property
    def avg_task_loss(self) -> np.ndarray:
        return self.task_losses.mean(axis=1)

    @property
    def avg_step_loss(self) -> float:
        """``(1/(N T m)) sum l^i(theta^i)``: mean loss per within-task round."""
        return float(self.task_losses.mean()) / self.m

    def phi_dist_to(self, theta0) -> np.ndarray:
        """Mean over agents of ``|phi_t - theta0|`` for each task ``t``."""
        return np.linalg.norm(self.phi[:-1] - np.asarray(theta0), axis=2).mean(axis=1)


def maoml_run(
    stream: TaskStream,
    w: WeightMatrix,
    g_lip: float = DEFAULT_G,
    eta_meta: float = DEFAULT_ETA_META,
    eps_v: float | None = None,
    theta_star_mode: ThetaStarMode = "oracle",
    *,
    eta_v: float | None = None,
    phi1=None,
    v1: float | None = None,
    diameter: float = DEFAULT_DIAMETER,
) -> MetaRunResult:
    """Run the multi-agent meta-learner over ``stream``.

    ``eps_v`` defaults to ``T^(-1/4)``; ``v1`` to the middle of
    ``[eps_v, diameter]``; ``phi1`` to zero. ``eta_v`` overrides the step of
    the rate network (default ``eta_meta``).
    """
    T, N, m, d = stream.horizon, stream.n_agents, stream.m, stream.dim
    if N != w.n_agents:
        raise ShapeMismatch(f"stream has {N} agents but W is {w.n_agents}x{w.n_agents}")
    eps_v = default_eps(T) if eps_v is None else eps_v
    if not eps_v > 0:
        raise DomainViolation(f"eps_v must be positive, got {eps_v}")
    eta_v = eta_meta if eta_v is None else eta_v
    if theta_star_mode == "oracle" and stream.theta_star is None:
        raise ValueError("oracle mode needs known task optima; use last_iterate")
    if theta_star_mode not in ("oracle", "last_iterate"):
        raise ValueError(f"unknown theta_star_mode {theta_star_mode!r}")
    v1 = 0.5 * (eps_v + diameter) if v1 is None else float(v1)
    if v1 < eps_v:
        raise DomainViolation(f"initial v={v1} below eps={eps_v}")
    phi0 = np.zeros(d) if phi1 is None else np.asarray(phi1, dtype=np.float64).reshape(d)

    scale = g_lip * math.sqrt(m)
    phi_states = [AgentState(phi0.copy()) for _ in range(N)]
    v_states = [AgentState(np.array([v1])) for _ in range(N)]
    phi_traj = np.empty((T + 1, N, d))
    v_traj = np.empty((T + 1, N))
    theta_used = np.empty((T, N, d))
    trackers = np.empty((T, N, d))
    grads = np.empty((T, N, d))
    task_losses = np.empty((T, N))

    for t in range(T):
        phi = np.stack([st.x for st in phi_states])
        v = np.array([float(st.x[0]) for st in v_states])
        phi_traj[t], v_traj[t] = phi, v
        step_losses, last = _within_task_all(stream, t, phi, v / scale)
        task_losses[t] = step_losses.sum(axis=1)
        theta = stream.theta_star[t] if theta_star_mode == "oracle" else last
        theta_used[t] = theta

        init_losses = [f_init(theta[n], g_lip, m) for n in range(N)]
        rate_losses = [
            f_rate(0.5 * float(np.sum((theta[n] - phi[n]) ** 2)), g_lip, m, eps_v) for n in range(N)
        ]
        phi_states, _ = gt_round(phi_states, w, init_losses, eta_meta, t + 1)
        trackers[t] = np.stack([st.s for st in phi_states])
        grads[t] = np.stack([st.prev_grad for st in phi_states])
        v_states, _ = gt_round(v_states, w, rate_losses, eta_v, t + 1)
        v_states = [
            AgentState(np.maximum(st.x, eps_v), st.s, st.prev_grad) for st in v_states
        ]

    phi_traj[T] = np.stack([st.x for st in phi_states])
    v_traj[T] = np.array([float(st.x[0]) for st in v_states])
    return MetaRunResult(
        task_losses,
        comparator_losses(stream),
        phi_traj,
        v_traj,
        theta_used,
        m,
        trackers,
        grads,
        eta_meta,
    )


def aruba_run(
    stream: TaskStream,
    g_lip: float = DEFAULT_G,
    horizon: int | None = None,
    theta_star_mode: ThetaStarMode = "oracle",
    *,
    phi1=None,
    diameter: float = DEFAULT_DIAMETER,
    grid_points: int = 512,
) -> MetaRunResult:
    """Single-agent baseline, run independently on every column of ``stream``.

    ``phi_t`` is the mean of the previous task optima (``phi1`` for the first
    task); ``v_t`` is played by an :class:`EwooLearner` over the rate
    meta-losses on ``[T^(-1/4), diameter]``. ``horizon`` sets ``T`` in the
    domain floor and defaults to the stream length.
    """
    T, N, m, d = stream.horizon, stream.n_agents, stream.m, stream.dim
    horizon = T if horizon is None else horizon
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if theta_star_mode == "oracle" and stream.theta_star is None:
        raise ValueError("oracle mode needs known task optima; use last_iterate")
    eps = default_eps(horizon)
    scale = g_lip * math.sqrt(m)
    learners = [EwooLearner.for_rate(eps, diameter, g_lip, m, grid_points) for _ in range(N)]
    phi = np.zeros((N, d)) if phi1 is None else np.tile(np.asarray(phi1, dtype=np.float64), (N, 1))
    theta_sum = np.zeros((N, d))
    phi_traj = np.empty((T + 1, N, d))
    v_traj = np.empty((T + 1, N))
    theta_used = np.empty((T, N, d))
    task_losses = np.empty((T, N))

    for t in range(T):
        v = np.array([lr.play() for lr in learners])
        phi_traj[t], v_traj[t] = phi, v
        step_losses, last = _within_task_all(stream, t, phi, v / scale)
        task_losses[t] = step_losses.sum(axis=1)
        theta = stream.theta_star[t] if theta_star_mode == "oracle" else last
        theta_used[t] = theta
        for n in range(N):
            b = 0.5 * float(np.sum((theta[n] - phi[n]) ** 2))
            learners[n].update(f_rate(b, g_lip, m, eps))
        theta_sum += theta
        phi = theta_sum / (t + 1)

    phi_traj[T] = phi
    v_traj[T] = np.array([lr.play() for lr in learners])
    return MetaRunResult(task_losses, comparator_losses(stream), phi_traj, v_traj, theta_used, m)


def atar(task_losses, comparator_losses) -> float:
    """Agent-task-averaged regret: mean over all ``(t, n)`` of task loss minus comparator."""
    a = np.asarray(task_losses, dtype=np.float64)
    b = np.asarray(comparator_losses, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"task losses {a.shape} vs comparator {b.shape}")
    return float(np.mean(a - b))
