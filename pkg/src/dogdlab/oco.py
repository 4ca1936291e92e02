"""Single-agent online learners.

Projected online gradient descent, the within-task loop used for
adaptation from a meta-learned initialization, and an exponentially
weighted learner for the one-dimensional rate parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, DomainViolation


@dataclass(frozen=True)
class Projection:
    """Euclidean projection onto a simple convex set.

    kind is ``"none"``, ``"l2_ball"`` (uses ``radius``) or ``"half_line"``
    (coordinate-wise ``max(x, floor)``).
    """

    kind: str = "none"
    radius: float = math.inf
    floor: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "l2_ball", "half_line"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.kind == "l2_ball" and not self.radius > 0:
            raise ValueError("l2_ball radius must be positive")

    @classmethod
    def l2_ball(cls, radius: float) -> Projection:
        return cls("l2_ball", radius=radius)

    @classmethod
    def half_line(cls, floor: float) -> Projection:
        return cls("half_line", floor=floor)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "l2_ball":
            nrm = float(np.linalg.norm(x))
            return x * (self.radius / nrm) if nrm > self.radius else x.copy()
        if self.kind == "half_line":
            return np.maximum(x, self.floor)
        return x.copy()

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "l2_ball":
            return float(np.linalg.norm(x)) <= self.radius * (1 + tol)
        if self.kind == "half_line":
            return bool(np.all(x >= self.floor))
        return True


NO_PROJECTION = Projection()


@dataclass
class OgdLearner:
    current_point: np.ndarray
    step_size: float
    projection: Projection = NO_PROJECTION

    def __post_init__(self) -> None:
        if not self.step_size > 0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        self.current_point = self.projection(np.asarray(self.current_point, dtype=np.float64))


def ogd_step(learner: OgdLearner, gradient) -> OgdLearner:
    """One projected gradient step, in place; returns the learner."""
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != learner.current_point.shape:
        raise DimensionMismatch(
            f"gradient shape {g.shape} does not match point shape {learner.current_point.shape}"
        )
    learner.current_point = learner.projection(learner.current_point - learner.step_size * g)
    return learner


@dataclass(frozen=True)
class WithinTaskResult:
    iterates: np.ndarray  # (m, d): the points at which losses were incurred
    step_losses: np.ndarray
    last_iterate: np.ndarray  # after the m-th update

    @property
    def total_loss(self) -> float:
        return float(self.step_losses.sum())


def within_task_run(
    phi, alpha: float, losses: Sequence, projection: Projection = NO_PROJECTION
) -> WithinTaskResult:
    """Adapt from ``phi`` over one task's ``m`` losses with step ``alpha``.

    Loss ``i`` is incurred at the current iterate before the update, so the
    first loss is always evaluated at ``phi``. ``alpha = 0`` freezes the
    learner.
    """
    if len(losses) < 1:
        raise ValueError("a task needs at least one loss")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    theta = projection(np.asarray(phi, dtype=np.float64).reshape(-1))
    iterates = np.empty((len(losses), theta.size))
    step_losses = np.empty(len(losses))
    for i, loss in enumerate(losses):
        iterates[i] = theta
        step_losses[i] = loss.eval(theta)
        theta = projection(theta - alpha * loss.grad(theta))
    return WithinTaskResult(iterates, step_losses, theta)


@dataclass
class EwooLearner:
    """Exponentially weighted average over a 1-D interval.

    The cumulative loss is kept on a uniform grid. The inverse temperature
    in round ``t`` (1-based) is ``min(t * exp_param, gamma_cap)``.
    """

    domain_lo: float
    domain_hi: float
    exp_param: float
    grid_points: int = 512
    gamma_cap: float = math.inf
    grid: np.ndarray = field(init=False, repr=False)
    cum_loss: np.ndarray = field(init=False, repr=False)
    rounds: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if not self.domain_lo < self.domain_hi:
            raise ValueError(f"empty domain [{self.domain_lo}, {self.domain_hi}]")
        if not self.exp_param > 0:
            raise ValueError("exp_param must be positive")
        if self.grid_points < 2:
            raise ValueError("need at least two grid points")
        self.grid = np.linspace(self.domain_lo, self.domain_hi, self.grid_points)
        self.cum_loss = np.zeros(self.grid_points)

    @classmethod
    def for_rate(
        cls, eps: float, diameter: float, g_lip: float, m: int, grid_points: int = 512
    ) -> EwooLearner:
        """Learner for the rate meta-loss on ``[eps, diameter]``.

        Base inverse temperature ``1 / (G sqrt(m) (hi - lo))``, capped at
        ``50 / (hi - lo)``.
        """
        width = diameter - eps
        if not width > 0:
            raise DomainViolation(f"rate domain [{eps}, {diameter}] is empty")
        return cls(
            eps,
            diameter,
            exp_param=1.0 / (g_lip * math.sqrt(m) * width),
            grid_points=grid_points,
            gamma_cap=50.0 / width,
        )

    @property
    def gamma(self) -> float:
        return min((self.rounds + 1) * self.exp_param, self.gamma_cap)

    def play(self) -> float:
        if self.rounds == 0:
            return 0.5 * (self.domain_lo + self.domain_hi)
        f = self.cum_loss
        if not np.all(np.isfinite(f)):
            raise DomainViolation("cumulative loss is not finite on the grid")
        wts = np.exp(-self.gamma * (f - f.min()))
        v = float(np.trapezoid(self.grid * wts, self.grid) / np.trapezoid(wts, self.grid))
        return min(max(v, self.domain_lo), self.domain_hi)

    def update(self, loss) -> None:
        """Add ``loss`` (anything with a vectorised ``value`` or scalar ``eval``) to the history."""
        if hasattr(loss, "value"):
            vals = np.asarray(loss.value(self.grid), dtype=np.float64)
        else:
            vals = np.array([loss.eval(np.array([g])) for g in self.grid])
        self.cum_loss = self.cum_loss + vals
        self.rounds += 1


def ewoo_step(learner: EwooLearner, new_loss) -> tuple[float, EwooLearner]:
    """Play from the current history, then absorb ``new_loss``."""
    v = learner.play()
    learner.update(new_loss)
    return v, learner
