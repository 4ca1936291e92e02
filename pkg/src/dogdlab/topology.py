"""Communication graphs, Metropolis mixing matrices and their spectral gap."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InvariantViolation, NoConvergence, RetryExhausted
from .rng import substream

WeightMode = Literal["paper-literal", "lazy-safe"]

MAX_GRAPH_DRAWS = 10_000
EIG_FALLBACK_MAX_N = 64
SELF_WEIGHT_TOL = 1e-12


def _is_connected(n: int, edges: frozenset[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        k = queue.popleft()
        for j in adj[k]:
            if not seen[j]:
                seen[j] = True
                count += 1
                queue.append(j)
    return count == n


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on agents ``0..n_agents-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n_agents: int
    edges: frozenset[tuple[int, int]]
    connected: bool = field(init=False)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be positive, got {self.n_agents}")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-edge ({i}, {j}) not allowed")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n_agents}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        object.__setattr__(self, "connected", _is_connected(self.n_agents, self.edges))

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_agents, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        return sorted(b if a == i else a for a, b in self.edges if i in (a, b))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents), dtype=np.int64)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def to_dict(self) -> dict:
        return {"n": self.n_agents, "edges": [list(e) for e in sorted(self.edges)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> Graph:
        return cls(int(data["n"]), frozenset(tuple(e) for e in data["edges"]))

    @classmethod
    def from_json(cls, text: str) -> Graph:
        return cls.from_dict(json.loads(text))


def build_complete_graph(n: int) -> Graph:
    if n < 2:
        raise ValueError(f"complete graph needs n >= 2, got {n}")
    return Graph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def build_random_graph(n: int, edge_prob: float, seed: int) -> Graph:
    """Connected Erdős–Rényi graph by rejection sampling.

    Each draw links every pair independently with probability ``edge_prob``;
    disconnected draws are discarded. Raises :class:`RetryExhausted` after
    ``MAX_GRAPH_DRAWS`` failures.
    """
    if n < 2:
        raise ValueError(f"random graph needs n >= 2, got {n}")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must be in (0, 1], got {edge_prob}")
    rng = substream(seed, "graph", n)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(MAX_GRAPH_DRAWS):
        mask = rng.random(iu.size) < edge_prob
        g = Graph(n, frozenset(zip(iu[mask].tolist(), ju[mask].tolist())))
        if g.connected:
            return g
    raise RetryExhausted(
        f"no connected graph with n={n}, edge_prob={edge_prob} in {MAX_GRAPH_DRAWS} draws"
    )


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Doubly stochastic symmetric mixing matrix with its spectral gap ``rho``."""

    entries: np.ndarray
    rho: float

    def __post_init__(self) -> None:
        w = np.array(self.entries, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)

    @property
    def n_agents(self) -> int:
        return self.entries.shape[0]

    def to_dict(self) -> dict:
        return {"entries": self.entries.tolist(), "rho": self.rho}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> WeightMatrix:
        return cls(np.asarray(data["entries"], dtype=np.float64), float(data["rho"]))

    @classmethod
    def from_json(cls, text: str) -> WeightMatrix:
        return cls.from_dict(json.loads(text))


def metropolis_weights(g: Graph, mode: WeightMode = "lazy-safe") -> WeightMatrix:
    """Metropolis consensus weights.

    ``paper-literal`` uses ``1/max(deg_i, deg_j)`` on edges; ``lazy-safe``
    uses ``1/(1 + max(deg_i, deg_j))``. In both cases the diagonal absorbs
    the remainder of each row. The literal rule zeroes the diagonal on
    regular graphs, which is rejected with :class:`InvariantViolation`.
    """
    if not g.connected:
        raise InvariantViolation("metropolis weights require a connected graph")
    if mode not in ("paper-literal", "lazy-safe"):
        raise ValueError(f"unknown weight mode {mode!r}")
    n = g.n_agents
    deg = g.degrees
    offset = 0 if mode == "paper-literal" else 1
    w = np.zeros((n, n))
    for i, j in sorted(g.edges):
        w[i, j] = w[j, i] = 1.0 / (offset + max(deg[i], deg[j]))
    for i in range(n):
        w[i, i] = 1.0 - sum(w[i, j] for j in g.neighbors(i))
    # 1 - sum(1/deg) can leave a roundoff residue instead of an exact zero
    if np.any(np.diag(w) <= SELF_WEIGHT_TOL):
        bad = np.flatnonzero(np.diag(w) <= SELF_WEIGHT_TOL).tolist()
        raise InvariantViolation(
            f"non-positive self weight at agents {bad} ({mode}); use lazy-safe"
        )
    return WeightMatrix(w, spectral_gap(w))


def _deflated(w: np.ndarray) -> np.ndarray:
    n = w.shape[0]
    return w - np.full((n, n), 1.0 / n)


def spectral_gap(
    w: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, fallback: bool = True
) -> float:
    """Spectral norm of ``W - (1/N) 11^T`` for symmetric doubly stochastic ``W``.

    Power iteration on the square of the deflated matrix, started orthogonal
    to the all-ones vector. Squaring makes the iteration converge to the
    largest *absolute* eigenvalue even when it is negative. If the iteration
    cap is hit and ``fallback`` is set, a dense eigensolver is used for
    ``N <= 64``; otherwise :class:`NoConvergence` is raised.
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if n == 1:
        return 0.0
    m = _deflated(w)
    m2 = m @ m
    rng = substream(0, "spectral", n)
    q = rng.standard_normal(n)
    q -= q.mean()
    nrm = np.linalg.norm(q)
    if nrm == 0.0:
        return 0.0
    q /= nrm
    lam = 0.0
    for _ in range(max_iter):
        y = m2 @ q
        y -= y.mean()
        ny = np.linalg.norm(y)
        if ny <= 1e-300:
            return 0.0
        lam_new = float(q @ y)
        q = y / ny
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)) and (
            np.linalg.norm(m2 @ q - lam_new * q) <= np.sqrt(tol) * max(1.0, lam_new)
        ):
            return float(np.sqrt(max(lam_new, 0.0)))
        lam = lam_new
    if fallback and n <= EIG_FALLBACK_MAX_N:
        return spectral_gap_dense(w)
    raise NoConvergence(f"power iteration did not converge in {max_iter} steps")


def spectral_gap_dense(w: np.ndarray) -> float:
    """Reference value from a full symmetric eigendecomposition."""
    m = _deflated(np.asarray(w, dtype=np.float64))
    m = 0.5 * (m + m.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(m))))
