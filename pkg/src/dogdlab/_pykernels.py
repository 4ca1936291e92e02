"""Pure-Python (numpy) versions of the hot loops.

These mirror ``_ckernels.pyx`` operation for operation: every reduction
runs in ascending index order with no fused multiply-adds, so both
backends produce bit-identical floats.
"""
import numpy as np

GT, DOGD, INDEPENDENT = 0, 1, 2


def mix(w, x):
    """``W @ x`` with the sum over neighbours taken in index order."""
    acc = np.zeros_like(x)
    for j in range(w.shape[1]):
        acc += w[:, j, None] * x[j]
    return acc


def _rowdot(a, b):
    acc = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        acc += a[:, k] * b[:, k]
    return acc


def ridge_network_run(algo, u, v, penalty, w, eta, x0):
    """Run ``T`` synchronous rounds on a ridge stream.

    Returns ``(xs, ss, gs, losses)`` where ``xs`` has ``T + 1`` entries
    (the last is the model after the final update) and ``ss`` is zero for
    algorithms without a tracker.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    T, N, p = u.shape
    xs = np.empty((T + 1, N, p))
    ss = np.zeros((T, N, p))
    gs = np.empty((T, N, p))
    losses = np.empty((T, N))
    x = np.array(x0, dtype=np.float64, copy=True).reshape(N, p)
    xs[0] = x
    two_pen = 2.0 * penalty
    s = None
    for t in range(T):
        r = _rowdot(u[t], x) - v[t]
        losses[t] = r * r + penalty * _rowdot(x, x)
        g = (2.0 * r)[:, None] * u[t] + two_pen * x
        gs[t] = g
        if algo == GT:
            if t == 0:
                s = g.copy()
            else:
                s = (mix(w, s) + g) - gs[t - 1]
            ss[t] = s
            x = mix(w, x) - eta * s
        elif algo == DOGD:
            x = mix(w, x) - eta * g
        elif algo == INDEPENDENT:
            x = x - eta * g
        else:
            raise ValueError(f"unknown algorithm code {algo}")
        xs[t + 1] = x
    return xs, ss, gs, losses


def ridge_ogd_paths(phi, alpha, u, y, penalty):
    """Within-task OGD for a batch of agents.

    ``phi`` is ``(N, d)``, ``alpha`` is ``(N,)``, ``u`` is ``(N, m, d)`` and
    ``y`` is ``(N, m)``. Returns per-step losses ``(N, m)`` and the
    post-update last iterate ``(N, d)``.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    N, m, d = u.shape
    theta = np.array(phi, dtype=np.float64, copy=True).reshape(N, d)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(N)
    losses = np.empty((N, m))
    two_pen = 2.0 * penalty
    for i in range(m):
        r = _rowdot(u[:, i], theta) - y[:, i]
        losses[:, i] = r * r + penalty * _rowdot(theta, theta)
        g = (2.0 * r)[:, None] * u[:, i] + two_pen * theta
        theta = theta - alpha[:, None] * g
    return losses, theta
