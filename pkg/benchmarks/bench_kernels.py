"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--horizon 2000] [--n-agents 8] [--repeat 5]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dogdlab import kernels
from dogdlab.losses import gen_ridge_stream
from dogdlab.meta import gen_task_stream
from dogdlab.topology import build_random_graph, metropolis_weights


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=int, default=2000)
    ap.add_argument("--n-agents", type=int, default=8)
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    stream = gen_ridge_stream("stochastic", args.dim, args.horizon, args.n_agents, seed=0)
    w = metropolis_weights(build_random_graph(args.n_agents, 0.5, seed=0))
    x0 = np.zeros((args.n_agents, args.dim))
    tasks = gen_task_stream("synthetic_linreg", args.dim, 10, args.n_agents, 200, seed=0)
    phi = np.zeros((args.n_agents, args.dim))
    alpha = np.full(args.n_agents, 0.05)

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}  (T={args.horizon}, N={args.n_agents}, p={args.dim})")
    timings: dict[str, dict[str, float]] = {}
    outputs: dict[str, list] = {}
    for name in backends:
        be = kernels.get_backend(name)
        row = {}
        outs = []
        for algo, code in (("dogd_gt", kernels.GT), ("dogd", kernels.DOGD), ("independent_ogd", kernels.INDEPENDENT)):
            run = lambda: be.ridge_network_run(code, stream.u, stream.v, stream.penalty, w.entries, 0.001, x0)
            row[algo] = best_of(run, args.repeat)
            outs.append(run())

        def paths():
            return [be.ridge_ogd_paths(phi, alpha, tasks.u[t], tasks.y[t], tasks.penalty) for t in range(200)]

        row["within_task x200"] = best_of(paths, args.repeat)
        outs.append(paths())
        timings[name] = row
        outputs[name] = outs

    header = f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for key in timings[backends[0]]:
        line = f"{key:<18}" + "".join(f"{timings[b][key]:>11.4f}s" for b in backends)
        if len(backends) == 2:
            line += f"{timings['python'][key] / timings['cython'][key]:>9.1f}x"
        print(line)
    if len(backends) == 2:
        same = all(
            all(np.array_equal(a, b) for a, b in zip(_flat(p), _flat(c)))
            for p, c in zip(outputs["python"], outputs["cython"])
        )
        print(f"bit-identical outputs: {same}")


def _flat(obj):
    if isinstance(obj, np.ndarray):
        yield obj
    else:
        for item in obj:
            yield from _flat(item)


if __name__ == "__main__":
    main()
