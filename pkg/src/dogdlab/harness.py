"""Experiment configuration, sweeps over seeds, and file output.

Every run writes ``config.json`` and ``manifest.json`` (SHA-256 of every
output file) next to its CSVs. Outputs are staged in a hidden directory and
moved into place only when the whole experiment succeeds.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import distributed, meta, topology
from .datasets import load_dataset, sample_batches
from .errors import ConfigInvalid
from .losses import RIDGE_PENALTY, LogisticLoss, expected_feature_moment, gen_ridge_stream
from .rng import substream

log = logging.getLogger(__name__)

EXPERIMENTS = ("dogd-compare", "dogd-scaling", "maoml-compare", "maoml-m-sweep", "graph-inspect")
RUN_HEADER = ("t", "avg_loss", "regret", "consensus_err", "tracking_err")
META_HEADER = ("t", "avg_task_loss", "atar_running", "mean_v", "mean_phi_dist_to_theta0")


@dataclass
class ExperimentConfig:
    experiment: str = "dogd-compare"
    n_agents: list[int] = field(default_factory=lambda: [8])
    horizon: int = 2000
    m: list[int] = field(default_factory=lambda: [10])
    dim: int = 10
    eta: float | None = None
    eta_meta: float = meta.DEFAULT_ETA_META
    g_lip: float = meta.DEFAULT_G
    topology: str = "random"
    edge_prob: float = 0.5
    weight_mode: str = "lazy-safe"
    setup: str | None = None  # stochastic for ridge runs, synthetic_linreg for meta runs
    sigma_task: float = 0.5
    theta_star_mode: str | None = None  # oracle, or last_iterate for dataset tasks
    dataset_images: str | None = None
    dataset_labels: str | None = None
    batch_size: int = 10
    n_way: int = 5
    penalty: float = RIDGE_PENALTY
    smoothness: float | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    per_agent: bool = False

    def validate(self) -> ExperimentConfig:
        if self.experiment not in EXPERIMENTS:
            raise ConfigInvalid("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        for name in ("n_agents", "m", "seeds"):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals:
                raise ConfigInvalid(name, "must be a non-empty list")
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
                raise ConfigInvalid(name, "must contain integers")
        if any(n < 1 for n in self.n_agents):
            raise ConfigInvalid("n_agents", "must be positive")
        if self.topology == "random" and any(n < 2 for n in self.n_agents):
            raise ConfigInvalid("n_agents", "random graphs need at least 2 agents")
        if any(v < 1 for v in self.m):
            raise ConfigInvalid("m", "must be positive")
        if any(s < 0 for s in self.seeds):
            raise ConfigInvalid("seeds", "must be non-negative")
        for name in ("horizon", "dim"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigInvalid(name, "must be a positive integer")
        for name in ("eta", "smoothness"):
            val = getattr(self, name)
            if val is not None and not (math.isfinite(val) and val > 0):
                raise ConfigInvalid(name, "must be positive")
        for name in ("eta_meta", "g_lip", "penalty"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigInvalid(name, "must be positive")
        if not self.sigma_task >= 0:
            raise ConfigInvalid("sigma_task", "must be non-negative")
        if self.topology not in ("random", "complete"):
            raise ConfigInvalid("topology", "must be 'random' or 'complete'")
        if not 0 < self.edge_prob <= 1:
            raise ConfigInvalid("edge_prob", "must lie in (0, 1]")
        if self.weight_mode not in ("lazy-safe", "paper-literal"):
            raise ConfigInvalid("weight_mode", "must be 'lazy-safe' or 'paper-literal'")
        ridge = self.experiment.startswith("dogd") or self.experiment == "graph-inspect"
        allowed = ("stochastic", "adversarial", "dataset") if ridge else ("synthetic_linreg", "dataset")
        if self.setup is None:
            self.setup = allowed[0]
        if self.setup not in allowed:
            raise ConfigInvalid("setup", f"must be one of {', '.join(allowed)} for {self.experiment}")
        if self.setup == "dataset":
            if self.experiment == "graph-inspect":
                raise ConfigInvalid("setup", "graph-inspect uses the ridge smoothness estimate")
            for name in ("dataset_images", "dataset_labels"):
                path = getattr(self, name)
                if path is None or not Path(path).is_file():
                    raise ConfigInvalid(name, "setup 'dataset' needs an existing IDX file")
            for name in ("batch_size", "n_way"):
                if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                    raise ConfigInvalid(name, "must be a positive integer")
        if self.theta_star_mode is None:
            self.theta_star_mode = "last_iterate" if self.setup == "dataset" else "oracle"
        if self.theta_star_mode not in ("oracle", "last_iterate"):
            raise ConfigInvalid("theta_star_mode", "must be 'oracle' or 'last_iterate'")
        if self.setup == "dataset" and self.theta_star_mode == "oracle":
            raise ConfigInvalid("theta_star_mode", "dataset tasks have no known optimum; use last_iterate")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigInvalid(key, "unknown configuration key")
        data = dict(data)
        for key in ("n_agents", "m", "seeds"):
            if key in data and isinstance(data[key], int):
                data[key] = [data[key]]
        return cls(**data)


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    return {k.replace("-", "_"): v for k, v in data.items()}


# -- CSV output -----------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else _fmt(v)) for v in row])
    return path


def emit_csv(result: distributed.RunResult, path) -> Path:
    """Write the per-round series of ``result`` as CSV (17 significant digits)."""
    path = Path(path)
    rows = (
        (t + 1, result.avg_loss[t], result.regret[t], result.consensus_err[t], result.tracking_err[t])
        for t in range(result.horizon)
    )
    return _write_rows(path, RUN_HEADER, rows)


def emit_agent_csv(result: distributed.RunResult, path) -> Path:
    n = result.per_agent_loss.shape[1]
    rows = ((t + 1, *result.per_agent_loss[t]) for t in range(result.horizon))
    return _write_rows(Path(path), ["t"] + [f"agent{i}" for i in range(n)], rows)


def emit_meta_csv(result: meta.MetaRunResult, path, theta0=None) -> Path:
    dist = result.phi_dist_to(theta0) if theta0 is not None else np.full(result.horizon, math.nan)
    mean_v = result.v[:-1].mean(axis=1)
    rows = (
        (t + 1, result.avg_task_loss[t], result.atar_running[t], mean_v[t], dist[t])
        for t in range(result.horizon)
    )
    return _write_rows(Path(path), META_HEADER, rows)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(rows[0]))
    return rows[0], data


# -- experiment plumbing --------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get("DOGDLAB_THREADS", "")
    try:
        return max(1, int(raw)) if raw else min(8, os.cpu_count() or 1)
    except ValueError:
        return 1


def _pmap(fn: Callable, items: Sequence) -> list:
    """Map over items with the worker pool; results in input order."""
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_weights(cfg: ExperimentConfig, n: int, seed: int) -> topology.WeightMatrix:
    if n == 1:
        return topology.WeightMatrix(np.ones((1, 1)), 0.0)
    if cfg.topology == "complete":
        g = topology.build_complete_graph(n)
    else:
        g = topology.build_random_graph(n, cfg.edge_prob, seed)
    return topology.metropolis_weights(g, cfg.weight_mode)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset(cfg: ExperimentConfig):
    return load_dataset(cfg.dataset_images, cfg.dataset_labels)


def logistic_stream(ds, n_agents: int, horizon: int, batch_size: int, seed: int) -> list[list]:
    """``horizon x n_agents`` table of logistic losses on independent batches."""
    cols = []
    for i in range(n_agents):
        sub = int(substream(seed, "batches", i).integers(2**63))
        cols.append([LogisticLoss(b) for b in sample_batches(ds, batch_size, horizon, sub)])
    return [[cols[i][t] for i in range(n_agents)] for t in range(horizon)]


def _dogd_job(cfg: ExperimentConfig, algos: Sequence[str]):
    ds = _dataset(cfg) if cfg.setup == "dataset" else None

    def job(item):
        n, seed = item
        w = build_weights(cfg, n, seed)
        if ds is None:
            stream = gen_ridge_stream(cfg.setup, cfg.dim, cfg.horizon, n, seed, cfg.penalty)
            smooth = stream.smoothness()
        else:
            stream = logistic_stream(ds, n, cfg.horizon, cfg.batch_size, seed)
            smooth = distributed.logistic_smoothness(ds.features)
        eta = cfg.eta
        if eta is None:
            eta = distributed.eta_bound(w.rho, smooth, n, cfg.horizon)
        # resolved once so the offline minimizer is shared by all algorithms
        comparator = distributed._resolve_comparator(
            stream, "known_optimum" if cfg.setup == "stochastic" else "erm_offline"
        )
        return {
            algo: distributed.run_distributed(algo, stream, w, eta, comparator) for algo in algos
        }

    return job


def _run_dogd(cfg: ExperimentConfig, out: Path, scaling: bool) -> list[Path]:
    algos = ("dogd_gt",) if scaling else distributed.ALGORITHMS
    ns = cfg.n_agents if scaling else cfg.n_agents[:1]
    items = [(n, s) for n in ns for s in cfg.seeds]
    results = _pmap(_dogd_job(cfg, algos), items)
    files = []
    summary = []
    for (n, seed), res in zip(items, results):
        for algo in algos:
            r = res[algo]
            stem = f"{algo}_N{n}_seed{seed}" if scaling else f"{algo}_seed{seed}"
            files.append(emit_csv(r, out / f"{stem}.csv"))
            if cfg.per_agent:
                files.append(emit_agent_csv(r, out / f"{stem}_agents.csv"))
            summary.append(
                (algo, n, seed, r.eta, float(r.avg_loss.mean()), float(r.avg_loss[-1]), float(r.regret[-1]))
            )
    header = ("algo", "n_agents", "seed", "eta", "mean_avg_loss", "last_avg_loss", "final_regret")
    files.append(_write_rows(out / "summary.csv", header, summary))
    return files


def _meta_job(cfg: ExperimentConfig, with_aruba: bool):
    ds = _dataset(cfg) if cfg.setup == "dataset" else None

    def job(item):
        n, m, seed = item
        if ds is None:
            stream = meta.gen_task_stream(
                "synthetic_linreg", cfg.dim, m, n, cfg.horizon, sigma_task=cfg.sigma_task, seed=seed
            )
        else:
            stream = meta.gen_task_stream(
                "from_dataset", cfg.dim, m, n, cfg.horizon, seed=seed,
                dataset=ds, n_way=cfg.n_way, batch_size=cfg.batch_size,
            )
        w = build_weights(cfg, n, seed)
        out = {
            "maoml": meta.maoml_run(
                stream, w, cfg.g_lip, cfg.eta_meta, theta_star_mode=cfg.theta_star_mode
            )
        }
        if with_aruba:
            out["aruba"] = meta.aruba_run(stream, cfg.g_lip, theta_star_mode=cfg.theta_star_mode)
        return stream, out

    return job


def _run_meta(cfg: ExperimentConfig, out: Path, m_sweep: bool) -> list[Path]:
    ns = cfg.n_agents[:1] if m_sweep else cfg.n_agents
    ms = cfg.m if m_sweep else cfg.m[:1]
    items = [(n, m, s) for n in ns for m in ms for s in cfg.seeds]
    results = _pmap(_meta_job(cfg, not m_sweep), items)
    files = []
    summary = []
    for (n, m, seed), (stream, res) in zip(items, results):
        for method, r in res.items():
            # the baseline runs single-agent on each of the n columns
            stem = f"{method}_N{n}_m{m}_seed{seed}"
            files.append(emit_meta_csv(r, out / f"{stem}.csv", stream.theta0))
            summary.append((method, n, m, seed, r.atar, r.avg_step_loss, float(r.v[-1].mean())))
    header = ("method", "n_agents", "m", "seed", "final_atar", "avg_step_loss", "final_mean_v")
    files.append(_write_rows(out / "summary.csv", header, summary))
    return files


def inspect_graph(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    n = cfg.n_agents[0]
    seed = cfg.seeds[0] if seed is None else seed
    w = build_weights(cfg, n, seed)
    if cfg.smoothness is not None:
        L = cfg.smoothness
    else:
        mom = expected_feature_moment(cfg.dim)
        L = 2.0 * float(np.linalg.eigvalsh(mom)[-1]) + 2.0 * cfg.penalty
    g = topology.build_complete_graph(n) if cfg.topology == "complete" else topology.build_random_graph(
        n, cfg.edge_prob, seed
    )
    return {
        "n": n,
        "edges": [list(e) for e in sorted(g.edges)],
        "rho": w.rho,
        "smoothness": L,
        "eta_bound": distributed.eta_bound(w.rho, L, n, cfg.horizon),
        "weights": w.entries.tolist(),
    }


def _run_graph(cfg: ExperimentConfig, out: Path) -> list[Path]:
    info = inspect_graph(cfg)
    path = out / "graph.json"
    path.write_text(json.dumps(info, indent=2) + "\n")
    return [path]


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """Run ``cfg`` and return the written files (inside ``cfg.output_dir``)."""
    cfg.validate()
    final = Path(cfg.output_dir)
    final.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=final))
    try:
        if cfg.experiment == "dogd-compare":
            files = _run_dogd(cfg, stage, scaling=False)
        elif cfg.experiment == "dogd-scaling":
            files = _run_dogd(cfg, stage, scaling=True)
        elif cfg.experiment == "maoml-compare":
            files = _run_meta(cfg, stage, m_sweep=False)
        elif cfg.experiment == "maoml-m-sweep":
            files = _run_meta(cfg, stage, m_sweep=True)
        else:
            files = _run_graph(cfg, stage)
        cfg_path = stage / "config.json"
        cfg_path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        files.append(cfg_path)
        manifest = {p.name: _sha256(p) for p in sorted(files)}
        man_path = stage / "manifest.json"
        man_path.write_text(json.dumps({"files": manifest}, indent=2, sort_keys=True) + "\n")
        files.append(man_path)
        moved = []
        for p in files:
            dest = final / p.name
            os.replace(p, dest)
            moved.append(dest)
        log.info("wrote %d files to %s", len(moved), final)
        return moved
    finally:
        shutil.rmtree(stage, ignore_errors=True)
