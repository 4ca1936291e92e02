"""Command-line entry point: ``dogdlab dogd|maoml|graph``."""
from __future__ import annotations

import json
import logging
import sys

import click

from .errors import ConfigInvalid, DogdlabError
from .harness import ExperimentConfig, inspect_graph, load_config_file, run_experiment

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _int_list(field: str, raw: str | None) -> list[int] | None:
    """Parse ``"2,4,8"`` or ``"0-9"`` (inclusive) into a list of ints."""
    if raw is None:
        return None
    out: list[int] = []
    try:
        for part in raw.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise ConfigInvalid(field, f"cannot parse {raw!r} as a list of integers") from None
    if not out:
        raise ConfigInvalid(field, "empty list")
    return out


def dataset_options(fn):
    opts = [
        click.option("--dataset-images", type=click.Path(dir_okay=False), help="IDX image file for setup 'dataset'."),
        click.option("--dataset-labels", type=click.Path(dir_okay=False), help="IDX label file for setup 'dataset'."),
        click.option("--batch-size", type=int),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON or TOML config file."),
        click.option("--n-agents", help="Agent count, or a list such as 2,4,8,16."),
        click.option("--horizon", type=int),
        click.option("--dim", type=int),
        click.option("--topology", type=str, help="random or complete."),
        click.option("--edge-prob", type=float),
        click.option("--weight-mode", type=str, help="lazy-safe or paper-literal."),
        click.option("--seeds", help="Seed list, e.g. 0-9 or 0,3,5."),
        click.option("--out", "output_dir", type=click.Path(file_okay=False)),
        click.option("-v", "--verbose", is_flag=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_config(experiment: str, params: dict) -> ExperimentConfig:
    data: dict = {}
    path = params.pop("config_path", None)
    if path is not None:
        try:
            data.update(load_config_file(path))
        except (OSError, ValueError) as exc:
            raise ConfigInvalid("config", str(exc)) from None
    for key in ("n_agents", "seeds", "m"):
        if key in params:
            params[key] = _int_list(key, params[key])
    data.update({k: v for k, v in params.items() if v is not None and v is not False})
    data["experiment"] = experiment
    return ExperimentConfig.from_dict(data).validate()


def _run(experiment: str, params: dict) -> None:
    verbose = params.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _build_config(experiment, params)
        if experiment == "graph-inspect":
            info = inspect_graph(cfg)
            click.echo(f"N = {info['n']}")
            click.echo("edges = " + " ".join(f"{a}-{b}" for a, b in info["edges"]))
            click.echo(f"rho = {info['rho']:.12g}")
            click.echo(f"eta_bound = {info['eta_bound']:.12g}")
            if params.get("output_dir") is None:
                return
        files = run_experiment(cfg)
        for p in files:
            click.echo(str(p))
    except ConfigInvalid as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (DogdlabError, OSError, ValueError, ArithmeticError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


@click.group()
def main() -> None:
    """Distributed online learning experiments."""


@main.command()
@common_options
@click.option("--experiment", type=click.Choice(["compare", "scaling"]), default="compare", show_default=True)
@dataset_options
@click.option("--setup", type=str, help="stochastic, adversarial or dataset.")
@click.option("--eta", type=float, help="Step size; defaults to the theoretical bound.")
@click.option("--per-agent", is_flag=True, help="Also write the per-agent loss matrix.")
def dogd(experiment, **params):
    """Compare DOGD-GT, DOGD and independent OGD on streaming ridge regression."""
    _run(f"dogd-{experiment}", params)


@main.command()
@common_options
@click.option("--experiment", type=click.Choice(["compare", "m-sweep"]), default="compare", show_default=True)
@click.option("--m", help="Within-task rounds, or a list for m-sweep.")
@click.option("--eta-meta", type=float)
@click.option("--g-lip", type=float)
@click.option("--sigma-task", type=float)
@click.option("--theta-star-mode", type=str, help="oracle or last_iterate.")
@click.option("--n-way", type=int, help="Classes per task for setup 'dataset'.")
@dataset_options
@click.option("--setup", type=str, help="synthetic_linreg or dataset.")
def maoml(experiment, **params):
    """Multi-agent meta-learning against the single-agent baseline."""
    _run(f"maoml-{experiment}", params)


@main.command()
@common_options
@click.option("--smoothness", type=float, help="Smoothness constant for the step bound.")
def graph(**params):
    """Print a communication graph, its spectral gap and step-size bound."""
    _run("graph-inspect", params)


if __name__ == "__main__":
    main()
