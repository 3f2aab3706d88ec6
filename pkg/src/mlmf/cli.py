"""Command line front-end: ``mlmf fit | simulate-missing | generate | evaluate``.

Failures exit with the error's code (config 2, ingestion 3, solver 4,
evaluation 5) and print one line to stderr of the form
``mlmf-error[<code>:<category>] <message>``.
"""

from __future__ import annotations

import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import click

from . import __version__
from .data import atomic_write_text, write_view
from .errors import ConfigError, MLMFError
from .evaluation import clinical_to_csv, generate_clinical, generate_survival, generate_synthetic, survival_to_csv
from .pipeline import (
    DEFAULT_RATES,
    References,
    RunConfig,
    ViewSpec,
    config_to_ini,
    grid_to_csv,
    labels_to_csv,
    load_config,
    read_assignment,
    run_pipeline,
    simulate_missing,
    write_run,
)


def error_line(exc):
    code = getattr(exc, "exit_code", 1)
    category = getattr(exc, "category", "error")
    # KeyError subclasses repr() their message; use the raw argument
    raw = exc.args[0] if len(exc.args) == 1 else str(exc)
    message = " ".join(str(raw).split()) or type(exc).__name__
    return f"mlmf-error[{code}:{category}] {message}"


def _parse_layers(value):
    if value is None:
        return None
    try:
        return tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"--layers must be comma separated integers, got {value!r}") from None


def _parse_views(values):
    specs = []
    for item in values:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--view expects NAME=PATH, got {item!r}")
        specs.append(ViewSpec(name, path))
    return specs


def build_config(config_path, overrides):
    """Config file (if any) with command line overrides applied on top."""
    config = load_config(config_path) if config_path else RunConfig()
    views = _parse_views(overrides.pop("view", ()) or ())
    if views:
        config.views = views
    layers = _parse_layers(overrides.pop("layers", None))
    if layers:
        overrides["layer_sizes"] = layers
    sigma = overrides.pop("sigma", None)
    if sigma is not None:
        overrides["sigma"] = None if sigma.lower() == "auto" else _float("--sigma", sigma)
    knn = overrides.pop("k_neighbors", None)
    if knn is not None:
        overrides["k_neighbors"] = None if knn.lower() == "auto" else _int("--k-neighbors", knn)
    changes = {k: v for k, v in overrides.items() if v is not None}
    config = replace(config, **changes)
    return config.validate()


def _float(flag, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{flag} must be a number or 'auto', got {raw!r}") from None


def _int(flag, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{flag} must be an integer or 'auto', got {raw!r}") from None


def run_config_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False),
                     help="INI run configuration."),
        click.option("--view", multiple=True, help="NAME=PATH; repeat per view. Replaces config views."),
        click.option("--mode", type=click.Choice(["linear", "nonlinear"])),
        click.option("--layers", help="Layer sizes, e.g. 20,10."),
        click.option("--clusters", "n_clusters", type=int),
        click.option("--lambda1", type=float),
        click.option("--lambda2", type=float),
        click.option("--activation", type=click.Choice(["sigmoid", "softplus", "relu"])),
        click.option("--k-neighbors", "k_neighbors", help="Integer or 'auto'."),
        click.option("--sigma", help="Positive number or 'auto'."),
        click.option("--max-iters", "max_iters", type=int),
        click.option("--tol", type=float),
        click.option("--survival", type=click.Path(dir_okay=False)),
        click.option("--clinical", type=click.Path(dir_okay=False)),
        click.option("--labels", type=click.Path(dir_okay=False), help="Reference labels CSV."),
        click.option("--output", "-o", type=click.Path(file_okay=False)),
        click.option("--seed", type=int, help="Required unless set in the config."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


@click.group()
@click.version_option(__version__, prog_name="mlmf")
def cli():
    """Multi-layer matrix factorization clustering of multi-omics data."""


@cli.command()
@run_config_options
def fit(config_path, **overrides):
    """Fit, cluster and evaluate; writes assignment.csv, loss_trace.csv and
    report.json to the output directory."""
    config = build_config(config_path, overrides)
    config.require_seed()
    report = run_pipeline(config)
    write_run(report, config.output)
    ev = report.evaluation
    parts = [f"iterations={report.iterations}", f"final_loss={report.loss_trace[-1]:.6g}"]
    parts += [f"{k}={ev[k]:.4g}" for k in ("ari", "nmi", "logrank_p") if ev.get(k) is not None]
    if ev.get("enriched_count") is not None:
        parts.append(f"enriched_count={ev['enriched_count']}")
    click.echo(" ".join(parts))


@cli.command("simulate-missing")
@run_config_options
@click.option("--mask-view", "mask_view_name", required=True, help="View to mask.")
@click.option("--rates", default=",".join(str(r) for r in DEFAULT_RATES), show_default=True)
@click.option("--repeats", default=5, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
def simulate_missing_cmd(config_path, mask_view_name, rates, repeats, jobs, **overrides):
    """Mask one view at several rates and score each run; writes
    missing_grid.csv (rate-major, repeat-minor)."""
    config = build_config(config_path, overrides)
    try:
        rate_list = [float(r) for r in rates.split(",") if r.strip()]
    except ValueError:
        raise ConfigError(f"--rates must be comma separated numbers, got {rates!r}") from None
    rows = simulate_missing(config, mask_view_name, rate_list, repeats, jobs=jobs)
    out = Path(config.output) / "missing_grid.csv"
    atomic_write_text(out, grid_to_csv(rows))
    click.echo(f"wrote {len(rows)} rows to {out}")


@cli.command()
@click.option("--output", "-o", required=True, type=click.Path(file_okay=False))
@click.option("--seed", required=True, type=int)
@click.option("--clusters", default=3, show_default=True, type=int)
@click.option("--samples-per-cluster", default=50, show_default=True, type=int)
@click.option("--view", "views", multiple=True,
              help="NAME:DIM:SIGMA; repeat per view. Default mrna:100:0.1 and meth:80:0.1.")
@click.option("--survival/--no-survival", default=True, show_default=True)
@click.option("--clinical/--no-clinical", default=True, show_default=True)
def generate(output, seed, clusters, samples_per_cluster, views, survival, clinical):
    """Write a synthetic dataset with known labels plus a ready-to-run
    config.ini."""
    specs = []
    for item in views or ("mrna:100:0.1", "meth:80:0.1"):
        try:
            name, dim, sigma = item.split(":")
            specs.append((name, int(dim), float(sigma)))
        except ValueError:
            raise ConfigError(f"--view expects NAME:DIM:SIGMA, got {item!r}") from None
    if clusters < 1 or samples_per_cluster < 1:
        raise ConfigError("--clusters and --samples-per-cluster must be positive")
    dataset, labels = generate_synthetic(clusters, samples_per_cluster,
                                         [(d, s) for _, d, s in specs], seed=seed,
                                         view_names=[n for n, _, _ in specs])
    out = Path(output)
    config = RunConfig(views=[ViewSpec(v.name, f"{v.name}.csv") for v in dataset.views],
                       n_clusters=max(2, clusters), seed=seed, labels="labels.csv",
                       output="results")
    for v in dataset.views:
        write_view(v, out / f"{v.name}.csv")
    atomic_write_text(out / "labels.csv", labels_to_csv(dataset.global_ids, labels))
    if survival:
        records = generate_survival(labels, dataset.global_ids, seed=seed)
        atomic_write_text(out / "survival.csv", survival_to_csv(records))
        config.survival = "survival.csv"
    if clinical:
        table = generate_clinical(labels, dataset.global_ids, seed=seed)
        atomic_write_text(out / "clinical.csv", clinical_to_csv(table))
        config.clinical = "clinical.csv"
    atomic_write_text(out / "config.ini", config_to_ini(config))
    click.echo(f"wrote {len(dataset.views)} views and {len(labels)} labels to {out}")


@cli.command("evaluate")
@click.option("--assignment", required=True, type=click.Path(dir_okay=False),
              help="CSV with columns sample_id,cluster.")
@click.option("--survival", type=click.Path(dir_okay=False))
@click.option("--clinical", type=click.Path(dir_okay=False))
@click.option("--labels", type=click.Path(dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False),
              help="Write the report JSON here instead of stdout.")
def evaluate_cmd(assignment, survival, clinical, labels, output):
    """Re-score an existing assignment against survival, clinical or label
    files."""
    refs = References.load(RunConfig(survival=survival, clinical=clinical, labels=labels))
    report = refs.evaluate(read_assignment(assignment))
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if output:
        atomic_write_text(output, text)
    else:
        click.echo(text, nl=False)


def main(argv=None):
    """Entry point; maps package errors to exit codes."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cli.main(args=argv, prog_name="mlmf", standalone_mode=False)
    except MLMFError as exc:
        click.echo(error_line(exc), err=True)
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("mlmf-error[1:error] aborted", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        click.echo(f"mlmf-error[2:config] {' '.join(exc.format_message().split())}", err=True)
        sys.exit(2)
    sys.exit(0)
