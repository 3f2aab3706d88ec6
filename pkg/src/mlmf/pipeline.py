"""Run configuration, fit -> cluster -> evaluate orchestration, and reports.

Configuration files are INI: a ``[run]`` section with scalar settings and
one ``[view:NAME]`` section per omics view::

    [run]
    mode = linear
    layer_sizes = 20,10
    n_clusters = 3
    seed = 0
    output = results
    survival = survival.csv

    [view:mrna]
    path = mrna.csv

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import MultiOmicsDataset, atomic_write_text, mask_view, read_view, zscore_normalize
from .errors import ConfigError, DataError
from .evaluation import evaluate, read_clinical, read_survival
from .linear import SolverConfig, fit_linear
from .nonlinear import Activation, NonlinearSolverConfig, fit_nonlinear
from .spectral import ClusterAssignment, spectral_cluster

MODES = ("linear", "nonlinear")
DEFAULT_RATES = (0.1, 0.3, 0.5, 0.7)


@dataclass
class ViewSpec:
    name: str
    path: str
    transpose: bool = False


@dataclass
class RunConfig:
    mode: str = "linear"
    views: list = field(default_factory=list)
    survival: str | None = None
    clinical: str | None = None
    labels: str | None = None
    layer_sizes: tuple = (20, 10)
    n_clusters: int = 3
    lambda1: float = 1.0
    lambda2: float = 1.0
    activation: str = "sigmoid"
    k_neighbors: int | None = None
    sigma: float | None = None
    seed: int | None = None
    max_iters: int | None = None
    tol: float = 1e-6
    normalize: bool = True
    output: str = "mlmf_output"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.views:
            raise ConfigError("no views configured")
        names = [v.name for v in self.views]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate view names {names}")
        if self.n_clusters < 2:
            raise ConfigError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be nonnegative")
        if self.k_neighbors is not None and self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma must be positive or 'auto'")
        if self.max_iters is not None and self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if not self.tol >= 0:
            raise ConfigError("tol must be >= 0")
        if self.layer_sizes[-1] < self.n_clusters:
            raise ConfigError(f"deepest layer ({self.layer_sizes[-1]}) is smaller than "
                              f"n_clusters ({self.n_clusters})")
        try:
            Activation(self.activation)
        except ValueError:
            raise ConfigError(f"unknown activation {self.activation!r}") from None
        self.solver_config()
        return self

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("a seed is required (set seed in [run] or pass --seed)")
        return self.seed

    def solver_config(self, seed=None):
        kw = dict(lambda1=self.lambda1, lambda2=self.lambda2, layer_sizes=self.layer_sizes,
                  tol=self.tol, seed=self.seed if seed is None else seed)
        if self.max_iters is not None:
            kw["max_iters"] = self.max_iters
        try:
            if self.mode == "nonlinear":
                return NonlinearSolverConfig(activation=self.activation, **kw)
            return SolverConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["views"] = [ViewSpec(**v) for v in d.get("views", [])]
        d["layer_sizes"] = tuple(d.get("layer_sizes", (20, 10)))
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _parse_value(key, raw):
    raw = raw.strip()
    if key == "layer_sizes":
        try:
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        except ValueError:
            raise ConfigError(f"layer_sizes must be comma separated integers, got {raw!r}") from None
    if key in ("n_clusters", "seed", "max_iters", "k_neighbors"):
        if key == "k_neighbors" and raw.lower() == "auto":
            return None
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    if key in ("lambda1", "lambda2", "tol", "sigma"):
        if key == "sigma" and raw.lower() == "auto":
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {raw!r}") from None
    if key == "normalize":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"normalize must be a boolean, got {raw!r}")
    return raw


def load_config(path):
    """Parse an INI run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = path.parent
    known = {f.name for f in fields(RunConfig)} - {"views"}
    values = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in known:
                raise ConfigError(f"{path}: unknown setting {key!r} in [run]")
            values[key] = _parse_value(key, raw)
    for key in ("survival", "clinical", "labels", "output"):
        if values.get(key):
            values[key] = str(base / values[key])
    views = []
    for section in parser.sections():
        if not section.startswith("view:"):
            if section != "run":
                raise ConfigError(f"{path}: unknown section [{section}]")
            continue
        name = section[len("view:"):].strip()
        if "path" not in parser[section]:
            raise ConfigError(f"{path}: [{section}] needs a path")
        transpose = parser[section].getboolean("transpose", fallback=False)
        views.append(ViewSpec(name, str(base / parser[section]["path"]), transpose))
    return RunConfig(views=views, **values)


def config_to_ini(config):
    """Render a RunConfig as INI text (paths written as given)."""
    lines = ["[run]"]
    for f in fields(RunConfig):
        if f.name == "views":
            continue
        value = getattr(config, f.name)
        if value is None:
            if f.name in ("k_neighbors", "sigma"):
                lines.append(f"{f.name} = auto")
            continue
        if f.name == "layer_sizes":
            value = ",".join(str(d) for d in value)
        lines.append(f"{f.name} = {value}")
    for v in config.views:
        lines += ["", f"[view:{v.name}]", f"path = {v.path}"]
        if v.transpose:
            lines.append("transpose = true")
    return "\n".join(lines) + "\n"


# -- reports -------------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    loss_trace: list
    iterations: int
    seconds: float
    assignment: dict
    evaluation: dict
    version: str
    seed: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def cluster_assignment(self):
        a = self.assignment
        return ClusterAssignment(np.asarray(a["labels"], dtype=int), tuple(a["sample_ids"]),
                                 int(a["k"]), float(a["wcss"]))


def _assignment_dict(assignment):
    return {"sample_ids": list(assignment.global_ids),
            "labels": [int(x) for x in assignment.labels],
            "k": int(assignment.k), "wcss": float(assignment.wcss)}


# -- ingestion -----------------------------------------------------------------

def load_dataset(config):
    views = []
    for spec in config.views:
        views.append(read_view(spec.path, spec.name, spec.transpose))
    dataset = MultiOmicsDataset(tuple(views))
    if config.normalize:
        dataset = dataset.map_views(zscore_normalize)
    return dataset


def read_labels(path):
    """Reference labels: CSV with columns sample_id,label."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"labels file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if not {"sample_id", "label"} <= set(df.columns):
        raise DataError(f"{path}: expected columns sample_id,label")
    return dict(zip(df["sample_id"], df["label"]))


def labels_to_csv(sample_ids, labels):
    rows = ["sample_id,label"] + [f"{s},{c}" for s, c in zip(sample_ids, labels)]
    return "\n".join(rows) + "\n"


def read_assignment(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"assignment file not found: {path}")
    df = pd.read_csv(path, dtype={"sample_id": str})
    if not {"sample_id", "cluster"} <= set(df.columns):
        raise DataError(f"{path}: expected columns sample_id,cluster")
    labels = df["cluster"].to_numpy(dtype=int)
    k = int(labels.max()) + 1 if len(labels) else 0
    return ClusterAssignment(labels, tuple(df["sample_id"]), k)


def assignment_to_csv(assignment):
    rows = ["sample_id,cluster"]
    rows += [f"{s},{int(c)}" for s, c in zip(assignment.global_ids, assignment.labels)]
    return "\n".join(rows) + "\n"


def trace_to_csv(trace):
    rows = ["iteration,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(trace)]
    return "\n".join(rows) + "\n"


class References:
    """Optional survival, clinical and label references for evaluation."""

    def __init__(self, survival=None, clinical=None, labels=None):
        self.survival = survival
        self.clinical = clinical
        self.labels = labels

    @classmethod
    def load(cls, config):
        return cls(read_survival(config.survival) if config.survival else None,
                   read_clinical(config.clinical) if config.clinical else None,
                   read_labels(config.labels) if config.labels else None)

    def evaluate(self, assignment):
        return evaluate(assignment, self.survival, self.clinical, self.labels)


# -- pipeline --------------------------------------------------------------------

def fit(dataset, config, seed=None):
    solver = config.solver_config(seed)
    if config.mode == "nonlinear":
        return fit_nonlinear(dataset, solver)
    return fit_linear(dataset, solver)


def run_pipeline(config, dataset=None, references=None, seed=None):
    """Fit, cluster the consensus embedding, and evaluate.

    ``seed`` overrides ``config.seed`` (used by the masking grid).
    """
    seed = config.require_seed() if seed is None else seed
    t0 = time.perf_counter()
    dataset = dataset if dataset is not None else load_dataset(config)
    references = references if references is not None else References.load(config)
    result = fit(dataset, config, seed)
    assignment = spectral_cluster(result.embedding, config.n_clusters, config.k_neighbors,
                                  config.sigma, seed=seed)
    report = references.evaluate(assignment)
    return RunReport(config=config.to_dict(), loss_trace=[float(x) for x in result.loss_trace],
                     iterations=int(result.info["iterations"]),
                     seconds=time.perf_counter() - t0,
                     assignment=_assignment_dict(assignment), evaluation=report.to_dict(),
                     version=__version__, seed=int(seed))


def write_run(report, outdir):
    outdir = Path(outdir)
    atomic_write_text(outdir / "assignment.csv", assignment_to_csv(report.cluster_assignment()))
    atomic_write_text(outdir / "loss_trace.csv", trace_to_csv(report.loss_trace))
    atomic_write_text(outdir / "report.json", report.to_json())


# -- masking grid --------------------------------------------------------------------

GRID_COLUMNS = ("rate", "repeat", "seed", "n_removed", "ari", "nmi", "logrank_p",
                "neg_log10_p", "enriched_count")


def _grid_cell(args):
    config, dataset, references, view, rate, repeat, seed = args
    cell_seed = seed + repeat
    masked = mask_view(dataset, view, rate, cell_seed)
    n_removed = dataset.view(view).n_samples - masked.view(view).n_samples
    report = run_pipeline(config, masked, references, seed=cell_seed)
    ev = report.evaluation
    return {"rate": rate, "repeat": repeat, "seed": cell_seed, "n_removed": n_removed,
            **{k: ev.get(k) for k in GRID_COLUMNS[4:]}}


def simulate_missing(config, view, rates=DEFAULT_RATES, repeats=5, seed=None, jobs=1):
    """Mask ``view`` at each rate, ``repeats`` times, and score every run.

    Cell ``(rate, repeat)`` masks and fits with seed ``seed + repeat``, so a
    rate-0 cell reproduces a plain fit with that seed. Rows come back
    rate-major, repeat-minor whatever ``jobs`` is.
    """
    seed = config.require_seed() if seed is None else seed
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    for r in rates:
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"missing rates must lie in [0, 1), got {r}")
    dataset = load_dataset(config)
    dataset.view(view)
    references = References.load(config)
    cells = [(config, dataset, references, view, float(r), rep, seed)
             for r in rates for rep in range(repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_grid_cell, cells))
    return [_grid_cell(c) for c in cells]


def grid_to_csv(rows):
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return "inf" if math.isinf(v) else repr(v)
        return str(v)
    lines = [",".join(GRID_COLUMNS)]
    lines += [",".join(fmt(row.get(c)) for c in GRID_COLUMNS) for row in rows]
    return "\n".join(lines) + "\n"
