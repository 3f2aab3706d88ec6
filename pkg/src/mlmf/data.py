"""Multi-omics dataset container, sample indicator matrices and preprocessing.

Dimension conventions used throughout the package:

* a view matrix is ``features x samples`` (``D_v x N_v``),
* the consensus embedding is ``d x N`` over the global sample universe,
* an indicator matrix is ``N x N_v`` so that ``H @ G`` selects the consensus
  columns of the samples present in the view.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DegenerateShape,
    DuplicateSample,
    NonFiniteInput,
    OrphanedSample,
    UnknownSample,
    UnknownView,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for s in ids:
        if s in seen:
            raise DuplicateSample(f"duplicate sample id {s!r} in {what}")
        seen.add(s)


@dataclass(frozen=True)
class OmicsView:
    """One feature matrix (features x present samples) and its sample ids."""

    name: str
    matrix: np.ndarray
    sample_ids: tuple
    feature_ids: tuple | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise DegenerateShape(f"view {self.name!r}: matrix must be 2-D, got {m.ndim}-D")
        ids = tuple(str(s) for s in self.sample_ids)
        if m.shape[1] != len(ids):
            raise DegenerateShape(
                f"view {self.name!r}: {m.shape[1]} columns but {len(ids)} sample ids")
        if not np.all(np.isfinite(m)):
            raise NonFiniteInput(f"view {self.name!r} contains NaN or Inf entries")
        _check_unique(ids, f"view {self.name!r}")
        feats = None
        if self.feature_ids is not None:
            feats = tuple(str(f) for f in self.feature_ids)
            if len(feats) != m.shape[0]:
                raise DegenerateShape(
                    f"view {self.name!r}: {m.shape[0]} rows but {len(feats)} feature ids")
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "feature_ids", feats)

    @property
    def n_features(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[1]

    def drop_samples(self, ids: Iterable[str]) -> "OmicsView":
        drop = set(ids)
        keep = [j for j, s in enumerate(self.sample_ids) if s not in drop]
        return replace(self, matrix=self.matrix[:, keep],
                       sample_ids=tuple(self.sample_ids[j] for j in keep))

    def __eq__(self, other):
        if not isinstance(other, OmicsView):
            return NotImplemented
        return (self.name == other.name and self.sample_ids == other.sample_ids
                and self.matrix.shape == other.matrix.shape
                and bool(np.array_equal(self.matrix, other.matrix)))

    __hash__ = None


@dataclass(frozen=True)
class IndicatorMatrix:
    """Binary ``N x N_v`` selector: ``entries[i, j] == 1`` iff global sample i
    is the j-th sample of the view."""

    entries: np.ndarray
    view_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(np.asarray(self.entries, dtype=np.int64)))

    @property
    def positions(self) -> np.ndarray:
        """Global slot of each present sample (length ``N_v``)."""
        return np.argmax(self.entries, axis=0)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class MultiOmicsDataset:
    """A set of views over a shared sample universe.

    ``global_ids`` defaults to the union of the views' ids in order of first
    appearance. Samples present in no view are rejected.
    """

    views: tuple
    global_ids: tuple = field(default=None)

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise DataError("a dataset needs at least one view")
        names = [v.name for v in views]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate view names: {names}")
        if self.global_ids is None:
            seen = {}
            for v in views:
                for s in v.sample_ids:
                    seen.setdefault(s, None)
            gids = tuple(seen)
        else:
            gids = tuple(str(s) for s in self.global_ids)
            _check_unique(gids, "global ids")
        universe = set(gids)
        covered = set()
        for v in views:
            for s in v.sample_ids:
                if s not in universe:
                    raise UnknownSample(f"sample {s!r} of view {v.name!r} not in global ids")
            covered.update(v.sample_ids)
        orphans = [s for s in gids if s not in covered]
        if orphans:
            raise OrphanedSample(
                f"{len(orphans)} sample(s) present in no view, e.g. {orphans[0]!r}")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "global_ids", gids)

    @property
    def n_samples(self) -> int:
        return len(self.global_ids)

    @property
    def view_names(self) -> list:
        return [v.name for v in self.views]

    def view(self, name: str) -> OmicsView:
        for v in self.views:
            if v.name == name:
                return v
        raise UnknownView(f"no view named {name!r}; have {self.view_names}")

    def indicators(self) -> list:
        return [build_indicator(v.sample_ids, self.global_ids, view_name=v.name)
                for v in self.views]

    def is_complete(self) -> bool:
        return all(v.sample_ids == self.global_ids for v in self.views)

    def map_views(self, fn) -> "MultiOmicsDataset":
        """Apply ``fn`` to every view matrix, keeping ids."""
        return MultiOmicsDataset(
            tuple(replace(v, matrix=fn(v.matrix)) for v in self.views), self.global_ids)

    def permute(self, order: Sequence[int]) -> "MultiOmicsDataset":
        """Reorder the global sample universe (views' own column order kept)."""
        return MultiOmicsDataset(self.views, tuple(self.global_ids[i] for i in order))


def build_indicator(view_ids: Sequence[str], global_ids: Sequence[str],
                    view_name: str = "") -> IndicatorMatrix:
    """Build the ``N x N_v`` indicator aligning a view to the global samples."""
    view_ids = [str(s) for s in view_ids]
    global_ids = [str(s) for s in global_ids]
    _check_unique(view_ids, f"view {view_name!r}" if view_name else "view ids")
    _check_unique(global_ids, "global ids")
    slot = {s: i for i, s in enumerate(global_ids)}
    G = np.zeros((len(global_ids), len(view_ids)), dtype=np.int64)
    for j, s in enumerate(view_ids):
        try:
            G[slot[s], j] = 1
        except KeyError:
            raise UnknownSample(f"sample {s!r} not among global ids") from None
    return IndicatorMatrix(G, view_name)


def zscore_normalize(matrix: np.ndarray) -> np.ndarray:
    """Standardize each feature row to mean 0 and population std 1.

    Constant rows become zero rows.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise DegenerateShape(f"z-scoring needs >= 2 samples, got shape {X.shape}")
    mu = X.mean(axis=1, keepdims=True)
    centered = X - mu
    sd = np.sqrt((centered ** 2).mean(axis=1, keepdims=True))
    # relative guard so rows constant up to rounding also map to zero
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    out = np.divide(centered, sd, out=np.zeros_like(centered), where=~const)
    out[const.ravel()] = 0.0
    return out


def mask_view(dataset: MultiOmicsDataset, view_name: str, missing_rate: float,
              seed: int) -> MultiOmicsDataset:
    """Delete ``floor(missing_rate * N_v)`` uniformly chosen samples from one view.

    Only samples that remain covered by another view are eligible; if too few
    such samples exist, :class:`OrphanedSample` is raised.
    """
    if not 0.0 <= missing_rate < 1.0:
        raise DataError(f"missing_rate must be in [0, 1), got {missing_rate}")
    target = dataset.view(view_name)
    n_remove = int(np.floor(missing_rate * target.n_samples))
    if n_remove == 0:
        return dataset
    elsewhere = set()
    for v in dataset.views:
        if v.name != view_name:
            elsewhere.update(v.sample_ids)
    eligible = [s for s in target.sample_ids if s in elsewhere]
    if len(eligible) < n_remove:
        raise OrphanedSample(
            f"removing {n_remove} samples from {view_name!r} would orphan samples; "
            f"only {len(eligible)} are covered by other views")
    # a prefix of one permutation, so a higher rate with the same seed
    # removes a superset of the samples removed at a lower rate
    order = np.random.default_rng(seed).permutation(len(eligible))
    removed = {eligible[i] for i in order[:n_remove]}
    views = tuple(v.drop_samples(removed) if v.name == view_name else v
                  for v in dataset.views)
    return MultiOmicsDataset(views, dataset.global_ids)


# -- file ingestion ---------------------------------------------------------

def _delimiter(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".tsv", ".tab", ".txt"):
        return "\t"
    return ","


def read_view(path, name: str | None = None, transpose: bool = False) -> OmicsView:
    """Read a view from CSV/TSV.

    The first row holds sample ids and the first column feature ids (or the
    reverse when ``transpose`` is set). Empty cells are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"view file not found: {path}")
    try:
        df = pd.read_csv(path, sep=_delimiter(path), index_col=0, dtype=str,
                         keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from None
    if transpose:
        df = df.T
    blank = df.apply(lambda col: col.str.strip() == "").to_numpy()
    if blank.any():
        r, c = np.argwhere(blank)[0]
        raise NonFiniteInput(f"{path}: missing cell at feature {df.index[r]!r}, "
                             f"sample {df.columns[c]!r}")
    try:
        matrix = df.to_numpy(dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from None
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteInput(f"{path}: NaN or Inf entries")
    return OmicsView(name or path.stem, matrix, tuple(map(str, df.columns)),
                     tuple(map(str, df.index)))


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_view(view: OmicsView, path) -> None:
    feats = view.feature_ids or tuple(f"f{i}" for i in range(view.n_features))
    df = pd.DataFrame(view.matrix, index=pd.Index(feats, name="feature"),
                      columns=list(view.sample_ids))
    atomic_write_text(path, df.to_csv(sep=_delimiter(path)))
