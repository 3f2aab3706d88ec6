"""Cluster evaluation: logrank survival test, clinical enrichment, ARI/NMI,
plus a synthetic multi-view generator with known labels."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import special, stats

from .data import MultiOmicsDataset, OmicsView
from .errors import (
    AllMissing,
    DataError,
    LengthMismatch,
    NoEvents,
    SingleGroup,
    SmallExpectedCounts,
)

SIGNIFICANCE = 0.05
CATEGORICAL_PARAMETERS = ("gender", "pathology_T", "pathology_N", "pathology_M",
                          "pathologic_stage")
NUMERIC_PARAMETERS = ("age_at_diagnosis",)
CLINICAL_PARAMETERS = CATEGORICAL_PARAMETERS[:1] + NUMERIC_PARAMETERS + CATEGORICAL_PARAMETERS[1:]


@dataclass(frozen=True)
class SurvivalRecord:
    sample_id: str
    time: float
    event: bool

    def __post_init__(self):
        if not self.time >= 0:
            raise DataError(f"negative or missing survival time for {self.sample_id!r}")


@dataclass
class ClinicalTable:
    """Per-sample clinical values; ``None`` marks a missing cell."""

    values: dict = field(default_factory=dict)

    def column(self, name, sample_ids):
        return [self.values.get(s, {}).get(name) for s in sample_ids]


@dataclass
class EvaluationReport:
    logrank_p: float | None = None
    neg_log10_p: float | None = None
    enriched_count: int | None = None
    per_parameter_p: dict = field(default_factory=dict)
    ari: float | None = None
    nmi: float | None = None

    def to_dict(self):
        return {"logrank_p": self.logrank_p, "neg_log10_p": self.neg_log10_p,
                "enriched_count": self.enriched_count,
                "per_parameter_p": dict(self.per_parameter_p),
                "ari": self.ari, "nmi": self.nmi}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d.get(k) for k in ("logrank_p", "neg_log10_p", "enriched_count",
                                             "ari", "nmi")},
                   per_parameter_p=dict(d.get("per_parameter_p") or {}))


def chi2_sf(x, df):
    """Upper tail of the chi-square distribution via the regularized
    incomplete gamma function."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def _labels_array(labels):
    return np.asarray(getattr(labels, "labels", labels))


# -- survival ---------------------------------------------------------------

def logrank_statistic(times, events, groups):
    """Multi-group logrank chi-square statistic and degrees of freedom."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    groups = np.asarray(groups)
    if not len(times) == len(events) == len(groups):
        raise LengthMismatch("times, events and groups differ in length")
    levels = np.unique(groups)
    if len(levels) < 2:
        raise SingleGroup("logrank test needs at least two nonempty groups")
    if not events.any():
        raise NoEvents("no observed events")
    g = np.searchsorted(levels, groups)
    G = len(levels)
    O = np.zeros(G)
    E = np.zeros(G)
    V = np.zeros((G, G))
    for t in np.unique(times[events]):
        at_risk = times >= t
        n_g = np.bincount(g[at_risk], minlength=G).astype(float)
        d_g = np.bincount(g[events & (times == t)], minlength=G).astype(float)
        n, d = n_g.sum(), d_g.sum()
        O += d_g
        E += d * n_g / n
        if n > 1:
            frac = n_g / n
            V += d * (n - d) / (n - 1) * (np.diag(frac) - np.outer(frac, frac))
    diff = (O - E)[:-1]
    Vr = V[:-1, :-1]
    stat = float(diff @ np.linalg.pinv(Vr) @ diff)
    return max(stat, 0.0), G - 1


def logrank_test(records, labels):
    """P-value of the multi-group logrank test.

    ``records`` is a list of :class:`SurvivalRecord` aligned with ``labels``
    (a ClusterAssignment or label array), or a dict ``id -> record`` when
    ``labels`` is a ClusterAssignment carrying ids.
    """
    lab = _labels_array(labels)
    if isinstance(records, dict):
        ids = labels.global_ids
        keep = [i for i, s in enumerate(ids) if s in records]
        recs = [records[ids[i]] for i in keep]
        lab = lab[keep]
    else:
        recs = list(records)
    if len(recs) != len(lab):
        raise LengthMismatch(f"{len(recs)} survival records vs {len(lab)} labels")
    stat, df = logrank_statistic([r.time for r in recs], [r.event for r in recs], lab)
    return chi2_sf(stat, df)


def kaplan_meier(times, events):
    """Product-limit estimate: (event times, survival after each)."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    ts = np.unique(times[events])
    surv = []
    s = 1.0
    for t in ts:
        n = np.sum(times >= t)
        d = np.sum(events & (times == t))
        s *= 1.0 - d / n
        surv.append(s)
    return ts, np.array(surv)


# -- clinical enrichment ------------------------------------------------------

def _categorical_p(values, lab):
    pairs = [(c, str(v)) for c, v in zip(lab, values) if v is not None and str(v) != ""]
    if not pairs:
        return None
    table = pd.crosstab(pd.Series([p[0] for p in pairs]), pd.Series([p[1] for p in pairs]))
    if table.shape[0] < 2 or table.shape[1] < 2:
        return 1.0
    res = stats.chi2_contingency(table.to_numpy(), correction=False)
    if np.any(res.expected_freq < 5):
        warnings.warn("contingency table has expected counts below 5",
                      SmallExpectedCounts, stacklevel=3)
    return float(res.pvalue) if res.statistic > 1e-12 else 1.0


def _numeric_p(values, lab):
    groups = {}
    for c, v in zip(lab, values):
        if v is None or v == "":
            continue
        x = float(v)
        if math.isnan(x):
            continue
        groups.setdefault(c, []).append(x)
    if not groups:
        return None
    samples = [g for g in groups.values()]
    if len(samples) < 2:
        return 1.0
    pooled = np.concatenate(samples)
    if np.all(pooled == pooled[0]):
        return 1.0
    return float(stats.kruskal(*samples).pvalue)


def enrichment_analysis(clinical, labels, sample_ids=None):
    """Per-parameter p-values and the number of parameters with p < 0.05.

    Categorical parameters use a chi-square independence test on the
    cluster x category table; age uses Kruskal-Wallis across clusters.
    """
    lab = _labels_array(labels)
    if len(np.unique(lab)) < 2:
        raise SingleGroup("enrichment needs at least two clusters")
    ids = sample_ids if sample_ids is not None else getattr(labels, "global_ids", None)
    if ids is None or len(ids) != len(lab):
        raise LengthMismatch("sample ids are required and must align with labels")
    pvals = {}
    for name in CLINICAL_PARAMETERS:
        col = clinical.column(name, ids)
        p = _numeric_p(col, lab) if name in NUMERIC_PARAMETERS else _categorical_p(col, lab)
        if p is None:
            warnings.warn(f"clinical parameter {name!r} has no values", AllMissing,
                          stacklevel=2)
            p = 1.0
        pvals[name] = p
    count = sum(p < SIGNIFICANCE for p in pvals.values())
    return pvals, count


# -- partition agreement -------------------------------------------------------

def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"label vectors of length {len(a)} and {len(b)}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    M = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(M, (ai, bi), 1)
    return M


def ari(labels_a, labels_b):
    M = _contingency(_labels_array(labels_a), _labels_array(labels_b))
    n = M.sum()
    comb = lambda x: x * (x - 1) / 2
    index = comb(M).sum()
    sa = comb(M.sum(axis=1)).sum()
    sb = comb(M.sum(axis=0)).sum()
    expected = sa * sb / comb(n) if n > 1 else 0.0
    max_index = (sa + sb) / 2
    if max_index == expected:
        # both partitions trivial (all-in-one or all singletons)
        return 1.0
    return float((index - expected) / (max_index - expected))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(labels_a, labels_b):
    """Normalized mutual information, arithmetic-mean normalization."""
    M = _contingency(_labels_array(labels_a), _labels_array(labels_b))
    n = M.sum()
    ha, hb = _entropy(M.sum(axis=1)), _entropy(M.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = M > 0
    pij = M[nz] / n
    pa = (M.sum(axis=1) / n)[:, None].repeat(M.shape[1], axis=1)[nz]
    pb = (M.sum(axis=0) / n)[None, :].repeat(M.shape[0], axis=0)[nz]
    mi = float(np.sum(pij * np.log(pij / (pa * pb))))
    return float(min(1.0, max(0.0, mi / ((ha + hb) / 2))))


# -- combined report ------------------------------------------------------------

def evaluate(assignment, survival=None, clinical=None, truth=None):
    """Build an EvaluationReport from whichever references are available.

    ``survival`` maps sample id to SurvivalRecord, ``truth`` maps sample id to
    a reference label.
    """
    rep = EvaluationReport()
    if survival is not None:
        p = logrank_test(survival, assignment)
        rep.logrank_p = p
        rep.neg_log10_p = -math.log10(p) if p > 0 else math.inf
    if clinical is not None:
        rep.per_parameter_p, rep.enriched_count = enrichment_analysis(clinical, assignment)
    if truth is not None:
        ids = assignment.global_ids
        keep = [i for i, s in enumerate(ids) if s in truth]
        ref = [truth[ids[i]] for i in keep]
        got = assignment.labels[keep]
        rep.ari = ari(got, ref)
        rep.nmi = nmi(got, ref)
    return rep


# -- synthetic data ---------------------------------------------------------------

def generate_synthetic(n_clusters=3, samples_per_cluster=50, views=((100, 0.1), (80, 0.1)),
                       seed=0, latent_dim=None, separation=5.0, view_names=None):
    """Clustered multi-view data with known labels.

    Each cluster gets a latent center; each view maps centers through its own
    random linear map and adds Gaussian noise. Centers are scaled so that, in
    every view, the per-feature RMS gap between any two cluster centers is at
    least ``separation`` times that view's noise level.

    Returns ``(dataset, labels)`` with views as features x samples.
    """
    if n_clusters < 1 or samples_per_cluster < 1 or not views:
        raise ValueError("cluster count, cluster size and views must be positive")
    rng = np.random.default_rng(seed)
    r = latent_dim or max(2, n_clusters)
    centers = rng.standard_normal((n_clusters, r))
    maps = [rng.standard_normal((dim, r)) / np.sqrt(r) for dim, _ in views]

    scale = 1.0
    if n_clusters > 1:
        for A, (dim, sigma) in zip(maps, views):
            P = centers @ A.T
            gaps = [np.linalg.norm(P[a] - P[b]) / np.sqrt(dim)
                    for a in range(n_clusters) for b in range(a + 1, n_clusters)]
            if sigma > 0 and min(gaps) > 0:
                scale = max(scale, separation * sigma / min(gaps))
    centers = centers * scale

    labels = np.repeat(np.arange(n_clusters), samples_per_cluster)
    n = len(labels)
    width = len(str(n - 1))
    ids = tuple(f"s{i:0{width}d}" for i in range(n))
    names = view_names or [f"view{i + 1}" for i in range(len(views))]
    out = []
    for name, A, (dim, sigma) in zip(names, maps, views):
        M = A @ centers[labels].T
        if sigma > 0:
            M = M + sigma * rng.standard_normal(M.shape)
        out.append(OmicsView(name, M, ids, tuple(f"{name}_f{j}" for j in range(dim))))
    return MultiOmicsDataset(tuple(out), ids), labels


def generate_survival(labels, sample_ids, seed=0, base_rate=1 / 365.0, effect=1.0,
                      censor_rate=0.3):
    """Exponential survival times whose hazard grows with the cluster index,
    with independent exponential censoring."""
    rng = np.random.default_rng(seed)
    lab = np.asarray(labels)
    hazard = base_rate * np.exp(effect * lab)
    t_event = rng.exponential(1.0 / hazard)
    t_cens = rng.exponential(1.0 / (base_rate * censor_rate + 1e-300), size=len(lab))
    times = np.minimum(t_event, t_cens)
    events = t_event <= t_cens
    return {s: SurvivalRecord(s, float(round(t, 3)), bool(e))
            for s, t, e in zip(sample_ids, times, events)}


def generate_clinical(labels, sample_ids, seed=0):
    """Toy clinical table: stage tracks the cluster, the rest is noise."""
    rng = np.random.default_rng(seed)
    values = {}
    for s, c in zip(sample_ids, np.asarray(labels)):
        values[s] = {
            "gender": str(rng.choice(["female", "male"])),
            "age_at_diagnosis": float(round(rng.normal(60, 10), 1)),
            "pathology_T": f"T{rng.integers(1, 5)}",
            "pathology_N": f"N{rng.integers(0, 3)}",
            "pathology_M": f"M{rng.integers(0, 2)}",
            "pathologic_stage": f"stage_{int(c) + 1}" if rng.random() < 0.8
            else f"stage_{rng.integers(1, 5)}",
        }
    return ClinicalTable(values)


# -- file formats -------------------------------------------------------------------

def read_survival(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"survival file not found: {path}")
    df = pd.read_csv(path, dtype={"sample_id": str})
    missing = {"sample_id", "time", "event"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    out = {}
    for s, t, e in zip(df["sample_id"], df["time"], df["event"]):
        if s in out:
            raise DataError(f"{path}: duplicate sample id {s!r}")
        if e not in (0, 1):
            raise DataError(f"{path}: event must be 0 or 1, got {e!r} for {s!r}")
        out[s] = SurvivalRecord(str(s), float(t), bool(e))
    return out


def survival_to_csv(records):
    rows = ["sample_id,time,event"]
    rows += [f"{r.sample_id},{r.time!r},{int(r.event)}" for r in records.values()]
    return "\n".join(rows) + "\n"


def read_clinical(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"clinical file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if "sample_id" not in df.columns:
        raise DataError(f"{path}: missing sample_id column")
    values = {}
    for _, row in df.iterrows():
        rec = {}
        for name in CLINICAL_PARAMETERS:
            v = row.get(name, "")
            v = None if v is None or str(v).strip() == "" else str(v).strip()
            if v is not None and name in NUMERIC_PARAMETERS:
                try:
                    v = float(v)
                except ValueError:
                    raise DataError(f"{path}: non-numeric {name} {v!r}") from None
            rec[name] = v
        values[str(row["sample_id"])] = rec
    return ClinicalTable(values)


def clinical_to_csv(table):
    cols = ("sample_id",) + CLINICAL_PARAMETERS
    rows = [",".join(cols)]
    for s, rec in table.values.items():
        cells = [s] + ["" if rec.get(c) is None else str(rec.get(c)) for c in CLINICAL_PARAMETERS]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"
