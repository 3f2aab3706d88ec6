import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics

from mlmf.errors import (
    AllMissing,
    DataError,
    LengthMismatch,
    NoEvents,
    SingleGroup,
    SmallExpectedCounts,
)
from mlmf.evaluation import (
    ClinicalTable,
    EvaluationReport,
    SurvivalRecord,
    ari,
    chi2_sf,
    clinical_to_csv,
    enrichment_analysis,
    evaluate,
    generate_clinical,
    generate_survival,
    generate_synthetic,
    kaplan_meier,
    logrank_statistic,
    logrank_test,
    nmi,
    read_clinical,
    read_survival,
    survival_to_csv,
)
from mlmf.spectral import ClusterAssignment, kmeans

from oracles import logrank_hand_table

HAND_TIMES = [6, 6, 7, 9, 10, 12, 12, 15]
HAND_GROUPS = [0, 0, 0, 0, 1, 1, 1, 1]


class TestLogrank:
    def test_hand_table(self):
        stat, df = logrank_statistic(HAND_TIMES, [1] * 8, HAND_GROUPS)
        assert df == 1
        assert stat == pytest.approx(logrank_hand_table(), rel=1e-12)
        assert stat == pytest.approx(7.504, abs=1e-3)
        p = logrank_test([SurvivalRecord(str(i), t, True) for i, t in enumerate(HAND_TIMES)],
                         np.array(HAND_GROUPS))
        assert p == pytest.approx(0.00616, abs=1e-5)

    def test_chi2_tail(self):
        assert chi2_sf(3.841458820694124, 1) == pytest.approx(0.05, rel=1e-9)
        assert chi2_sf(5.991464547107979, 2) == pytest.approx(0.05, rel=1e-9)
        assert chi2_sf(0.0, 3) == 1.0

    def test_identical_groups(self):
        stat, _ = logrank_statistic([1, 2, 3, 1, 2, 3], [1] * 6, [0, 0, 0, 1, 1, 1])
        assert stat == pytest.approx(0.0, abs=1e-12)

    def test_null_calibration(self):
        r = np.random.default_rng(0)
        ps = []
        for _ in range(400):
            t = r.exponential(1.0, 60)
            e = r.random(60) < 0.8
            g = r.integers(0, 3, 60)
            ps.append(chi2_sf(*logrank_statistic(t, e, g)))
        assert 0.02 <= np.mean(np.array(ps) < 0.05) <= 0.09

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0.1, 100))
    def test_invariances(self, seed, shift):
        r = np.random.default_rng(seed)
        t = np.round(r.exponential(5.0, 30), 2)
        e = r.random(30) < 0.7
        e[0] = True
        g = r.integers(0, 3, 30)
        g[:3] = [0, 1, 2]
        base, df = logrank_statistic(t, e, g)
        # relabelling clusters and scaling time leave the rank statistic alone
        relabel, _ = logrank_statistic(t, e, (g + 1) % 3 + 10)
        scaled, _ = logrank_statistic(t * shift, e, g)
        assert df == 2
        assert relabel == pytest.approx(base, rel=1e-8, abs=1e-10)
        assert scaled == pytest.approx(base, rel=1e-8, abs=1e-10)

    def test_errors(self):
        with pytest.raises(SingleGroup):
            logrank_statistic([1, 2], [1, 1], [0, 0])
        with pytest.raises(NoEvents):
            logrank_statistic([1, 2], [0, 0], [0, 1])
        with pytest.raises(LengthMismatch):
            logrank_statistic([1, 2], [1], [0, 1])

    def test_dict_records_follow_ids(self):
        recs = {str(i): SurvivalRecord(str(i), t, True) for i, t in enumerate(HAND_TIMES)}
        recs.pop("3")
        a = ClusterAssignment(np.array(HAND_GROUPS), tuple(str(i) for i in range(8)), 2)
        kept = [i for i in range(8) if i != 3]
        expected = logrank_test([recs[str(i)] for i in kept], np.array(HAND_GROUPS)[kept])
        assert logrank_test(recs, a) == expected

    def test_negative_time_rejected(self):
        with pytest.raises(DataError):
            SurvivalRecord("x", -1.0, True)

    def test_kaplan_meier(self):
        ts, s = kaplan_meier([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
        np.testing.assert_allclose(ts, [1, 2, 3])
        np.testing.assert_allclose(s, [0.8, 0.8 * 0.75, 0.8 * 0.75 * 0.5])


def _table(rows):
    return ClinicalTable({s: v for s, v in rows})


class TestEnrichment:
    def test_aligned_stage_is_significant(self):
        ids = [f"p{i}" for i in range(60)]
        lab = np.repeat([0, 1, 2], 20)
        tab = _table((s, {"pathologic_stage": f"stage_{c}", "gender": "female" if i % 2 else "male",
                          "age_at_diagnosis": 50.0 + i % 7})
                     for i, (s, c) in enumerate(zip(ids, lab)))
        with pytest.warns(AllMissing):
            p, count = enrichment_analysis(tab, lab, ids)
        assert p["pathologic_stage"] < 1e-10
        assert p["pathology_T"] == 1.0
        assert count == 1

    def test_chi_square_oracle(self):
        # 2 x 2 table [[15, 5], [5, 15]]: chi2 = 40 * (225 - 25)^2 / (20^4) = 10
        ids = [f"p{i}" for i in range(40)]
        lab = np.repeat([0, 1], 20)
        sex = ["f"] * 15 + ["m"] * 5 + ["f"] * 5 + ["m"] * 15
        tab = _table((s, {"gender": g}) for s, g in zip(ids, sex))
        with pytest.warns(AllMissing):
            p, _ = enrichment_analysis(tab, lab, ids)
        assert p["gender"] == pytest.approx(chi2_sf(10.0, 1), rel=1e-10)

    def test_kruskal_on_age(self):
        ids = [f"p{i}" for i in range(10)]
        lab = np.repeat([0, 1], 5)
        tab = _table((s, {"age_at_diagnosis": float(i)}) for i, s in enumerate(ids))
        with pytest.warns(AllMissing):
            p, _ = enrichment_analysis(tab, lab, ids)
        # perfectly separated ranks: H = 12/(10*11) * (15^2/5 + 40^2/5) - 3*11
        H = 12 / 110 * (15 ** 2 / 5 + 40 ** 2 / 5) - 33
        assert p["age_at_diagnosis"] == pytest.approx(chi2_sf(H, 1), rel=1e-10)

    def test_independent_attributes_rarely_enriched(self):
        r = np.random.default_rng(3)
        counts = []
        for trial in range(20):
            ids = [f"p{i}" for i in range(90)]
            lab = r.integers(0, 3, 90)
            tab = generate_clinical(r.integers(0, 3, 90), ids, seed=trial)
            counts.append(enrichment_analysis(tab, lab, ids)[1])
        assert np.mean(counts) < 1.0

    def test_small_counts_warn(self):
        ids = ["a", "b", "c", "d"]
        tab = _table((s, {c: "x" if i < 2 else "y" for c in ("gender", "pathology_T", "pathology_N",
                                                                "pathology_M", "pathologic_stage")}
                          | {"age_at_diagnosis": float(i)}) for i, s in enumerate(ids))
        with pytest.warns(SmallExpectedCounts):
            enrichment_analysis(tab, np.array([0, 0, 1, 1]), ids)

    def test_needs_two_clusters(self):
        with pytest.raises(SingleGroup):
            enrichment_analysis(ClinicalTable(), np.zeros(4, int), list("abcd"))


class TestAgreement:
    def test_identical(self):
        assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
        assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_single_cluster_vs_balanced(self):
        assert ari([0] * 6, [0, 0, 1, 1, 2, 2]) == 0.0
        assert nmi([0] * 6, [0, 0, 1, 1, 2, 2]) == 0.0

    def test_both_trivial(self):
        assert ari([0, 0, 0], [1, 1, 1]) == 1.0

    def test_sklearn_oracle(self):
        r = np.random.default_rng(0)
        for _ in range(100):
            n = int(r.integers(2, 40))
            a, b = r.integers(0, 4, n), r.integers(0, 5, n)
            assert ari(a, b) == pytest.approx(metrics.adjusted_rand_score(a, b), abs=1e-12)
            assert nmi(a, b) == pytest.approx(metrics.normalized_mutual_info_score(a, b), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.permutations(range(4)))
    def test_relabel_invariance(self, labels, perm):
        a = np.array(labels)
        b = np.array(perm)[a]
        assert ari(a, b) == pytest.approx(1.0)
        assert ari(a, a[::-1]) == pytest.approx(ari(a[::-1], a))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ari([0, 1], [0, 1, 1])


class TestSynthetic:
    def test_shapes_and_labels(self):
        ds, labels = generate_synthetic()
        assert [v.matrix.shape for v in ds.views] == [(100, 150), (80, 150)]
        np.testing.assert_array_equal(np.bincount(labels), [50, 50, 50])
        assert ds.is_complete()

    def test_seeded(self):
        a, _ = generate_synthetic(seed=4)
        b, _ = generate_synthetic(seed=4)
        c, _ = generate_synthetic(seed=5)
        np.testing.assert_array_equal(a.views[0].matrix, b.views[0].matrix)
        assert not np.array_equal(a.views[0].matrix, c.views[0].matrix)

    @pytest.mark.parametrize("seed", range(3))
    def test_each_view_separable(self, seed):
        ds, labels = generate_synthetic(seed=seed)
        for v in ds.views:
            assert ari(kmeans(v.matrix.T, 3, seed=0).labels, labels) >= 0.9

    def test_separation_floor(self):
        ds, labels = generate_synthetic(seed=1, views=((50, 0.3),), separation=5.0)
        M = ds.views[0].matrix
        means = [M[:, labels == c].mean(axis=1) for c in range(3)]
        for a in range(3):
            for b in range(a + 1, 3):
                # noise averages out over 50 samples, so the floor holds up to a small slack
                assert np.linalg.norm(means[a] - means[b]) / math.sqrt(50) >= 0.9 * 5 * 0.3

    def test_survival_tracks_clusters(self):
        labels = np.repeat([0, 1, 2], 50)
        ids = [f"s{i}" for i in range(150)]
        recs = generate_survival(labels, ids, seed=0)
        assert logrank_test([recs[s] for s in ids], labels) < 1e-3


class TestFiles:
    def test_survival_round_trip(self, tmp_path):
        recs = generate_survival(np.array([0, 1, 1]), ["a", "b", "c"], seed=2)
        (tmp_path / "s.csv").write_text(survival_to_csv(recs))
        assert read_survival(tmp_path / "s.csv") == recs

    def test_clinical_round_trip(self, tmp_path):
        tab = generate_clinical(np.array([0, 1, 2]), ["a", "b", "c"], seed=1)
        tab.values["b"]["gender"] = None
        (tmp_path / "c.csv").write_text(clinical_to_csv(tab))
        assert read_clinical(tmp_path / "c.csv").values == tab.values

    def test_survival_errors(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_survival(tmp_path / "nope.csv")
        (tmp_path / "bad.csv").write_text("sample_id,time,event\na,1,2\n")
        with pytest.raises(DataError, match="event"):
            read_survival(tmp_path / "bad.csv")
        (tmp_path / "cols.csv").write_text("sample_id,time\na,1\n")
        with pytest.raises(DataError, match="missing columns"):
            read_survival(tmp_path / "cols.csv")

    def test_report_dict_round_trip(self):
        rep = EvaluationReport(0.01, 2.0, 1, {"gender": 0.5}, 0.9, 0.8)
        assert EvaluationReport.from_dict(rep.to_dict()) == rep


class TestEvaluate:
    def test_truth_subset(self):
        a = ClusterAssignment(np.array([0, 0, 1, 1]), ("a", "b", "c", "d"), 2)
        rep = evaluate(a, truth={"a": 5, "b": 5, "c": 7})
        assert rep.ari == 1.0
        assert rep.logrank_p is None and rep.enriched_count is None

    def test_survival_fields(self):
        ids = tuple(str(i) for i in range(8))
        a = ClusterAssignment(np.array(HAND_GROUPS), ids, 2)
        recs = {s: SurvivalRecord(s, t, True) for s, t in zip(ids, HAND_TIMES)}
        rep = evaluate(a, survival=recs)
        assert rep.neg_log10_p == pytest.approx(-math.log10(rep.logrank_p))
