import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitssc.errors import DomainError
from gaitssc.evaluate import (
    CvReport,
    CycleOutcome,
    FeatureSource,
    Pipeline,
    comparison_report,
    hit_rate,
    loso_split,
    majority_vote,
    prediction_grid,
    report_document,
    run_loso,
    run_loso_samples,
    write_report,
)
from gaitssc.features import FeatureVector
from gaitssc.ingest import GaitCycle, preprocess
from gaitssc.svm import LabeledSample
from gaitssc.synth import CohortEffect, SynthSpec, generate


def _sample(subject, k, y=1, values=(0.0,)):
    return LabeledSample(FeatureVector(values, [f"f{i}" for i in range(len(values))], "t"), y, subject, k)


@pytest.fixture(scope="module")
def planted():
    spec = SynthSpec(n_case=8, n_control=8, cycles_per_subject=(6, 8), seed=11,
                     cohort_effect=CohortEffect((1,), 1.0))
    return preprocess(generate(spec)[0])


class TestSplit:
    def test_fold_count(self):
        samples = [_sample(f"S{s:02d}", 0) for s in range(47)]
        assert len(loso_split(samples)) == 47

    def test_minimal(self):
        folds = loso_split([_sample("A", 0), _sample("B", 0)])
        assert [len(tr) for tr, _ in folds] == [1, 1]

    def test_one_subject(self):
        with pytest.raises(DomainError):
            loso_split([_sample("A", 0), _sample("A", 1)])

    @given(st.lists(st.integers(0, 5), min_size=2, max_size=40))
    def test_partition(self, owners):
        if len(set(owners)) < 2:
            return
        samples = [_sample(f"S{o}", k) for k, o in enumerate(owners)]
        folds = loso_split(samples)
        tested = [s for _, test in folds for s in test]
        assert sorted(map(id, tested)) == sorted(map(id, samples))
        for train, test in folds:
            subject = {s.subject_id for s in test}
            assert len(subject) == 1
            assert subject.isdisjoint({s.subject_id for s in train})
            assert len(train) + len(test) == len(samples)


class TestRates:
    def test_hit_rate(self):
        assert hit_rate([(1, 1)] * 30 + [(1, -1)] * 10) == 0.75
        assert hit_rate([(-1, -1)] * 4) == 1.0
        with pytest.raises(DomainError):
            hit_rate([])

    @given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.sampled_from([-1, 1])), min_size=1))
    def test_hit_rate_oracle(self, pairs):
        assert hit_rate(pairs) == np.mean([p == t for p, t in pairs])

    def test_majority_boundary(self):
        assert majority_vote([True] * 21 + [False] * 19)
        assert not majority_vote([True] * 20 + [False] * 20)
        assert majority_vote([True])
        with pytest.raises(DomainError):
            majority_vote([])

    @given(st.lists(st.booleans(), min_size=1).filter(lambda v: len(v) % 2 == 1))
    def test_odd_complement(self, votes):
        assert majority_vote(votes) == (not majority_vote([not v for v in votes]))


class TestFeatureSource:
    @pytest.mark.parametrize(
        "text,name",
        [("stat", "statistical"), ("corr", "correlation"), ("pca", "pca"), ("cm1:3", "ssc-cm1:3"),
         ("kssc-cm1:1", "kssc-cm1:1"), ("cm2", "ssc-cm2:I"), ("cm2:II", "ssc-cm2:II"), ("cm2:2", "ssc-cm2:II")],
    )
    def test_parse(self, text, name):
        assert FeatureSource.parse(text).name == name

    @pytest.mark.parametrize("text", ["cm1", "cm3:1", "wavelet", "cm1:x"])
    def test_bad(self, text):
        with pytest.raises(DomainError):
            FeatureSource.parse(text)


class TestRunLoso:
    def test_separable_planted(self, planted):
        report = run_loso(planted, "cm1:1")
        assert report.testing_mv_accuracy >= 0.9

    def test_shuffled_labels_null(self, planted):
        subjects = sorted({c.subject_id for c in planted})
        pipe = Pipeline(FeatureSource.parse("cm1:1"), planted)
        accs = []
        for seed in range(4):
            perm = np.random.default_rng(seed).permutation([1] * 8 + [-1] * 8)
            labels = dict(zip(subjects, perm))
            accs.append(run_loso(planted, "cm1:1", pipeline=pipe, labels=labels).testing_mv_accuracy)
        assert abs(np.mean(accs) - 0.5) <= 0.2

    def test_report_fields(self, planted):
        report = run_loso(planted, "stat")
        doc = json.loads(report_document(report, {"seed": 1}))
        assert set(doc["aggregate"]) == {
            "testing_hit_rate", "training_hit_rate", "testing_mv_accuracy", "training_mv_accuracy"
        }
        assert doc["config"] == {"seed": 1}
        row = doc["per_subject"][0]
        assert set(row) == {"subject_id", "cohort", "n_cycles", "n_correct", "hit_rate", "mv_correct"}

    def test_aggregates_consistent(self, planted):
        report = run_loso(planted, "corr")
        total = sum(r.n_cycles for r in report.per_subject)
        weighted = sum(r.hit_rate * r.n_cycles for r in report.per_subject) / total
        assert report.testing_hit_rate == pytest.approx(weighted, abs=1e-12)
        assert report.testing_hit_rate == pytest.approx(np.mean([o.correct for o in report.outcomes]))
        assert report.testing_mv_accuracy == sum(r.mv_correct for r in report.per_subject) / len(report.per_subject)
        for r in report.per_subject:
            assert r.mv_correct == (2 * r.n_correct > r.n_cycles)
        assert 0 <= report.training_hit_rate <= 1

    def test_input_order_irrelevant(self, planted):
        shuffled = [planted[i] for i in np.random.default_rng(1).permutation(len(planted))]
        a = run_loso(planted, "cm1:2")
        b = run_loso(shuffled, "cm1:2")
        assert report_document(a) == report_document(b)

    def test_leakage_canary(self, planted):
        source = FeatureSource.parse("cm2")
        target = "S03"
        marked = []
        for c in planted:
            if c.subject_id == target:
                y = c.y.copy()
                y[17] = y[0]  # marker: channel 18 duplicates channel 1
                c = GaitCycle(c.subject_id, c.cycle_index, c.cohort, y, c.labels, c.detrended)
            marked.append(c)
        clean_pipe, dirty_pipe = Pipeline(source, planted), Pipeline(source, marked)
        idx = [i for i, c in enumerate(planted) if c.subject_id == target]
        # the marker must be visible to the per-cycle stage, or the canary proves nothing
        assert any(clean_pipe.assignments[i] != dirty_pipe.assignments[i] for i in idx)
        clean = run_loso(planted, source, pipeline=clean_pipe)
        dirty = run_loso(marked, source, pipeline=dirty_pipe)
        assert clean.fold_states[target] == dirty.fold_states[target]
        m1, m2 = clean.models[target], dirty.models[target]
        assert m1.w.tobytes() == m2.w.tobytes() and m1.b == m2.b

    def test_paper_mode_shares_state(self, planted):
        report = run_loso(planted, FeatureSource.parse("cm2", paper_mode=True))
        states = list(report.fold_states.values())
        assert all(s == states[0] for s in states)

    def test_missing_cluster_rank(self, planted):
        with pytest.raises(DomainError):
            run_loso(planted, "cm2:9")

    def test_precomputed_samples(self):
        rng = np.random.default_rng(3)
        samples = []
        for s in range(6):
            y = 1 if s < 3 else -1
            for k in range(5):
                samples.append(_sample(f"S{s}", k, y, tuple(rng.normal(2 * y, 0.5, 2))))
        report = run_loso_samples(samples)
        assert report.testing_mv_accuracy == 1.0


class TestComparison:
    def test_single(self):
        text, doc = comparison_report([CvReport.from_rates("ssc", 0.5, 0.6, 0.7, 0.8)])
        lines = text.strip().splitlines()
        assert len(lines) == 5 and len(lines[0].split("|")) == 2
        assert doc["rows"]["testing_hit_rate"] == [50.0]

    def test_paper_values_render(self):
        published = {"Statistical": 0.5749, "Correlation": 0.5672, "PCA": 0.5225, "SSC": 0.6850, "KSSC": 0.7216}
        reports = [CvReport.from_rates(k, v, 0.9, 0.5, 0.9) for k, v in published.items()]
        text, doc = comparison_report(reports)
        assert doc["columns"] == list(published)
        first = text.splitlines()[1]
        for cell in ("57.49%", "56.72%", "52.25%", "68.50%", "72.16%"):
            assert cell in first

    def test_empty(self):
        with pytest.raises(DomainError):
            comparison_report([])

    def test_rate_bounds(self):
        with pytest.raises(DomainError):
            CvReport.from_rates("x", 1.2, 0, 0, 0)


class TestGrid:
    def _outcomes(self, subject, cohort, n, correct=True):
        return [CycleOutcome(subject, k, cohort, 1, 1 if correct else -1, 0.5) for k in range(n)]

    def test_padding(self):
        grid = prediction_grid(self._outcomes("A", "case", 38), width=40)
        assert grid["rows"][0]["cells"].count("absent") == 2

    def test_uniform_row(self):
        grid = prediction_grid(self._outcomes("A", "case", 5))
        assert set(grid["rows"][0]["cells"]) == {"correct"}

    def test_cell_count_and_order(self):
        outs = self._outcomes("B", "control", 3) + self._outcomes("A", "case", 5, False) + self._outcomes("C", "case", 4)
        grid = prediction_grid(outs)
        assert [r["subject_id"] for r in grid["rows"]] == ["A", "C", "B"]
        assert sum(len(r["cells"]) for r in grid["rows"]) == 5 * 3
        assert grid["rows"][0]["cells"] == ["wrong"] * 5

    def test_width_too_small(self):
        with pytest.raises(DomainError):
            prediction_grid(self._outcomes("A", "case", 5), width=3)


def test_write_report_names(tmp_path, planted):
    report = run_loso(planted, "pca")
    paths = write_report(report, tmp_path, "20250101T000000Z")
    assert paths["report"].name == "report_pca_20250101T000000Z.json"
    assert json.loads(paths["grid"].read_text())["width"] == max(r.n_cycles for r in report.per_subject)
