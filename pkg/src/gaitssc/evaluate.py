"""Leave-one-subject-out evaluation of feature sources with a linear SVM.

A feature source is described by :class:`FeatureSource` and realised by a
:class:`Pipeline`, whose ``fit`` sees training subjects only and whose
``transform`` turns cycles into feature rows given the fitted state.  Only
CM2 has data-dependent state (the consensus channel clusters); in paper mode
that state is fitted once on every subject instead of per fold.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import correlation_features, pca_features, statistical_features
from .errors import DomainError, GaitSSCError, SolverError
from .features import (
    ClusterAssignment,
    ConsensusClusters,
    cm1_features,
    cm2_from_coefficients,
    consensus_clusters,
    dbscan_channels,
    symmetrize,
)
from .ingest import GaitCycle
from .solver import KSSC_DEFAULTS, SSC_DEFAULTS, AdmmConfig, KernelSpec, solve_many
from .svm import LabeledSample, predict_arrays, train, train_arrays

BASELINE_ALIASES = {
    "statistical": "statistical",
    "stat": "statistical",
    "correlation": "correlation",
    "corr": "correlation",
    "pca": "pca",
}
_SOURCE_RE = re.compile(r"^(?:(ssc|kssc)-)?(cm1|cm2)(?::(\w+))?$")


@dataclass(frozen=True)
class FeatureSource:
    """What to extract from each cycle.

    ``kind`` is statistical, correlation, pca, cm1 or cm2.  ``channel`` is
    the 1-based CM1 channel; ``cluster_rank`` picks the CM2 consensus
    cluster (0 = Cluster I).
    """

    kind: str
    mode: str = "ssc"
    channel: int | None = None
    cluster_rank: int = 0
    paper_mode: bool = False
    pca_components: int = 3

    def __post_init__(self):
        if self.kind not in ("statistical", "correlation", "pca", "cm1", "cm2"):
            raise DomainError(f"unknown feature kind {self.kind!r}")
        if self.mode not in ("ssc", "kssc"):
            raise DomainError(f"unknown solver mode {self.mode!r}")
        if self.kind == "cm1" and (self.channel is None or self.channel < 1):
            raise DomainError("cm1 needs a channel >= 1")
        if self.cluster_rank < 0:
            raise DomainError("cluster_rank must be >= 0")

    @property
    def needs_solver(self) -> bool:
        return self.kind in ("cm1", "cm2")

    @property
    def name(self) -> str:
        if self.kind == "cm1":
            return f"{self.mode}-cm1:{self.channel}"
        if self.kind == "cm2":
            return f"{self.mode}-cm2:{_roman(self.cluster_rank + 1)}" + (":paper" if self.paper_mode else "")
        return self.kind

    @classmethod
    def parse(cls, text: str, mode: str = "ssc", paper_mode: bool = False) -> "FeatureSource":
        """Parse ``stat``, ``corr``, ``pca``, ``cm1:<ch>``, ``kssc-cm1:<ch>``, ``cm2`` or ``cm2:<rank>``.

        A CM2 rank is a 1-based number or roman numeral (``cm2:II``).
        """
        text = text.strip()
        if text.lower() in BASELINE_ALIASES:
            return cls(BASELINE_ALIASES[text.lower()], mode=mode)
        m = _SOURCE_RE.match(text.lower())
        if not m:
            raise DomainError(f"cannot parse feature source {text!r}")
        mode = m.group(1) or mode
        kind, arg = m.group(2), m.group(3)
        if kind == "cm1":
            if arg is None or not arg.isdigit():
                raise DomainError(f"cm1 needs a channel number, got {text!r}")
            return cls("cm1", mode=mode, channel=int(arg))
        rank = 0
        if arg is not None:
            rank = (int(arg) if arg.isdigit() else _from_roman(arg.upper())) - 1
        return cls("cm2", mode=mode, cluster_rank=rank, paper_mode=paper_mode)


def _roman(k: int) -> str:
    out = ""
    for value, sym in ((10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I")):
        while k >= value:
            out += sym
            k -= value
    return out


def _from_roman(s: str) -> int:
    for k in range(1, 40):
        if _roman(k) == s:
            return k
    raise DomainError(f"bad cluster numeral {s!r}")


@dataclass(frozen=True)
class SolverSettings:
    ssc: AdmmConfig = SSC_DEFAULTS
    kssc: AdmmConfig = KSSC_DEFAULTS
    kernel: KernelSpec = KernelSpec()
    phi: int = 4

    def config(self, mode: str) -> AdmmConfig:
        return self.ssc if mode == "ssc" else self.kssc


class Pipeline:
    """Feature extraction for one source over a fixed set of cycles.

    Solver output and per-cycle DBSCAN clusterings are functions of a
    single cycle, so they are computed once up front.  The consensus
    clusters are the only state fitted across subjects.
    """

    def __init__(self, source: FeatureSource, cycles: Sequence[GaitCycle],
                 settings: SolverSettings = SolverSettings(), jobs: int = 1):
        self.source = source
        self.cycles = list(cycles)
        self.settings = settings
        self.jobs = jobs
        self.coefficients = None
        self.assignments: list[ClusterAssignment] | None = None
        self._cm2_cache: dict = {}
        self._rows = None
        if source.needs_solver:
            self._solve_all()

    def _kernel(self):
        return self.settings.kernel if self.source.mode == "kssc" else None

    def _solve(self, matrices):
        results = solve_many(matrices, self.source.mode, self.settings.config(self.source.mode),
                             self._kernel(), jobs=self.jobs)
        for cyc, res in zip(self.cycles, results):
            if isinstance(res, SolverError):
                raise SolverError(f"subject {cyc.subject_id} cycle {cyc.cycle_index}: {res}")
        return results

    def _solve_all(self):
        self.coefficients = self._solve([c.y for c in self.cycles])
        if self.source.kind == "cm2":
            self.assignments = [dbscan_channels(symmetrize(c), self.settings.phi) for c in self.coefficients]

    def fit(self, train_idx: Sequence[int]):
        """State fitted on the cycles at ``train_idx`` (None for stateless sources)."""
        if self.source.kind != "cm2":
            return None
        by_subject: dict[str, list[ClusterAssignment]] = {}
        for i in train_idx:
            by_subject.setdefault(self.cycles[i].subject_id, []).append(self.assignments[i])
        return consensus_clusters(by_subject)

    def cluster(self, state: ConsensusClusters) -> tuple[int, ...]:
        groups = state.groups
        if self.source.cluster_rank >= len(groups):
            raise DomainError(
                f"consensus has {len(groups)} group(s); cluster rank {self.source.cluster_rank + 1} does not exist"
            )
        cluster = groups[self.source.cluster_rank]
        if len(cluster) < 3:
            raise DomainError(f"consensus cluster {cluster} has fewer than 3 channels")
        return cluster

    def transform(self, idx: Sequence[int], state=None) -> tuple[np.ndarray, tuple[str, ...]]:
        idx = list(idx)
        src = self.source
        if src.kind == "cm2":
            return self._cm2_rows(idx, self.cluster(state))
        if self._rows is None:
            self._rows = self._stateless_rows()
        return self._rows[0][idx], self._rows[1]

    def _stateless_rows(self):
        src = self.source
        rows = []
        for i in range(len(self.cycles)):
            cyc = self.cycles[i]
            if src.kind == "cm1":
                fv = cm1_features(self.coefficients[i], src.channel)
            elif src.kind == "statistical":
                fv = statistical_features(cyc)
            elif src.kind == "correlation":
                fv = correlation_features(cyc)
            else:
                fv = pca_features(cyc, src.pca_components)[0]
            rows.append(fv)
        return np.vstack([f.values for f in rows]), rows[0].schema

    def _cm2_rows(self, idx, cluster):
        missing = [i for i in idx if (cluster, i) not in self._cm2_cache]
        if missing:
            sel = [c - 1 for c in cluster]
            if sel == list(range(self.cycles[0].n_channels)):
                # the whole channel set: identical to the first solve
                coefs = [self.coefficients[i] for i in missing]
            else:
                coefs = self._solve([self.cycles[i].y[sel] for i in missing])
            for i, coef in zip(missing, coefs):
                self._cm2_cache[(cluster, i)] = cm2_from_coefficients(coef, cluster)
        fvs = [self._cm2_cache[(cluster, i)] for i in idx]
        return np.vstack([f.values for f in fvs]), fvs[0].schema


def loso_split(samples: Sequence) -> list[tuple[list, list]]:
    """One (train, test) pair per subject, subjects in sorted order."""
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 2:
        raise DomainError("leave-one-subject-out needs at least 2 subjects")
    folds = []
    for subject in subjects:
        test = [s for s in samples if s.subject_id == subject]
        train_ = [s for s in samples if s.subject_id != subject]
        folds.append((train_, test))
    return folds


def hit_rate(predictions: Sequence[tuple[int, int]]) -> float:
    """Fraction of (predicted, true) pairs that agree."""
    if len(predictions) == 0:
        raise DomainError("hit rate of no predictions")
    return sum(int(p == t) for p, t in predictions) / len(predictions)


def majority_vote(per_cycle_correct: Sequence[bool]) -> bool:
    """True iff strictly more than half of the cycles are correct."""
    if len(per_cycle_correct) == 0:
        raise DomainError("majority vote of no cycles")
    return 2 * sum(bool(c) for c in per_cycle_correct) > len(per_cycle_correct)


@dataclass(frozen=True)
class SubjectResult:
    subject_id: str
    cohort: str
    n_cycles: int
    n_correct: int
    hit_rate: float
    mv_correct: bool


@dataclass(frozen=True)
class CycleOutcome:
    subject_id: str
    cycle_index: int
    cohort: str
    true: int
    predicted: int
    score: float

    @property
    def correct(self) -> bool:
        return self.true == self.predicted


@dataclass
class CvReport:
    feature_source: str
    per_subject: list[SubjectResult]
    testing_hit_rate: float
    training_hit_rate: float
    testing_mv_accuracy: float
    training_mv_accuracy: float
    outcomes: list[CycleOutcome] = field(default_factory=list)
    fold_states: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("testing_hit_rate", "training_hit_rate", "testing_mv_accuracy", "training_mv_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} = {v} outside [0, 1]")

    @classmethod
    def from_rates(cls, feature_source, testing_hit_rate, training_hit_rate,
                   testing_mv_accuracy, training_mv_accuracy) -> "CvReport":
        """Aggregate-only report, e.g. for tabulating externally obtained numbers."""
        return cls(feature_source, [], testing_hit_rate, training_hit_rate,
                   testing_mv_accuracy, training_mv_accuracy)

    def aggregate(self) -> dict:
        return {
            "testing_hit_rate": self.testing_hit_rate,
            "training_hit_rate": self.training_hit_rate,
            "testing_mv_accuracy": self.testing_mv_accuracy,
            "training_mv_accuracy": self.training_mv_accuracy,
        }

    def to_dict(self) -> dict:
        return {
            "feature_source": self.feature_source,
            "aggregate": self.aggregate(),
            "per_subject": [
                {
                    "subject_id": r.subject_id,
                    "cohort": r.cohort,
                    "n_cycles": r.n_cycles,
                    "n_correct": r.n_correct,
                    "hit_rate": r.hit_rate,
                    "mv_correct": r.mv_correct,
                }
                for r in self.per_subject
            ],
            "fold_states": {k: _state_doc(v) for k, v in sorted(self.fold_states.items())},
        }


def _state_doc(state):
    if state is None:
        return None
    if isinstance(state, ConsensusClusters):
        return {"clusters": [list(c) for c in state.clusters], "leftover": list(state.leftover)}
    return state


def _canonical(cycles, x):
    # same order train() would use: subject, cycle, label, values
    keys = [(c.subject_id, c.cycle_index, c.label, tuple(row.tolist())) for c, row in zip(cycles, x)]
    return sorted(range(len(cycles)), key=keys.__getitem__)


def run_loso(
    cycles: Sequence[GaitCycle],
    source: FeatureSource | str,
    penalty: float = 1.0,
    settings: SolverSettings = SolverSettings(),
    jobs: int = 1,
    pipeline: Pipeline | None = None,
    labels: dict[str, int] | None = None,
) -> CvReport:
    """Leave-one-subject-out evaluation of one feature source.

    ``labels`` optionally overrides the class of each subject (used for
    permutation nulls); otherwise the class follows the cohort.
    """
    if isinstance(source, str):
        source = FeatureSource.parse(source)
    cycles = list(cycles)
    pipe = pipeline or Pipeline(source, cycles, settings, jobs)
    label_of = labels or {}
    y_all = np.array([label_of.get(c.subject_id, c.label) for c in cycles], dtype=float)

    subjects = sorted({c.subject_id for c in cycles})
    if len(subjects) < 2:
        raise DomainError("leave-one-subject-out needs at least 2 subjects")
    subj_of = np.array([c.subject_id for c in cycles])
    cohort_of = {c.subject_id: c.cohort for c in cycles}

    shared_state = pipe.fit(range(len(cycles))) if source.paper_mode else None
    outcomes: list[CycleOutcome] = []
    train_hr, train_mv = [], []
    fold_states, models = {}, {}

    for subject in subjects:
        test_idx = np.flatnonzero(subj_of == subject)
        train_idx = np.flatnonzero(subj_of != subject)
        try:
            state = shared_state if source.paper_mode else pipe.fit(train_idx)
            x_train, schema = pipe.transform(train_idx, state)
            x_test, _ = pipe.transform(test_idx, state)
            order = _canonical([cycles[i] for i in train_idx], x_train)
            model = train_arrays(x_train[order], y_all[train_idx][order], penalty, schema)
        except GaitSSCError as exc:
            raise type(exc)(f"fold {subject}: {exc}") from exc
        fold_states[subject] = state
        models[subject] = model

        pred_train, _ = predict_arrays(model, x_train)
        correct_train = pred_train == y_all[train_idx]
        train_hr.append(float(correct_train.mean()))
        votes = [
            majority_vote(correct_train[subj_of[train_idx] == s]) for s in sorted(set(subj_of[train_idx]))
        ]
        train_mv.append(float(np.mean(votes)))

        pred, scores = predict_arrays(model, x_test)
        for i, p, sc in zip(test_idx, pred, scores):
            c = cycles[i]
            outcomes.append(CycleOutcome(c.subject_id, c.cycle_index, c.cohort, int(y_all[i]), int(p), float(sc)))

    per_subject = []
    for subject in subjects:
        mine = [o for o in outcomes if o.subject_id == subject]
        n_correct = sum(o.correct for o in mine)
        per_subject.append(
            SubjectResult(subject, cohort_of[subject], len(mine), n_correct, n_correct / len(mine),
                          majority_vote([o.correct for o in mine]))
        )
    return CvReport(
        source.name,
        per_subject,
        testing_hit_rate=hit_rate([(o.predicted, o.true) for o in outcomes]),
        training_hit_rate=float(np.mean(train_hr)),
        testing_mv_accuracy=sum(r.mv_correct for r in per_subject) / len(per_subject),
        training_mv_accuracy=float(np.mean(train_mv)),
        outcomes=outcomes,
        fold_states=fold_states,
        models=models,
    )


def run_loso_samples(samples: Sequence[LabeledSample], penalty: float = 1.0,
                     source_name: str = "samples") -> CvReport:
    """LOSO over precomputed, stateless feature vectors."""
    cohort = {s.subject_id: ("case" if s.y == 1 else "control") for s in samples}
    outcomes, train_hr, train_mv, models = [], [], [], {}
    for train_set, test_set in loso_split(samples):
        subject = test_set[0].subject_id
        try:
            model = train(train_set, penalty)
        except GaitSSCError as exc:
            raise type(exc)(f"fold {subject}: {exc}") from exc
        models[subject] = model
        x_tr = np.vstack([s.x.values for s in train_set])
        y_tr = np.array([s.y for s in train_set])
        pred_tr, _ = predict_arrays(model, x_tr)
        ok = pred_tr == y_tr
        train_hr.append(float(ok.mean()))
        subj = np.array([s.subject_id for s in train_set])
        train_mv.append(float(np.mean([majority_vote(ok[subj == s]) for s in sorted(set(subj))])))
        pred, scores = predict_arrays(model, np.vstack([s.x.values for s in test_set]))
        for s, p, sc in zip(test_set, pred, scores):
            outcomes.append(CycleOutcome(s.subject_id, s.cycle_index, cohort[s.subject_id], s.y, int(p), float(sc)))
    per_subject = []
    for subject in sorted(cohort):
        mine = [o for o in outcomes if o.subject_id == subject]
        n_correct = sum(o.correct for o in mine)
        per_subject.append(SubjectResult(subject, cohort[subject], len(mine), n_correct,
                                         n_correct / len(mine), majority_vote([o.correct for o in mine])))
    return CvReport(
        source_name, per_subject,
        testing_hit_rate=hit_rate([(o.predicted, o.true) for o in outcomes]),
        training_hit_rate=float(np.mean(train_hr)),
        testing_mv_accuracy=sum(r.mv_correct for r in per_subject) / len(per_subject),
        training_mv_accuracy=float(np.mean(train_mv)),
        outcomes=outcomes, models=models,
    )


ROWS = (
    ("Testing Hit Rate", "testing_hit_rate"),
    ("Training Hit Rate", "training_hit_rate"),
    ("Testing Voting Accuracy", "testing_mv_accuracy"),
    ("Training Voting Accuracy", "training_mv_accuracy"),
)


def _pct(v: float) -> str:
    return f"{100.0 * v:.2f}%"


def comparison_report(reports: Sequence[CvReport]) -> tuple[str, dict]:
    """Metrics (rows) by feature source (columns) as aligned text plus a dict."""
    if not reports:
        raise DomainError("comparison needs at least one report")
    header = ["metric"] + [r.feature_source for r in reports]
    body = [[label] + [_pct(getattr(r, attr)) for r in reports] for label, attr in ROWS]
    widths = [max(len(row[k]) for row in [header] + body) for k in range(len(header))]
    lines = [
        " | ".join(cell.ljust(w) if k == 0 else cell.rjust(w) for k, (cell, w) in enumerate(zip(row, widths)))
        for row in [header] + body
    ]
    doc = {
        "columns": [r.feature_source for r in reports],
        "rows": {attr: [round(100.0 * getattr(r, attr), 2) for r in reports] for _, attr in ROWS},
    }
    return "\n".join(lines) + "\n", doc


def prediction_grid(outcomes: Sequence[CycleOutcome], width: int | None = None) -> dict:
    """Subjects by cycles grid of ``correct``/``wrong``/``absent`` cells.

    Case subjects come first, then controls, each in subject order; a
    subject's cycles fill its row in cycle order and the rest is padded.
    """
    by_subject: dict[str, list[CycleOutcome]] = {}
    for o in outcomes:
        by_subject.setdefault(o.subject_id, []).append(o)
    longest = max((len(v) for v in by_subject.values()), default=0)
    width = longest if width is None else width
    if width < longest:
        raise DomainError(f"grid width {width} shorter than the longest subject ({longest} cycles)")
    cohort = {s: v[0].cohort for s, v in by_subject.items()}
    order = sorted(by_subject, key=lambda s: (cohort[s] != "case", s))
    rows = []
    for s in order:
        cells = ["correct" if o.correct else "wrong" for o in sorted(by_subject[s], key=lambda o: o.cycle_index)]
        rows.append({"subject_id": s, "cohort": cohort[s], "cells": cells + ["absent"] * (width - len(cells))})
    return {
        "width": width,
        "states": ["correct", "wrong", "absent"],
        "cohorts": {c: [r["subject_id"] for r in rows if r["cohort"] == c] for c in ("case", "control")},
        "rows": rows,
    }


def report_document(report: CvReport, config: dict | None = None) -> str:
    """One JSON document per run: config echo, per-subject table, aggregates."""
    doc = {"config": config or {}, **report.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_report(report: CvReport, directory, tag: str, config: dict | None = None) -> dict[str, Path]:
    """Write the report and its prediction grid; file names carry source and tag."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = re.sub(r"[^A-Za-z0-9_.-]+", "_", report.feature_source)
    paths = {
        "report": directory / f"report_{stem}_{tag}.json",
        "grid": directory / f"grid_{stem}_{tag}.json",
    }
    paths["report"].write_text(report_document(report, config))
    paths["grid"].write_text(json.dumps(prediction_grid(report.outcomes), indent=2) + "\n")
    return paths
