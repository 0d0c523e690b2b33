"""Comparison feature extractors: moments, Pearson correlation and PCA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChannelError, DomainError
from .features import FeatureVector
from .ingest import EPS_VAR

KINDS = ("statistical", "correlation", "pca")


@dataclass(frozen=True)
class BaselineKind:
    kind: str = "statistical"
    pca_components: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown baseline {self.kind!r}; expected one of {KINDS}")
        if self.pca_components < 1:
            raise DomainError("pca_components must be >= 1")


def _matrix(cycle, prefer_detrended=False):
    if prefer_detrended and getattr(cycle, "detrended", None) is not None:
        return np.asarray(cycle.detrended, dtype=float)
    return np.asarray(getattr(cycle, "y", cycle), dtype=float)


def statistical_features(cycle, use_pre_zscore: bool = True) -> FeatureVector:
    """Per-channel means followed by per-channel sample variances.

    With ``use_pre_zscore`` the detrended matrix kept on a GaitCycle is used;
    z-scored data would give means of 0 and variances of 1 everywhere.
    """
    y = _matrix(cycle, use_pre_zscore)
    n = y.shape[0]
    values = np.concatenate([y.mean(axis=1), y.var(axis=1, ddof=1)])
    schema = [f"mean[{i}]" for i in range(1, n + 1)] + [f"var[{i}]" for i in range(1, n + 1)]
    return FeatureVector(values, schema, "statistical")


def _degenerate_check(y, cycle):
    var = y.var(axis=1, ddof=1)
    bad = np.flatnonzero(var <= EPS_VAR)
    if bad.size:
        ch = int(bad[0]) + 1
        raise DegenerateChannelError(
            f"channel {ch} has zero variance",
            channel=ch,
            subject_id=getattr(cycle, "subject_id", None),
            cycle_index=getattr(cycle, "cycle_index", None),
        )


def correlation_features(cycle) -> FeatureVector:
    """Pearson r of every channel pair (i < j), row-major."""
    y = _matrix(cycle)
    _degenerate_check(y, cycle)
    r = np.clip(np.corrcoef(y), -1.0, 1.0)
    iu = np.triu_indices(y.shape[0], 1)
    schema = [f"r[{i + 1},{j + 1}]" for i, j in zip(*iu)]
    return FeatureVector(r[iu], schema, "correlation")


def principal_components(y, rank_tol: float = 1e-10):
    """Eigenpairs of the channel covariance, largest first.

    Each loading vector is signed so that its largest-magnitude entry is
    positive.
    """
    y = np.asarray(y, dtype=float)
    cov = np.cov(y)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    evals = np.clip(evals, 0.0, None)
    pivot = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivot, np.arange(evecs.shape[1])])
    evecs = evecs * np.where(signs == 0, 1.0, signs)
    rank = int(np.sum(evals > rank_tol * max(evals[0], 1e-300)))
    return evals, evecs, rank


def pca_features(cycle, components: int = 3) -> tuple[FeatureVector, np.ndarray]:
    """Mean and variance of the top principal score series of one cycle.

    Channels are variables and time points are observations.  Returns the
    feature vector (means then variances) and the explained-variance ratios
    of the retained components.
    """
    y = _matrix(cycle)
    n, t = y.shape
    if not 1 <= components <= min(n, t):
        raise DomainError(f"components must be in [1, {min(n, t)}], got {components}")
    evals, evecs, rank = principal_components(y)
    if components > rank:
        raise DomainError(f"covariance has rank {rank}; cannot keep {components} components")
    centered = y - y.mean(axis=1, keepdims=True)
    scores = evecs[:, :components].T @ centered
    total = evals.sum()
    ratios = evals[:components] / total
    values = np.concatenate([scores.mean(axis=1), scores.var(axis=1, ddof=1)])
    schema = [f"pc{k}_mean" for k in range(1, components + 1)]
    schema += [f"pc{k}_var" for k in range(1, components + 1)]
    return FeatureVector(values, schema, f"pca:{components}"), ratios


def baseline_features(cycle, kind: BaselineKind | str) -> FeatureVector:
    if isinstance(kind, str):
        kind = BaselineKind(kind)
    if kind.kind == "statistical":
        return statistical_features(cycle)
    if kind.kind == "correlation":
        return correlation_features(cycle)
    return pca_features(cycle, kind.pca_components)[0]
