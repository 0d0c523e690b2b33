"""Classifier features derived from coefficient matrices.

Channel-based features (CM1) are a single column of ``C``.  Network-based
features (CM2) come from channel clusters: every cycle's affinity
``|C| + |C|^T`` is clustered with DBSCAN, the per-cycle clusterings are
reduced to a cross-subject consensus, and SSC is re-solved on the channels of
one consensus cluster.  The strict upper triangle of that cluster's affinity
is the feature vector.

Channel indices in public signatures and feature names are 1-based.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .errors import DomainError, SchemaError
from .solver import SSC_DEFAULTS, AdmmConfig, KernelSpec, solve_kssc, solve_ssc

NOISE = -1


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema: tuple[str, ...]
    source: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schema", tuple(self.schema))
        if values.ndim != 1 or values.size != len(self.schema):
            raise SchemaError("feature values and schema differ in length")
        if not np.isfinite(values).all():
            raise SchemaError(f"non-finite feature values from {self.source}")

    def __len__(self):
        return self.values.size


def _coef(c) -> np.ndarray:
    return np.asarray(getattr(c, "c", c), dtype=float)


def cm1_features(c, channel: int) -> FeatureVector:
    """Column ``channel`` of C without its diagonal entry (n - 1 values)."""
    c = _coef(c)
    n = c.shape[0]
    if not 1 <= channel <= n:
        raise DomainError(f"channel {channel} outside 1..{n}")
    others = [j for j in range(1, n + 1) if j != channel]
    values = c[[j - 1 for j in others], channel - 1]
    schema = [f"c[{j}->{channel}]" for j in others]
    return FeatureVector(values, schema, f"cm1:{channel}")


def symmetrize(c) -> np.ndarray:
    """Affinity ``|C| + |C|^T``: symmetric, nonnegative, zero diagonal."""
    a = np.abs(_coef(c))
    cs = a + a.T
    np.fill_diagonal(cs, 0.0)
    return cs


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]
    theta: float
    phi: int
    degenerate: bool = False

    @property
    def n_clusters(self) -> int:
        return len({l for l in self.labels if l != NOISE})


def dbscan(points: np.ndarray, theta: float, phi: int) -> list[int]:
    """Textbook DBSCAN over rows of ``points``; noise is -1.

    A point is core when at least ``phi`` points (itself included) lie
    within distance ``theta``.  Seeds are visited in index order.
    """
    dist = squareform(pdist(points))
    neighbors = [np.flatnonzero(row <= theta) for row in dist]
    core = [len(nb) >= phi for nb in neighbors]
    labels = [None] * len(points)
    cluster = 0
    for i in range(len(points)):
        if labels[i] is not None or not core[i]:
            continue
        labels[i] = cluster
        queue = deque(neighbors[i])
        while queue:
            j = queue.popleft()
            if labels[j] is None or labels[j] == NOISE:
                was_unlabelled = labels[j] is None
                labels[j] = cluster
                if core[j] and was_unlabelled:
                    queue.extend(neighbors[j])
        cluster += 1
    return [NOISE if l is None else l for l in labels]


def dbscan_channels(cs, phi: int = 4, theta: float | None = None) -> ClusterAssignment:
    """Cluster channels; channel i is the point ``cs[i]`` under Euclidean distance.

    ``theta`` defaults to the median of the pairwise channel distances.
    """
    cs = np.asarray(cs, dtype=float)
    if phi < 1:
        raise DomainError("phi must be >= 1")
    n = cs.shape[0]
    if theta is None:
        theta = float(np.median(pdist(cs))) if n > 1 else 0.0
    if n < phi:
        return ClusterAssignment((NOISE,) * n, theta, phi, degenerate=True)
    labels = tuple(dbscan(cs, theta, phi))
    degenerate = all(l == NOISE for l in labels)
    return ClusterAssignment(labels, theta, phi, degenerate)


@dataclass(frozen=True)
class ConsensusClusters:
    """Consensus partition of channels 1..n.

    ``clusters`` are the components with at least two channels, largest
    first (ties: smallest member first); ``leftover`` gathers the rest.
    """

    clusters: tuple[tuple[int, ...], ...]
    leftover: tuple[int, ...]
    n_channels: int
    degenerate: bool = False

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        """All clusters, leftover last when non-empty."""
        return self.clusters + ((self.leftover,) if self.leftover else ())

    def cluster(self, rank: int) -> tuple[int, ...]:
        """Cluster by 0-based rank (0 = Cluster I); ``len(clusters)`` is the leftover."""
        groups = self.groups
        if not 0 <= rank < len(groups):
            raise DomainError(f"no cluster with rank {rank}; have {len(groups)}")
        return groups[rank]

    def membership(self) -> dict[int, int]:
        return {c: g for g, members in enumerate(self.groups) for c in members}

    def to_json(self) -> str:
        names = [f"cluster_{i + 1}" for i in range(len(self.clusters))]
        doc = {
            "clusters": {name: list(m) for name, m in zip(names, self.clusters)},
            "leftover": list(self.leftover),
            "channel_to_cluster": {
                str(c): (names[g] if g < len(self.clusters) else "leftover")
                for c, g in sorted(self.membership().items())
            },
            "degenerate": self.degenerate,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _co_clustered(assignment: ClusterAssignment) -> np.ndarray:
    labels = np.asarray(assignment.labels)
    together = (labels[:, None] == labels[None, :]) & (labels[:, None] != NOISE)
    np.fill_diagonal(together, False)
    return together


def consensus_clusters(assignments: Mapping[str, Sequence[ClusterAssignment]]) -> ConsensusClusters:
    """Reduce per-cycle clusterings, grouped by subject, to one channel partition.

    A pair is together for a subject when co-clustered in a strict majority
    of that subject's cycles, and joined in the consensus graph when together
    for more than half of the subjects.
    """
    if not assignments:
        raise DomainError("need at least one subject")
    n = None
    votes = None
    for subject in sorted(assignments):
        cycles = assignments[subject]
        if not cycles:
            raise DomainError(f"subject {subject} has no cycle assignments")
        counts = sum(_co_clustered(a).astype(int) for a in cycles)
        if n is None:
            n = counts.shape[0]
            votes = np.zeros((n, n), dtype=int)
        elif counts.shape[0] != n:
            raise SchemaError("assignments disagree on the number of channels")
        votes += (2 * counts > len(cycles)).astype(int)
    edges = 2 * votes > len(assignments)
    np.fill_diagonal(edges, False)
    _, comp = connected_components(csr_matrix(edges), directed=False)

    members: dict[int, list[int]] = {}
    for ch, label in enumerate(comp, start=1):
        members.setdefault(int(label), []).append(ch)
    clusters = [tuple(m) for m in members.values() if len(m) >= 2]
    clusters.sort(key=lambda m: (-len(m), m[0]))
    leftover = tuple(sorted(m[0] for m in members.values() if len(m) == 1))
    return ConsensusClusters(tuple(clusters), leftover, n, degenerate=not clusters)


def cm2_features(
    y,
    cluster: Sequence[int],
    config: AdmmConfig = SSC_DEFAULTS,
    kernel: KernelSpec | None = None,
) -> FeatureVector:
    """Re-solve on the cluster's channels and return the affinity's strict upper triangle."""
    cluster = tuple(int(c) for c in cluster)
    if len(cluster) < 3:
        raise DomainError(f"cluster {cluster} has fewer than 3 channels")
    y = np.asarray(getattr(y, "y", y), dtype=float)
    if min(cluster) < 1 or max(cluster) > y.shape[0]:
        raise DomainError(f"cluster {cluster} names channels outside 1..{y.shape[0]}")
    sub = y[[c - 1 for c in cluster]]
    coef = solve_ssc(sub, config) if kernel is None else solve_kssc(sub, kernel, config)
    return cm2_from_coefficients(coef, cluster)


def cm2_from_coefficients(coef, cluster: Sequence[int]) -> FeatureVector:
    cs = symmetrize(coef)
    iu = np.triu_indices(len(cluster), 1)
    schema = [f"cs[{cluster[i]},{cluster[j]}]" for i, j in zip(*iu)]
    return FeatureVector(cs[iu], schema, "cm2:" + "-".join(map(str, cluster)))


def write_feature_matrix(path, keys: Sequence, matrix, schema: Sequence[str]) -> Path:
    """CSV with ``subject_id,cycle_index,cohort`` key columns then one column per feature."""
    lines = [",".join(["subject_id", "cycle_index", "cohort", *schema])]
    for key, row in zip(keys, np.asarray(matrix, dtype=float)):
        lines.append(",".join([*map(str, key), *(repr(float(v)) for v in row)]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
