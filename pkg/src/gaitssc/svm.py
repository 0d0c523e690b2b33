"""Linear soft-margin SVM trained by dual coordinate descent.

The bias is learned by appending a constant 1 to every feature vector, so
the problem solved is

    min_w  1/2 ||w||^2 + penalty * sum_l max(0, 1 - y_l w . x_l)

over the augmented vectors, whose dual is box constrained
(0 <= alpha_l <= penalty).  The bias is therefore lightly regularised; this
is the usual liblinear-style approximation.

Coordinates are swept in a fixed cyclic order, so training is bitwise
reproducible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .errors import DomainError, SchemaError
from .features import FeatureVector

MAX_EPOCHS = 10_000


@dataclass(frozen=True)
class LabeledSample:
    x: FeatureVector
    y: int
    subject_id: str
    cycle_index: int

    def __post_init__(self):
        if self.y not in (-1, 1):
            raise DomainError(f"class must be -1 or +1, got {self.y}")


@dataclass(frozen=True)
class SvmModel:
    w: np.ndarray
    b: float
    penalty: float
    schema: tuple[str, ...]
    epochs: int = 0
    gap: float = float("nan")
    converged: bool = True
    alpha: np.ndarray | None = field(default=None, repr=False, compare=False)

    def decision(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.w + self.b

    def to_json(self) -> str:
        doc = {
            "schema": list(self.schema),
            "w": [float(v) for v in self.w],
            "b": float(self.b),
            "penalty": float(self.penalty),
            "solver": {"epochs": self.epochs, "gap": float(self.gap), "converged": self.converged},
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        doc = json.loads(text)
        solver = doc.get("solver", {})
        return cls(
            np.array(doc["w"], dtype=float),
            float(doc["b"]),
            float(doc["penalty"]),
            tuple(doc["schema"]),
            solver.get("epochs", 0),
            solver.get("gap", float("nan")),
            solver.get("converged", True),
        )


@numba.njit(cache=True, nogil=True)
def _dual_cd(x, y, penalty, tol, max_epochs):
    n, d = x.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qdiag = np.empty(n)
    for i in range(n):
        qdiag[i] = x[i] @ x[i]
    gap = np.inf
    epoch = 0
    while epoch < max_epochs:
        epoch += 1
        for i in range(n):
            if qdiag[i] <= 0.0:
                continue
            g = y[i] * (w @ x[i]) - 1.0
            a_old = alpha[i]
            a_new = min(max(a_old - g / qdiag[i], 0.0), penalty)
            if a_new != a_old:
                w += (a_new - a_old) * y[i] * x[i]
                alpha[i] = a_new
        ww = w @ w
        hinge = 0.0
        for i in range(n):
            m = 1.0 - y[i] * (w @ x[i])
            if m > 0.0:
                hinge += m
        primal = 0.5 * ww + penalty * hinge
        dual = alpha.sum() - 0.5 * ww
        gap = primal - dual
        if gap <= tol * (1.0 + abs(primal)):
            break
    return w, alpha, epoch, gap


def _augment(x):
    x = np.asarray(x, dtype=float)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def train_arrays(
    x,
    y,
    penalty: float = 1.0,
    schema: Sequence[str] | None = None,
    tol: float = 1e-3,
    max_epochs: int = MAX_EPOCHS,
) -> SvmModel:
    """Train on a sample matrix; rows are swept in the order given."""
    x = np.ascontiguousarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise SchemaError("x must be (samples, features) and match y")
    if not penalty > 0:
        raise DomainError("penalty must be > 0")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise DomainError("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise DomainError("training data must contain both classes")
    if not np.isfinite(x).all():
        raise DomainError("non-finite features")
    schema = tuple(schema) if schema is not None else tuple(f"f{i}" for i in range(x.shape[1]))
    if len(schema) != x.shape[1]:
        raise SchemaError("schema length differs from feature count")
    w, alpha, epochs, gap = _dual_cd(_augment(x), y, float(penalty), float(tol), int(max_epochs))
    converged = bool(gap <= tol * (1.0 + abs(_primal(w, _augment(x), y, penalty))))
    return SvmModel(w[:-1].copy(), float(w[-1]), float(penalty), schema, int(epochs), float(gap), converged, alpha)


def _primal(w, xa, y, penalty):
    return 0.5 * float(w @ w) + penalty * float(np.maximum(0.0, 1.0 - y * (xa @ w)).sum())


def objective(model: SvmModel, x, y) -> float:
    """Primal objective of ``model`` on (x, y), bias included in the norm."""
    w = np.append(model.w, model.b)
    return _primal(w, _augment(x), np.asarray(y, dtype=float), model.penalty)


def train(samples: Sequence[LabeledSample], penalty: float = 1.0, tol: float = 1e-3,
          max_epochs: int = MAX_EPOCHS) -> SvmModel:
    """Train on labelled samples.

    Samples are put in a canonical order (subject, cycle, label, values)
    before the sweep, so any permutation of the input gives the same model.
    """
    if not samples:
        raise DomainError("no training samples")
    schema = samples[0].x.schema
    for s in samples:
        if s.x.schema != schema:
            raise SchemaError(f"sample {s.subject_id}/{s.cycle_index} has a different feature schema")
    ordered = sorted(
        samples, key=lambda s: (s.subject_id, s.cycle_index, s.y, tuple(s.x.values.tolist()))
    )
    x = np.vstack([s.x.values for s in ordered])
    y = np.array([s.y for s in ordered], dtype=float)
    return train_arrays(x, y, penalty, schema, tol, max_epochs)


def predict(model: SvmModel, x: FeatureVector) -> tuple[int, float]:
    """Class and score ``w . x + b``; a score of exactly 0 is class -1."""
    if isinstance(x, FeatureVector):
        if x.schema != model.schema:
            raise SchemaError("feature schema does not match the model")
        values = x.values
    else:
        values = np.asarray(x, dtype=float)
        if values.shape != model.w.shape:
            raise SchemaError("feature length does not match the model")
    score = float(values @ model.w + model.b)
    return (1 if score > 0 else -1), score


def predict_arrays(model: SvmModel, x) -> tuple[np.ndarray, np.ndarray]:
    scores = model.decision(x)
    return np.where(scores > 0, 1, -1), scores


def weights_report(model: SvmModel, top_k: int = 5) -> list[tuple[str, float]]:
    """Features ranked by |weight|, ties kept in schema order."""
    if top_k < 1:
        raise DomainError("top_k must be >= 1")
    order = sorted(range(len(model.w)), key=lambda i: (-abs(model.w[i]), i))
    return [(model.schema[i], float(model.w[i])) for i in order[:top_k]]


def write_model(model: SvmModel, path) -> Path:
    path = Path(path)
    path.write_text(model.to_json())
    return path
