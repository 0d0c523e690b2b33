"""Self-expressive sparse subspace learning solved with ADMM.

Given channels as the rows of ``y`` (n x T), find a coefficient matrix ``C``
(n x n) with zero diagonal and unit column sums such that every channel is
approximated by the others, ``y_i ~ sum_j c_ji y_j``, while ``||C||_1`` stays
small::

    min_C  ||C||_1 + lam * ||phi(Y) - phi(Y) C||^2
    s.t.   diag(C) = 0,  1^T C = 1^T

Only the Gram matrix ``K = phi(Y)^T phi(Y)`` enters the iteration, so the
linear (SSC) and kernel (KSSC) problems share one solver.  Column ``i`` of
``C`` holds the coefficients expressing channel ``i``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .errors import DivergenceError, DomainError, SchemaError, SolverError


@dataclass(frozen=True)
class KernelSpec:
    """Kernel for KSSC.  ``bandwidth=None`` selects the median heuristic per cycle."""

    kind: str = "gaussian"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise DomainError("gaussian bandwidth must be > 0")


LINEAR = KernelSpec("linear")


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM settings.

    ``lam`` weighs the data-fit term and ``rho`` is the (initial) augmented
    Lagrangian penalty.  ``lam_e`` only affects the reported noise matrix
    ``E``, whose shrinkage threshold is ``lam_e / lam``; it defaults to
    ``lam``.

    ``adaptive_rho`` rebalances rho during the first ``adapt_iters``
    iterations (rho is multiplied or divided by ``rho_scale`` whenever the
    primal and dual residuals differ by more than ``rho_balance``), and
    ``accelerate`` adds restarted Nesterov momentum once rho is frozen.  Both
    keep the fixed point unchanged; switching them off gives the plain
    iteration with constant rho.

    The iteration stops once ``max(r_A, r_1) <= tol`` and every column of
    ``C`` sums to 1 within ``colsum_factor * tol``.
    """

    lam: float = 0.015
    rho: float = 800.0
    max_iter: int = 200
    tol: float = 1e-4
    lam_e: float | None = None
    update_e: bool = True
    adaptive_rho: bool = True
    accelerate: bool = True
    adapt_iters: int = 30
    rho_balance: float = 10.0
    rho_scale: float = 2.0
    restart_eta: float = 0.999
    colsum_factor: float = 10.0

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lam must be > 0")
        if not self.rho > 0:
            raise DomainError("rho must be > 0")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not self.tol > 0:
            raise DomainError("tol must be > 0")
        if self.lam_e is not None and not self.lam_e > 0:
            raise DomainError("lam_e must be > 0")
        if not self.colsum_factor > 0:
            raise DomainError("colsum_factor must be > 0")
        if self.rho_balance <= 1 or self.rho_scale <= 1:
            raise DomainError("rho_balance and rho_scale must exceed 1")

    @property
    def plain(self) -> "AdmmConfig":
        """The same settings with rho adaptation and acceleration disabled."""
        return replace(self, adaptive_rho=False, accelerate=False)


# grid-searched values reported for the gait data
SSC_DEFAULTS = AdmmConfig(lam=0.015, rho=800.0)
KSSC_DEFAULTS = AdmmConfig(lam=60.0, rho=2500.0)


@dataclass(frozen=True)
class CoefficientMatrix:
    c: np.ndarray
    a: np.ndarray
    converged: bool
    iterations: int
    residual_a: float
    residual_1: float
    rho: float
    history: tuple = field(default=(), repr=False, compare=False)
    e: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def residuals(self) -> tuple[float, float]:
        return (self.residual_a, self.residual_1)


def _check_matrix(y) -> np.ndarray:
    y = np.asarray(getattr(y, "y", y), dtype=float)
    if y.ndim != 2:
        raise DomainError("expected an n x T matrix with channels as rows")
    if not np.isfinite(y).all():
        raise DomainError("input contains non-finite values")
    return y


def median_bandwidth(y) -> float:
    """Median of the pairwise Euclidean distances between channel rows."""
    y = _check_matrix(y)
    bandwidth = float(np.median(pdist(y)))
    if not bandwidth > 0:
        raise DomainError("median channel distance is zero; bandwidth undefined")
    return bandwidth


def gram_matrix(y, kernel: KernelSpec = LINEAR) -> np.ndarray:
    """Kernel matrix between channel rows."""
    y = _check_matrix(y)
    if kernel.kind == "linear":
        k = y @ y.T
        return (k + k.T) / 2
    bandwidth = kernel.bandwidth if kernel.bandwidth is not None else median_bandwidth(y)
    sq = squareform(pdist(y, "sqeuclidean"))
    return np.exp(-sq / (2.0 * bandwidth**2))


def soft_threshold(v, eta):
    """Elementwise ``sign(v) * max(|v| - eta, 0)``."""
    if np.any(np.asarray(eta) < 0):
        raise DomainError("eta must be >= 0")
    out = np.sign(v) * np.maximum(np.abs(v) - eta, 0.0)
    return out if np.ndim(out) else float(out)


def _factor(k, lam, rho):
    n = k.shape[0]
    lhs = lam * k + rho * (np.eye(n) + 1.0)
    try:
        return linalg.cho_factor(lhs)
    except linalg.LinAlgError as exc:
        raise SolverError(f"Cholesky factorisation failed: {exc}") from exc


def admm(k: np.ndarray, config: AdmmConfig) -> CoefficientMatrix:
    """Run the ADMM iteration on a precomputed n x n Gram matrix.

    Each iteration solves ``(lam K + rho I + rho 11^T) A = lam K + rho (11^T + C)
    - 1 delta^T - Delta``, shrinks ``A + Delta / rho`` by ``1 / rho`` with the
    diagonal zeroed to get ``C``, then takes dual ascent steps on
    ``A - C`` and ``A^T 1 - 1``.  All variables start at zero.
    """
    n = k.shape[0]
    if n < 3:
        raise DomainError("need at least 3 channels")
    lam, rho, tol = config.lam, config.rho, config.tol
    ones = np.ones((n, n))
    lam_k = lam * k
    factor = _factor(k, lam, rho)

    c = np.zeros((n, n))
    a = np.zeros((n, n))
    big_delta = np.zeros((n, n))
    delta = np.zeros(n)
    # points the A-update is taken from; differ from (c, big_delta, delta) only under momentum
    c_hat, bd_hat, d_hat = c, big_delta, delta
    momentum, prev_combined = 1.0, math.inf
    history = []
    r_a = r_1 = math.inf
    converged = False
    iteration = 0

    for iteration in range(1, config.max_iter + 1):
        rhs = lam_k + rho * (ones + c_hat) - d_hat[None, :] - bd_hat
        a = linalg.cho_solve(factor, rhs)
        c_old, bd_old, d_old = c, big_delta, delta
        d_mat = soft_threshold(a + bd_hat / rho, 1.0 / rho)
        np.fill_diagonal(d_mat, 0.0)
        c = d_mat
        col = a.sum(axis=0) - 1.0
        big_delta = bd_hat + rho * (a - c)
        delta = d_hat + rho * col
        if not (np.isfinite(a).all() and np.isfinite(big_delta).all()):
            raise DivergenceError(f"non-finite iterate at iteration {iteration}")

        r_a = float(np.abs(a - c).max())
        r_1 = float(np.abs(col).max())
        r_dual = float(rho * np.abs(c - c_old).max())
        history.append((r_a, r_1, r_dual, rho))
        # C inherits the affine constraint only up to n * r_A, so check it directly
        if max(r_a, r_1) <= tol and np.abs(c.sum(axis=0) - 1.0).max() <= config.colsum_factor * tol:
            converged = True
            break

        if config.adaptive_rho and iteration <= config.adapt_iters:
            primal = max(r_a, r_1)
            new_rho = rho
            if primal > config.rho_balance * r_dual:
                new_rho = rho * config.rho_scale
            elif r_dual > config.rho_balance * primal:
                new_rho = rho / config.rho_scale
            if new_rho != rho:
                rho = new_rho
                factor = _factor(k, lam, rho)
            c_hat, bd_hat, d_hat = c, big_delta, delta
            continue
        if not config.accelerate:
            c_hat, bd_hat, d_hat = c, big_delta, delta
            continue

        combined = (
            (np.sum((big_delta - bd_hat) ** 2) + np.sum((delta - d_hat) ** 2)) / rho
            + rho * np.sum((c - c_hat) ** 2)
        )
        if combined < config.restart_eta * prev_combined:
            nxt = (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0
            w = (momentum - 1.0) / nxt
            c_hat = c + w * (c - c_old)
            bd_hat = big_delta + w * (big_delta - bd_old)
            d_hat = delta + w * (delta - d_old)
            momentum, prev_combined = nxt, combined
        else:
            momentum, prev_combined = 1.0, prev_combined / config.restart_eta
            c_hat, bd_hat, d_hat = c, big_delta, delta

    return CoefficientMatrix(
        c=c,
        a=a,
        converged=converged,
        iterations=iteration,
        residual_a=r_a,
        residual_1=r_1,
        rho=rho,
        history=tuple(history),
    )


def _noise(y, coef: CoefficientMatrix, config: AdmmConfig) -> np.ndarray:
    # E depends only on the final A, so one evaluation equals updating it every iteration.
    lam_e = config.lam_e if config.lam_e is not None else config.lam
    return soft_threshold(y - coef.a.T @ y, lam_e / config.lam)


def solve_ssc(y, config: AdmmConfig = SSC_DEFAULTS) -> CoefficientMatrix:
    """SSC with the linear Gram matrix ``Y Y^T``; also reports the noise matrix E."""
    y = _check_matrix(y)
    coef = admm(gram_matrix(y, LINEAR), config)
    if config.update_e:
        coef = replace(coef, e=_noise(y, coef, config))
    return coef


def solve_kssc(y, kernel: KernelSpec = KernelSpec(), config: AdmmConfig = KSSC_DEFAULTS) -> CoefficientMatrix:
    """Kernel SSC; the iteration is the same with ``K`` from ``kernel``."""
    y = _check_matrix(y)
    return admm(gram_matrix(y, kernel), config)


def solve(y, mode: str = "ssc", config: AdmmConfig | None = None, kernel: KernelSpec | None = None):
    if mode == "ssc":
        return solve_ssc(y, config or SSC_DEFAULTS)
    if mode == "kssc":
        return solve_kssc(y, kernel or KernelSpec(), config or KSSC_DEFAULTS)
    raise DomainError(f"unknown solver mode {mode!r}")


def _solve_chunk(args):
    matrices, mode, config, kernel = args
    out = []
    for m in matrices:
        try:
            out.append(solve(m, mode, config, kernel))
        except SolverError as exc:
            out.append(exc)
    return out


def solve_many(
    matrices: Sequence,
    mode: str = "ssc",
    config: AdmmConfig | None = None,
    kernel: KernelSpec | None = None,
    jobs: int = 1,
) -> list:
    """Solve many cycles, optionally across processes.

    Returns one entry per input, in input order: a CoefficientMatrix, or the
    SolverError raised for that cycle.
    """
    matrices = [_check_matrix(m) for m in matrices]
    if jobs <= 1 or len(matrices) < 2:
        return _solve_chunk((matrices, mode, config, kernel))
    chunks = [(matrices[i::jobs], mode, config, kernel) for i in range(jobs)]
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(_solve_chunk, chunks))
    out: list = [None] * len(matrices)
    for i, part in enumerate(parts):
        out[i::jobs] = part
    return out


def reconstruction_r2(y, coef, kernel: KernelSpec = LINEAR) -> float:
    """Fraction of (feature-space) energy reproduced by ``C^T Y``.

    Linear: ``1 - ||Y - C^T Y||_F^2 / ||Y||_F^2``.  Gaussian: the same
    quantity in feature space, ``1 - tr(K - 2KC + C^T K C) / tr(K)``.
    """
    y = _check_matrix(y)
    c = np.asarray(getattr(coef, "c", coef), dtype=float)
    if c.shape != (y.shape[0], y.shape[0]):
        raise SchemaError(f"coefficient matrix {c.shape} does not match {y.shape[0]} channels")
    if kernel.kind == "linear":
        total = float(np.sum(y * y))
        if total == 0:
            raise DomainError("Y has zero norm")
        return 1.0 - float(np.sum((y - c.T @ y) ** 2)) / total
    k = gram_matrix(y, kernel)
    return 1.0 - float(np.trace(k - 2 * k @ c + c.T @ k @ c)) / float(np.trace(k))


def write_coefficients(path, matrix, names: Sequence[str] | None = None) -> Path:
    """Write an n x n matrix as CSV, row-major, at full precision."""
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    names = list(names) if names is not None else [f"ch{i}" for i in range(1, n + 1)]
    lines = ["," + ",".join(names)]
    for name, row in zip(names, matrix):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_coefficients(path) -> tuple[np.ndarray, list[str]]:
    lines = Path(path).read_text().splitlines()
    names = lines[0].split(",")[1:]
    rows = [[float(v) for v in line.split(",")[1:]] for line in lines[1:] if line]
    return np.array(rows), names
