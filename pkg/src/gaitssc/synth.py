"""Synthetic two-cohort gait datasets with planted subspace structure.

Every subspace owns a disjoint band of Fourier harmonics, so channels of
different subspaces are (nearly) uncorrelated.  Inside a subspace each
channel is a convex combination of ``d`` smooth latent curves; the weights
have a population value per channel, a per-subject offset and a per-cycle
jitter.  In case subjects the weights of the affected channels are pulled
toward those of a partner channel in the same subspace, which changes the
dependency structure without changing the subspace membership.

A per-subject, per-channel gain mimics posture and marker-placement
variability; z-scoring removes it, raw variances keep it.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecError
from .ingest import RawCycle, write_dataset


def _default_subspaces():
    return (
        (tuple(range(1, 10)), 3),
        (tuple(range(10, 19)), 3),
    )


@dataclass(frozen=True)
class CohortEffect:
    """Case-cohort shift: each channel in ``channels`` moves its mixing weights
    a fraction ``shift`` of the way toward its partner channel (the next
    member of its subspace)."""

    channels: tuple[int, ...] = (1,)
    shift: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not 0.0 <= self.shift <= 1.0:
            raise SpecError("cohort shift must lie in [0, 1]")


@dataclass(frozen=True)
class SynthSpec:
    n_case: int = 24
    n_control: int = 23
    cycles_per_subject: tuple[int, int] = (36, 44)
    n_channels: int = 18
    cycle_len: int = 84
    min_cycle_len: int = 70
    subspaces: tuple = field(default_factory=_default_subspaces)
    noise_sd: float = 0.05
    cohort_effect: CohortEffect = field(default_factory=CohortEffect)
    weight_concentration: float = 4.0
    subject_weight_sd: float = 0.04
    cycle_weight_sd: float = 0.02
    cycle_latent_sd: float = 0.15
    gain_sd: float = 0.3
    seed: int = 0

    def __post_init__(self):
        subspaces = tuple((tuple(int(c) for c in chans), int(d)) for chans, d in self.subspaces)
        object.__setattr__(self, "subspaces", subspaces)
        object.__setattr__(self, "cycles_per_subject", tuple(self.cycles_per_subject))
        if isinstance(self.cohort_effect, dict):
            object.__setattr__(self, "cohort_effect", CohortEffect(**self.cohort_effect))
        self.validate()

    def validate(self):
        members = [c for chans, _ in self.subspaces for c in chans]
        expected = set(range(1, self.n_channels + 1))
        if sorted(members) != sorted(expected) or len(members) != len(set(members)):
            dup = sorted({c for c in members if members.count(c) > 1})
            missing = sorted(expected - set(members))
            extra = sorted(set(members) - expected)
            raise SpecError(
                "subspaces must partition channels 1..%d (duplicated: %s, missing: %s, out of range: %s)"
                % (self.n_channels, dup, missing, extra)
            )
        for chans, d in self.subspaces:
            if not 1 <= d < len(chans):
                raise SpecError(f"latent dimension {d} must be in [1, {len(chans) - 1}] for subspace {chans}")
        lo, hi = self.cycles_per_subject
        if not 1 <= lo <= hi:
            raise SpecError("cycles_per_subject must be a range (lo, hi) with 1 <= lo <= hi")
        if self.n_case < 1 or self.n_control < 1:
            raise SpecError("each cohort needs at least one subject")
        if not 2 <= self.min_cycle_len <= self.cycle_len:
            raise SpecError("need 2 <= min_cycle_len <= cycle_len")
        if self.noise_sd < 0:
            raise SpecError("noise_sd must be >= 0")
        for c in self.cohort_effect.channels:
            if c not in expected:
                raise SpecError(f"cohort effect names channel {c} outside 1..{self.n_channels}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["subspaces"] = [[list(chans), d] for chans, d in self.subspaces]
        out["cycles_per_subject"] = list(self.cycles_per_subject)
        out["cohort_effect"] = {
            "channels": list(self.cohort_effect.channels),
            "shift": self.cohort_effect.shift,
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown synth spec keys: {sorted(unknown)}")
        if "cohort_effect" in data and isinstance(data["cohort_effect"], dict):
            data["cohort_effect"] = CohortEffect(**data["cohort_effect"])
        return cls(**data)


@dataclass
class GroundTruth:
    subspace_of: dict[int, int]
    cohort_of: dict[str, str]
    mixing: dict[tuple[str, int], np.ndarray] = field(repr=False)
    latents: dict[tuple[str, int], np.ndarray] = field(repr=False)
    spec: SynthSpec | None = None

    @property
    def n_channels(self) -> int:
        return len(self.subspace_of)

    def to_json(self) -> str:
        doc = {
            "subspace_of": {str(k): v for k, v in sorted(self.subspace_of.items())},
            "cohort_of": dict(self.cohort_of),
            "spec": self.spec.to_dict() if self.spec is not None else None,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def harmonic_bands(spec: SynthSpec) -> list[list[int]]:
    """Disjoint harmonic sets, one per subspace, dealt out round robin.

    Each band holds enough harmonics (two basis functions apiece) for
    ``d + 1`` dimensions, so latents never fill the band exactly.
    """
    m = len(spec.subspaces)
    bands = []
    for s, (_, d) in enumerate(spec.subspaces):
        count = (d + 2) // 2
        bands.append([s + 1 + j * m for j in range(count)])
    return bands


def _fourier(coefs: np.ndarray, harmonics, t: np.ndarray) -> np.ndarray:
    # coefs: (d, len(harmonics), 2) cosine/sine amplitudes
    out = np.zeros((coefs.shape[0], t.size))
    for j, h in enumerate(harmonics):
        arg = 2.0 * np.pi * h * t
        out += coefs[:, j, 0:1] * np.cos(arg) + coefs[:, j, 1:2] * np.sin(arg)
    return out


def _to_simplex(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 1e-3, None)
    return w / w.sum(axis=-1, keepdims=True)


def generate(spec: SynthSpec) -> tuple[list[RawCycle], GroundTruth]:
    """Draw a dataset; everything is a function of ``spec.seed`` (numpy PCG64)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    bands = harmonic_bands(spec)
    n = spec.n_channels

    subspace_of = {}
    partner = {}
    for s, (chans, _) in enumerate(spec.subspaces):
        for pos, c in enumerate(chans):
            subspace_of[c] = s
            partner[c] = chans[(pos + 1) % len(chans)]

    base_weights = {}
    for s, (chans, d) in enumerate(spec.subspaces):
        w = rng.dirichlet(np.full(d, spec.weight_concentration), size=len(chans))
        for c, row in zip(chans, w):
            base_weights[c] = row

    subjects = [(f"S{i + 1:02d}", "case") for i in range(spec.n_case)]
    subjects += [(f"S{spec.n_case + i + 1:02d}", "control") for i in range(spec.n_control)]

    cycles: list[RawCycle] = []
    mixing: dict = {}
    latents_of: dict = {}
    cohort_of = {}
    lo, hi = spec.cycles_per_subject
    effect = spec.cohort_effect

    for subject, cohort in subjects:
        cohort_of[subject] = cohort
        subject_coefs = [
            rng.normal(size=(d, len(bands[s]), 2)) for s, (_, d) in enumerate(spec.subspaces)
        ]
        weights = {}
        for c in range(1, n + 1):
            weights[c] = _to_simplex(base_weights[c] + rng.normal(0, spec.subject_weight_sd, base_weights[c].size))
        if cohort == "case" and effect.shift > 0:
            shifted = dict(weights)
            for c in effect.channels:
                shifted[c] = (1 - effect.shift) * weights[c] + effect.shift * weights[partner[c]]
            weights = shifted
        gains = np.exp(rng.normal(0, spec.gain_sd, n))
        n_cycles = int(rng.integers(lo, hi + 1))

        for k in range(n_cycles):
            length = int(rng.integers(spec.min_cycle_len, spec.cycle_len + 1))
            t = np.arange(length) / (length - 1)
            samples = np.zeros((n, length))
            cycle_mix = np.zeros((n, max(d for _, d in spec.subspaces)))
            cycle_latents = []
            for s, (chans, d) in enumerate(spec.subspaces):
                coefs = subject_coefs[s] + rng.normal(0, spec.cycle_latent_sd, subject_coefs[s].shape)
                lat = _fourier(coefs, bands[s], t)
                cycle_latents.append(lat)
                for c in chans:
                    w = _to_simplex(weights[c] + rng.normal(0, spec.cycle_weight_sd, d))
                    cycle_mix[c - 1, :d] = w
                    samples[c - 1] = gains[c - 1] * (w @ lat)
            if spec.noise_sd > 0:
                samples += rng.normal(0, spec.noise_sd, samples.shape)
            mixing[(subject, k)] = cycle_mix
            latents_of[(subject, k)] = np.vstack(cycle_latents)
            cycles.append(RawCycle(subject, k, cohort, samples))

    truth = GroundTruth(subspace_of, cohort_of, mixing, latents_of, spec)
    return cycles, truth


def write_synthetic(spec: SynthSpec, directory) -> tuple[Path, Path]:
    """Generate and write ``dataset.csv`` plus the ``truth.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cycles, truth = generate(spec)
    data_path = write_dataset(cycles, directory / "dataset.csv")
    truth_path = directory / "truth.json"
    truth_path.write_text(truth.to_json())
    return data_path, truth_path


def oracle_affinity(truth: GroundTruth) -> np.ndarray:
    """Boolean same-subspace indicator with a false diagonal."""
    n = truth.n_channels
    groups = np.array([truth.subspace_of[c] for c in range(1, n + 1)])
    same = groups[:, None] == groups[None, :]
    np.fill_diagonal(same, False)
    return same


def subspace_recovery_score(result, truth: GroundTruth) -> float:
    """Rand index for a cluster assignment, or same-subspace |cs| mass fraction for an affinity."""
    same = oracle_affinity(truth)
    n = same.shape[0]
    labels = getattr(result, "labels", None)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.size != n:
            raise ValueError("assignment size does not match ground truth")
        # noise points form singleton clusters
        ids = np.where(labels >= 0, labels, -1 - np.arange(n))
        together = ids[:, None] == ids[None, :]
        iu = np.triu_indices(n, 1)
        return float(np.mean(together[iu] == same[iu]))
    cs = np.abs(np.asarray(result, dtype=float))
    if cs.shape != (n, n):
        raise ValueError("affinity size does not match ground truth")
    off = ~np.eye(n, dtype=bool)
    total = cs[off].sum()
    if total == 0:
        return 0.0
    return float(cs[same].sum() / total)
