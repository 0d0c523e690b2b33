"""Loading and preprocessing of cycle-segmented multichannel gait data.

Each cycle goes through three steps, applied channel by channel:

1. linear resampling onto a common number of time points,
2. removal of the least-squares straight-line trend,
3. z-scoring with the sample (n-1) standard deviation.

Files are comma separated with one row per (cycle, channel)::

    subject_id,cycle_index,cohort,channel_index,t0,t1,...
    S01,0,case,1,0.12,0.15,...

The number of samples may vary between cycles but not between the channel
rows of one cycle.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from .errors import DegenerateChannelError, DomainError, ParseError, SchemaError

COHORTS = ("case", "control")
JOINTS = ("hip", "knee", "ankle")
SIDES = ("left", "right")
PLANES = ("sagittal", "frontal", "transverse")

DEFAULT_TARGET_LEN = 84
EPS_VAR = 1e-12


@dataclass(frozen=True)
class ChannelLabel:
    index: int
    joint: str
    side: str
    plane: str

    def __post_init__(self):
        if self.joint not in JOINTS or self.side not in SIDES or self.plane not in PLANES:
            raise SchemaError(f"invalid channel label {self}")

    @property
    def name(self) -> str:
        return f"{self.side} {self.joint} {self.plane}"


def default_layout() -> tuple[ChannelLabel, ...]:
    """18-channel layout: right hip, left hip, right knee, left knee, right ankle, left ankle.

    Within every joint the three channels are the sagittal, frontal and
    transverse planes, so channel 1 is the right hip sagittal plane.
    """
    labels = []
    index = 1
    for joint in JOINTS:
        for side in ("right", "left"):
            for plane in PLANES:
                labels.append(ChannelLabel(index, joint, side, plane))
                index += 1
    return tuple(labels)


def layout_for(n_channels: int) -> tuple[ChannelLabel, ...]:
    """Labels for ``n_channels`` channels; only the 18-channel layout is named."""
    return default_layout() if n_channels == 18 else ()


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RawCycle:
    """One cycle as recorded: ``samples`` is n_channels x L."""

    subject_id: str
    cycle_index: int
    cohort: str
    samples: np.ndarray

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 2:
            raise SchemaError("samples must be a 2-D channels x time matrix")
        if samples.shape[0] < 2 or samples.shape[1] < 2:
            raise SchemaError(
                f"cycle {self.subject_id}/{self.cycle_index}: need >= 2 channels "
                f"and >= 2 samples, got {samples.shape}"
            )
        if not np.isfinite(samples).all():
            raise SchemaError(f"cycle {self.subject_id}/{self.cycle_index}: non-finite samples")
        if self.cohort not in COHORTS:
            raise SchemaError(f"unknown cohort label {self.cohort!r}")
        if self.cycle_index < 0:
            raise SchemaError("cycle_index must be >= 0")
        object.__setattr__(self, "samples", samples)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class GaitCycle:
    """A resampled, detrended and z-scored cycle.

    ``detrended`` keeps the matrix as it was before z-scoring; the
    statistical baseline needs it because z-scored rows all have mean 0 and
    variance 1.
    """

    subject_id: str
    cycle_index: int
    cohort: str
    y: np.ndarray
    labels: tuple = ()
    detrended: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(self.y))
        if self.detrended is not None:
            object.__setattr__(self, "detrended", _frozen(self.detrended))
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def key(self) -> tuple[str, int]:
        return (self.subject_id, self.cycle_index)

    @property
    def n_channels(self) -> int:
        return self.y.shape[0]

    @property
    def label(self) -> int:
        """Classifier target: +1 for case, -1 for control."""
        return 1 if self.cohort == "case" else -1


@dataclass(frozen=True)
class ColumnLayout:
    """Names of the key columns; every column after them is a time sample."""

    subject: str = "subject_id"
    cycle: str = "cycle_index"
    cohort: str = "cohort"
    channel: str = "channel_index"
    delimiter: str = ","

    @property
    def keys(self) -> tuple[str, str, str, str]:
        return (self.subject, self.cycle, self.cohort, self.channel)


def _parse_file(path: Path, layout: ColumnLayout) -> list[RawCycle]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=layout.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1, path=path) from None
        if tuple(header[:4]) != layout.keys:
            raise ParseError(
                f"header must start with {','.join(layout.keys)}", line=1, path=path
            )
        max_samples = len(header) - 4

        groups: dict[tuple[str, int], dict] = {}
        order: list[tuple[str, int]] = []
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 6:
                raise ParseError("row needs 4 key columns and >= 2 samples", line, path)
            if len(row) - 4 > max_samples:
                raise ParseError("row has more samples than the header declares", line, path)
            subject, cycle_s, cohort, channel_s = row[:4]
            try:
                cycle_index = int(cycle_s)
                channel = int(channel_s)
            except ValueError:
                raise ParseError("cycle_index and channel_index must be integers", line, path) from None
            if cohort not in COHORTS:
                raise SchemaError(f"{path}: line {line}: unknown cohort label {cohort!r}")
            try:
                values = [float(v) for v in row[4:]]
            except ValueError:
                raise ParseError("non-numeric sample", line, path) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite sample", line, path)

            key = (subject, cycle_index)
            group = groups.get(key)
            if group is None:
                group = {"cohort": cohort, "rows": {}, "length": len(values), "line": line}
                groups[key] = group
                order.append(key)
            elif cohort != group["cohort"]:
                raise ParseError("cohort changes within a cycle", line, path)
            if len(values) != group["length"]:
                raise ParseError("sample count differs between channels of one cycle", line, path)
            if channel in group["rows"]:
                raise ParseError(f"duplicate channel {channel}", line, path)
            group["rows"][channel] = values
            group["last_line"] = line

    cycles = []
    n_channels = None
    for key in order:
        group = groups[key]
        channels = sorted(group["rows"])
        if channels != list(range(1, len(channels) + 1)):
            raise ParseError(f"channels of cycle {key} are not 1..n", group["line"], path)
        if n_channels is None:
            n_channels = len(channels)
        elif len(channels) != n_channels:
            raise ParseError(
                f"cycle {key} has {len(channels)} channels, expected {n_channels}",
                group["last_line"],
                path,
            )
        samples = np.array([group["rows"][c] for c in channels])
        cycles.append(RawCycle(key[0], key[1], group["cohort"], samples))
    return cycles


def load_dataset(path, layout: ColumnLayout | None = None) -> list[RawCycle]:
    """Read cycles from a delimited file, or from every ``*.csv`` in a directory.

    Directories are read in sorted file-name order, one file per subject.
    """
    layout = layout or ColumnLayout()
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise FileNotFoundError(f"no .csv files in {path}")
    elif path.exists():
        files = [path]
    else:
        raise FileNotFoundError(f"no such file: {path}")
    cycles: list[RawCycle] = []
    for f in files:
        cycles.extend(_parse_file(f, layout))
    if cycles and len({c.n_channels for c in cycles}) != 1:
        raise SchemaError("files disagree on the number of channels")
    return cycles


def _format(value: float) -> str:
    return repr(float(value))


def dumps_dataset(cycles: Iterable, layout: ColumnLayout | None = None) -> str:
    """Serialise RawCycles or GaitCycles in the canonical text format."""
    layout = layout or ColumnLayout()
    cycles = list(cycles)
    matrices = [c.samples if isinstance(c, RawCycle) else c.y for c in cycles]
    width = max((m.shape[1] for m in matrices), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=layout.delimiter, lineterminator="\n")
    writer.writerow(list(layout.keys) + [f"t{k}" for k in range(width)])
    for cycle, matrix in zip(cycles, matrices):
        for ch, row in enumerate(matrix, start=1):
            writer.writerow(
                [cycle.subject_id, cycle.cycle_index, cycle.cohort, ch] + [_format(v) for v in row]
            )
    return buf.getvalue()


def write_dataset(cycles: Iterable, path, layout: ColumnLayout | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps_dataset(cycles, layout))
    return path


def resample_linear(cycle: RawCycle, target_len: int = DEFAULT_TARGET_LEN) -> RawCycle:
    """Linearly interpolate every channel onto ``target_len`` evenly spaced points.

    The new grid is ``k * (L - 1) / (target_len - 1)`` in units of the
    original sample index, so both end samples are kept exactly.
    """
    if target_len < 2:
        raise DomainError(f"target_len must be >= 2, got {target_len}")
    length = cycle.length
    if length == target_len:
        return cycle
    old = np.arange(length, dtype=float)
    new = np.arange(target_len, dtype=float) * (length - 1) / (target_len - 1)
    samples = np.vstack([np.interp(new, old, row) for row in cycle.samples])
    return RawCycle(cycle.subject_id, cycle.cycle_index, cycle.cohort, samples)


def detrend(channel) -> np.ndarray:
    """Subtract the least-squares line ``a + b t`` from a channel."""
    channel = np.asarray(channel, dtype=float)
    if channel.ndim != 1 or channel.size < 2:
        raise DomainError("detrend needs a 1-D channel with >= 2 samples")
    return signal.detrend(channel, type="linear")


def zscore(channel, eps: float = EPS_VAR) -> np.ndarray:
    """Centre and scale to unit sample standard deviation (n-1 divisor)."""
    channel = np.asarray(channel, dtype=float)
    if channel.ndim != 1 or channel.size < 2:
        raise DomainError("zscore needs a 1-D channel with >= 2 samples")
    sd = channel.std(ddof=1)
    if not sd > eps:
        raise DegenerateChannelError(f"channel is (near) constant: sd={sd:.3g}")
    return (channel - channel.mean()) / sd


def preprocess_cycle(raw: RawCycle, target_len: int = DEFAULT_TARGET_LEN) -> GaitCycle:
    resampled = resample_linear(raw, target_len)
    detrended = np.vstack([detrend(row) for row in resampled.samples])
    rows = []
    for ch, row in enumerate(detrended, start=1):
        try:
            rows.append(zscore(row))
        except DegenerateChannelError as exc:
            raise DegenerateChannelError(
                f"subject {raw.subject_id}, cycle {raw.cycle_index}, channel {ch}: {exc}",
                channel=ch,
                subject_id=raw.subject_id,
                cycle_index=raw.cycle_index,
            ) from None
    return GaitCycle(
        raw.subject_id,
        raw.cycle_index,
        raw.cohort,
        np.vstack(rows),
        layout_for(raw.n_channels),
        detrended,
    )


def _preprocess_chunk(args):
    raws, target_len = args
    return [preprocess_cycle(r, target_len) for r in raws]


def preprocess(
    raw: Sequence[RawCycle], target_len: int = DEFAULT_TARGET_LEN, jobs: int = 1
) -> list[GaitCycle]:
    """Resample, detrend and z-score every cycle; output order follows input order."""
    raw = list(raw)
    if len({r.n_channels for r in raw}) > 1:
        raise SchemaError("all cycles must have the same number of channels")
    if target_len < 2:
        raise DomainError(f"target_len must be >= 2, got {target_len}")
    if jobs <= 1 or len(raw) < 2:
        return [preprocess_cycle(r, target_len) for r in raw]
    chunks = [(raw[i::jobs], target_len) for i in range(jobs)]
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(_preprocess_chunk, chunks))
    out: list[GaitCycle] = [None] * len(raw)  # type: ignore[list-item]
    for i, part in enumerate(parts):
        out[i::jobs] = part
    return out
