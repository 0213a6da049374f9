"""Segments, masks and masked model inputs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SignalError",
    "EmptyInputError",
    "DegenerateRangeError",
    "InvalidCountError",
    "InsufficientContextError",
    "Position",
    "MaskMethod",
    "Segment",
    "ScaleRecord",
    "MaskSpec",
    "MaskedSegment",
    "extract_segments",
    "normalize",
    "denormalize",
    "build_mask",
    "explicit_mask",
    "apply_mask",
]


class SignalError(ValueError):
    pass


class EmptyInputError(SignalError):
    pass


class DegenerateRangeError(SignalError):
    pass


class InvalidCountError(SignalError):
    pass


class InsufficientContextError(SignalError):
    pass


class Position(str, enum.Enum):
    BEGINNING = "beginning"
    MIDDLE = "middle"
    ENDING = "ending"
    EXPLICIT = "explicit"


class MaskMethod(str, enum.Enum):
    ZERO = "zero"
    RANDOM = "random"
    EEG = "eeg"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Segment:
    """A fixed-length window of one channel. ``source_id`` records provenance."""

    samples: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim != 1 or s.size < 1:
            raise SignalError("segment samples must be a non-empty 1-d array")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.size

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class ScaleRecord:
    """Affine map used by :func:`normalize`: ``normalized = (raw - offset) / half_range``."""

    offset: float
    half_range: float

    def forward(self, raw):
        return (np.asarray(raw, dtype=np.float64) - self.offset) / self.half_range

    def inverse(self, normalized):
        return np.asarray(normalized, dtype=np.float64) * self.half_range + self.offset


def normalize(raw) -> tuple[np.ndarray, ScaleRecord]:
    """Min-max map ``raw`` onto [-1, 1]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise EmptyInputError("cannot normalize an empty signal")
    if not np.all(np.isfinite(raw)):
        raise SignalError("signal contains non-finite samples")
    lo, hi = float(raw.min()), float(raw.max())
    if not hi > lo:
        raise DegenerateRangeError(f"constant signal (min == max == {lo})")
    rec = ScaleRecord(offset=(hi + lo) / 2.0, half_range=(hi - lo) / 2.0)
    out = np.clip(rec.forward(raw), -1.0, 1.0)
    return out, rec


def denormalize(normalized, record: ScaleRecord) -> np.ndarray:
    return record.inverse(normalized)


def extract_segments(channel, segment_len: int, stride: int | None = None,
                     source: str = "") -> list[Segment]:
    """Cut ``channel`` into windows of ``segment_len`` every ``stride`` samples.

    Each segment's ``source_id`` is ``"<source>@<offset>"``.
    """
    channel = np.asarray(channel, dtype=np.float64)
    stride = segment_len if stride is None else stride
    if segment_len < 2:
        raise SignalError("segment_len must be >= 2")
    if stride < 1:
        raise SignalError("stride must be >= 1")
    if channel.ndim != 1 or channel.size < segment_len:
        raise EmptyInputError(
            f"channel of {channel.size} samples is shorter than segment_len={segment_len}"
        )
    count = (channel.size - segment_len) // stride + 1
    return [
        Segment(channel[i * stride:i * stride + segment_len], f"{source}@{i * stride}")
        for i in range(count)
    ]


@dataclass(frozen=True)
class MaskSpec:
    missing_indices: tuple[int, ...]
    n: int
    position: Position = Position.EXPLICIT
    method: MaskMethod = MaskMethod.ZERO

    def __post_init__(self):
        idx = tuple(int(i) for i in self.missing_indices)
        object.__setattr__(self, "missing_indices", idx)
        object.__setattr__(self, "position", Position(self.position))
        object.__setattr__(self, "method", MaskMethod(self.method))
        if self.position is not Position.EXPLICIT and not idx:
            raise InvalidCountError("positional masks need at least one missing index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise SignalError("missing indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise SignalError(f"missing indices out of range for N={self.n}")
        if self.position is not Position.EXPLICIT and idx[-1] - idx[0] + 1 != len(idx):
            raise SignalError("positional masks must be one contiguous run")

    @property
    def count(self) -> int:
        return len(self.missing_indices)

    def boolean(self) -> np.ndarray:
        """Length-N boolean array, True at missing indices."""
        m = np.zeros(self.n, dtype=bool)
        m[list(self.missing_indices)] = True
        return m

    def with_method(self, method) -> MaskSpec:
        return MaskSpec(self.missing_indices, self.n, self.position, method)


def build_mask(n: int, count: int, position, method=MaskMethod.ZERO) -> MaskSpec:
    """One contiguous run of ``count`` missing samples at the given position."""
    position = Position(position)
    if not 1 <= count <= n:
        raise InvalidCountError(f"count must be in [1, {n}], got {count}")
    if position is Position.BEGINNING:
        start = 0
    elif position is Position.ENDING:
        start = n - count
    elif position is Position.MIDDLE:
        start = (n - count) // 2
    else:
        raise SignalError("use explicit_mask for arbitrary index sets")
    return MaskSpec(tuple(range(start, start + count)), n, position, method)


def explicit_mask(n: int, indices, method=MaskMethod.ZERO) -> MaskSpec:
    return MaskSpec(tuple(sorted(set(int(i) for i in indices))), n, Position.EXPLICIT, method)


def _runs(idx: tuple[int, ...]) -> list[tuple[int, int]]:
    runs = []
    start = prev = idx[0]
    for i in idx[1:]:
        if i != prev + 1:
            runs.append((start, prev + 1))
            start = i
        prev = i
    runs.append((start, prev + 1))
    return runs


@dataclass(frozen=True)
class MaskedSegment:
    input: np.ndarray
    target: Segment
    spec: MaskSpec = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input", _frozen(self.input))

    @property
    def missing(self) -> np.ndarray:
        return self.spec.boolean()


def apply_mask(segment: Segment, spec: MaskSpec, rng_seed: int = 0) -> MaskedSegment:
    """Replace the missing samples of ``segment`` according to ``spec.method``.

    ``RANDOM`` draws i.i.d. uniform values on [min, max] of the segment.
    ``EEG`` copies, for each missing run, the equally long run immediately
    before it, or immediately after it when the run starts at index 0.
    """
    x = segment.samples
    if spec.n != x.size:
        raise SignalError(f"mask built for N={spec.n}, segment has N={x.size}")
    out = x.copy()
    idx = np.asarray(spec.missing_indices, dtype=int)
    if idx.size == 0:
        return MaskedSegment(out, segment, spec)
    if spec.method is MaskMethod.ZERO:
        out[idx] = 0.0
    elif spec.method is MaskMethod.RANDOM:
        rng = np.random.default_rng(rng_seed)
        out[idx] = rng.uniform(x.min(), x.max(), size=idx.size)
    else:
        missing = spec.boolean()
        for start, stop in _runs(spec.missing_indices):
            length = stop - start
            before = start >= length and not missing[start - length:start].any()
            after = (start == 0 and stop + length <= x.size
                     and not missing[stop:stop + length].any())
            if before:
                out[start:stop] = x[start - length:start]
            elif after:
                out[start:stop] = x[stop:stop + length]
            else:
                raise InsufficientContextError(
                    f"no adjacent run of {length} samples for missing run [{start}, {stop})"
                )
    return MaskedSegment(out, segment, spec)
