"""Reader for EDF / EDF+C recordings (16-bit little-endian samples).

Layout: a 256-byte fixed ASCII header, 256 bytes of per-signal fields for
each of the ``ns`` signals, then ``num_records`` data records, each holding
``samples_per_record[i]`` int16 values for signal 0, then signal 1, ...
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EdfError",
    "TruncatedError",
    "FieldError",
    "LabelError",
    "DiscontinuousError",
    "SignalHeader",
    "EdfHeader",
    "parse_header",
    "read_channel",
    "write_edf",
    "dump_raw",
]

ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of the per-signal blocks, in file order
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class EdfError(ValueError):
    pass


class TruncatedError(EdfError):
    pass


class FieldError(EdfError):
    pass


class LabelError(EdfError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DiscontinuousError(EdfError):
    pass


@dataclass(frozen=True)
class SignalHeader:
    label: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ""
    physical_dimension: str = ""
    prefiltering: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label == ANNOTATION_LABEL

    def to_physical(self, digital) -> np.ndarray:
        d = np.asarray(digital, dtype=np.float64)
        gain = (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
        return self.physical_min + (d - self.digital_min) * gain


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient: str
    recording: str
    start_date: str
    start_time: str
    header_bytes: int
    reserved: str
    num_records: int
    record_duration_s: float
    signals: tuple[SignalHeader, ...] = field(default_factory=tuple)

    @property
    def num_signals(self) -> int:
        return len(self.signals)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signals]

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)

    @property
    def is_edf_plus(self) -> bool:
        return self.reserved.startswith("EDF+")


def _text(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip()


def _number(raw: bytes, name: str, kind=float):
    text = _text(raw)
    try:
        return kind(text)
    except ValueError:
        raise FieldError(f"field {name!r} is not numeric: {text!r}") from None


def parse_header(data: bytes) -> EdfHeader:
    """Decode the fixed and per-signal header blocks from the start of ``data``."""
    if len(data) < 256:
        raise TruncatedError(f"EDF header needs 256 bytes, got {len(data)}")
    version = _text(data[0:8])
    header_bytes = _number(data[184:192], "header_bytes", int)
    num_records = _number(data[236:244], "num_records", int)
    duration = _number(data[244:252], "record_duration", float)
    ns = _number(data[252:256], "num_signals", int)
    if ns < 1:
        raise FieldError(f"num_signals must be >= 1, got {ns}")
    if not duration > 0:
        raise FieldError(f"record duration must be > 0, got {duration}")
    if header_bytes != 256 * (ns + 1):
        raise FieldError(
            f"header_bytes {header_bytes} inconsistent with {ns} signals "
            f"(expected {256 * (ns + 1)})"
        )
    if len(data) < header_bytes:
        raise TruncatedError(f"signal header blocks need {header_bytes} bytes, got {len(data)}")

    columns: dict[str, list[bytes]] = {}
    pos = 256
    for name, width in _SIGNAL_FIELDS:
        columns[name] = [data[pos + i * width:pos + (i + 1) * width] for i in range(ns)]
        pos += width * ns

    signals = []
    for i in range(ns):
        sig = SignalHeader(
            label=_text(columns["label"][i]),
            transducer=_text(columns["transducer"][i]),
            physical_dimension=_text(columns["physical_dimension"][i]),
            physical_min=_number(columns["physical_min"][i], "physical_min"),
            physical_max=_number(columns["physical_max"][i], "physical_max"),
            digital_min=_number(columns["digital_min"][i], "digital_min", int),
            digital_max=_number(columns["digital_max"][i], "digital_max", int),
            prefiltering=_text(columns["prefiltering"][i]),
            samples_per_record=_number(columns["samples_per_record"][i], "samples_per_record", int),
        )
        if sig.samples_per_record < 1:
            raise FieldError(f"signal {sig.label!r}: samples_per_record must be >= 1")
        if not sig.is_annotation:
            if sig.digital_max <= sig.digital_min:
                raise FieldError(f"signal {sig.label!r}: digital_max <= digital_min")
            if sig.physical_max == sig.physical_min:
                raise FieldError(f"signal {sig.label!r}: physical_max == physical_min")
        signals.append(sig)

    return EdfHeader(
        version=version,
        patient=_text(data[8:88]),
        recording=_text(data[88:168]),
        start_date=_text(data[168:176]),
        start_time=_text(data[176:184]),
        header_bytes=header_bytes,
        reserved=_text(data[192:236]),
        num_records=num_records,
        record_duration_s=duration,
        signals=tuple(signals),
    )


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    with open(os.fspath(source), "rb") as fh:
        return fh.read()


def read_channel(source, label: str, *, digital: bool = False) -> tuple[np.ndarray, float]:
    """Return ``(samples, sample_rate_hz)`` for the signal called ``label``.

    ``source`` is a path, an open binary file or the raw bytes. Samples are
    in physical units unless ``digital`` is set, in which case the stored
    integers are returned.
    """
    data = _read_bytes(source)
    hdr = parse_header(data)
    if hdr.reserved.startswith("EDF+D"):
        raise DiscontinuousError("discontinuous EDF+D recordings are not supported")

    matches = [i for i, s in enumerate(hdr.signals) if s.label == label and not s.is_annotation]
    if not matches:
        available = [s.label for s in hdr.signals if not s.is_annotation]
        raise LabelError(f"no signal labelled {label!r}; available: {available}")
    if len(matches) > 1:
        raise LabelError(f"label {label!r} matches {len(matches)} signals")
    idx = matches[0]
    sig = hdr.signals[idx]

    payload = len(data) - hdr.header_bytes
    num_records = hdr.num_records
    if num_records < 0:  # -1: unknown at recording time
        num_records = payload // hdr.record_bytes
    if payload < num_records * hdr.record_bytes:
        raise TruncatedError(
            f"data section has {payload} bytes, header promises "
            f"{num_records} x {hdr.record_bytes}"
        )

    words_per_record = hdr.record_bytes // 2
    raw = np.frombuffer(data, dtype="<i2", count=num_records * words_per_record,
                        offset=hdr.header_bytes)
    start = sum(s.samples_per_record for s in hdr.signals[:idx])
    block = raw.reshape(num_records, words_per_record)[:, start:start + sig.samples_per_record]
    values = block.reshape(-1)
    rate = sig.samples_per_record / hdr.record_duration_s
    if digital:
        return values.astype(np.int64), rate
    return sig.to_physical(values), rate


def _field(value, width: int) -> bytes:
    if isinstance(value, float):
        text = repr(value)
        if len(text) > width:
            text = f"{value:.{width}g}"[:width]
    else:
        text = str(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise FieldError(f"value {text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def write_edf(path, signals: list[SignalHeader], digital: list[np.ndarray],
              record_duration_s: float = 1.0, reserved: str = "") -> None:
    """Write a minimal EDF file from digital sample arrays (test fixtures)."""
    spr = [s.samples_per_record for s in signals]
    num_records = len(digital[0]) // spr[0]
    for s, d in zip(signals, digital):
        if len(d) != num_records * s.samples_per_record:
            raise FieldError(f"signal {s.label!r}: sample count is not a whole number of records")
    ns = len(signals)
    head = b"".join([
        _field("0", 8), _field("X X X X", 80), _field("Startdate X X X X", 80),
        _field("01.01.01", 8), _field("00.00.00", 8), _field(256 * (ns + 1), 8),
        _field(reserved, 44), _field(num_records, 8), _field(record_duration_s, 8),
        _field(ns, 4),
    ])
    per_signal = []
    for name, width in _SIGNAL_FIELDS:
        for s in signals:
            per_signal.append(_field(getattr(s, name, ""), width))
    body = bytearray()
    for r in range(num_records):
        for s, d in zip(signals, digital):
            n = s.samples_per_record
            body += np.asarray(d[r * n:(r + 1) * n], dtype="<i2").tobytes()
    with open(os.fspath(path), "wb") as fh:
        fh.write(head + b"".join(per_signal) + bytes(body))


def dump_raw(samples, path) -> None:
    """One value per line, full precision; for eyeballing a parsed channel."""
    with open(os.fspath(path), "w") as fh:
        for v in np.asarray(samples, dtype=np.float64):
            fh.write(f"{float(v)!r}\n")
