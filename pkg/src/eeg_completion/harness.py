"""Experiment orchestration: ingestion, grids, single runs, evaluation and
signal completion. The CLI in :mod:`eeg_completion.cli` is a thin layer over
the functions here.

Everything written to disk is a pure function of the experiment file, the
seed and the input bytes: floats go through ``repr``, JSON keys are sorted
and no timestamps or absolute paths are recorded.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import io
import itertools
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .cascade import CascadeModel, TrainConfig, TrainReport, stack_segments, train
from .edf import EdfError, read_channel
from .metrics import MetricsReport, aggregate, evaluate
from .signal import (
    MaskMethod,
    MaskSpec,
    Position,
    ScaleRecord,
    Segment,
    SignalError,
    apply_mask,
    build_mask,
    explicit_mask,
    extract_segments,
    normalize,
)
from .synthetic import synthetic_subjects
from .transformer import ModelConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = [
    "SpecError",
    "DataError",
    "Split",
    "ExperimentSpec",
    "Cell",
    "cell_seed",
    "SegmentStore",
    "ingest",
    "split_indices",
    "CellResult",
    "run_cell",
    "run_grid",
    "evaluate_checkpoint",
    "parse_mask",
    "Completion",
    "complete",
    "write_completion",
]

STORE_NAME = "segments.store"
METRIC_NAMES = ("nrmse", "nrmse_all", "rmse", "fd_nrmse", "rmse_physical")


class SpecError(ValueError):
    """Malformed experiment file or option."""


class DataError(ValueError):
    """Input data that cannot be read or used."""


# --------------------------------------------------------------------------
# experiment file


@dataclass(frozen=True)
class Split:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    policy: str = "subject"

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr) or self.train <= 0 or self.test <= 0:
            raise SpecError("split fractions must be >= 0, with train and test > 0")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise SpecError(f"split fractions must sum to 1, got {sum(fr)!r}")
        if self.policy not in ("subject", "segment"):
            raise SpecError(f"split policy must be 'subject' or 'segment', got {self.policy!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: data, grid axes, split, model and training settings.

    ``files`` are resolved against ``base_dir`` (the directory holding the
    experiment file). ``synthetic_subjects > 0`` appends generated
    recordings, one per subject, for runs without real data.

    ``train_masks="cell"`` trains one model per grid cell. ``"grid"`` trains
    one model per (alpha, cascade) pair on all of the grid's mask settings,
    dealt out round-robin over the training segments, and evaluates it on
    each cell's setting.
    """

    files: tuple[str, ...] = ()
    channel: str = "EEG Fpz-Cz"
    segment_len: int = 100
    stride: int | None = None
    synthetic_subjects: int = 0
    synthetic_seconds: float = 120.0
    synthetic_seed: int = 0
    missing_counts: tuple[int, ...] = (1, 5, 10, 20, 50)
    positions: tuple[Position, ...] = (Position.MIDDLE,)
    mask_methods: tuple[MaskMethod, ...] = (MaskMethod.ZERO,)
    alphas: tuple[float, ...] = (2.0,)
    cascade: tuple[bool, ...] = (True,)
    alpha_sweep: tuple[float, ...] = ()
    alpha_sweep_counts: tuple[int, ...] = (5, 10)
    train_masks: str = "cell"
    split: Split = Split()
    seed: int = 0
    model: ModelConfig | None = None
    train: TrainConfig = TrainConfig()
    base_dir: str = "."

    def __post_init__(self):
        conv = {
            "files": lambda v: tuple(str(x) for x in v),
            "missing_counts": lambda v: tuple(int(x) for x in v),
            "positions": lambda v: tuple(Position(x) for x in v),
            "mask_methods": lambda v: tuple(MaskMethod(x) for x in v),
            "alphas": lambda v: tuple(float(x) for x in v),
            "cascade": lambda v: tuple(bool(x) for x in v),
            "alpha_sweep": lambda v: tuple(float(x) for x in v),
            "alpha_sweep_counts": lambda v: tuple(int(x) for x in v),
        }
        for name, f in conv.items():
            try:
                object.__setattr__(self, name, f(getattr(self, name)))
            except ValueError as exc:
                raise SpecError(f"{name}: {exc}") from None
        for name in ("missing_counts", "positions", "mask_methods", "alphas", "cascade"):
            if not getattr(self, name):
                raise SpecError(f"grid list {name!r} must not be empty")
        if not self.files and self.synthetic_subjects <= 0:
            raise SpecError("no data: give [data].files or [data].synthetic_subjects")
        if self.train_masks not in ("cell", "grid"):
            raise SpecError(f"train_masks must be 'cell' or 'grid', got {self.train_masks!r}")
        if Position.EXPLICIT in self.positions:
            raise SpecError("grid positions must be beginning, middle or ending")
        bad = [c for c in self.missing_counts + self.alpha_sweep_counts
               if not 1 <= c <= self.segment_len]
        if bad:
            raise SpecError(f"missing counts {bad} outside [1, {self.segment_len}]")
        if any(a < 1 for a in self.alphas + self.alpha_sweep):
            raise SpecError("alpha values must be >= 1")
        model = self.model or ModelConfig(seq_len=self.segment_len, patch_len=self.segment_len)
        if model.seq_len != self.segment_len:
            raise SpecError(f"model seq_len {model.seq_len} != segment_len {self.segment_len}")
        object.__setattr__(self, "model", model)

    @classmethod
    def from_toml(cls, path) -> ExperimentSpec:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise SpecError(f"cannot read experiment file: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from None
        return cls.from_dict(doc, base_dir=str(path.parent))

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> ExperimentSpec:
        doc = dict(doc)
        kw: dict = {"base_dir": base_dir}
        sections = {
            "data": ("files", "channel", "segment_len", "stride", "synthetic_subjects",
                     "synthetic_seconds", "synthetic_seed"),
            "grid": ("missing_counts", "positions", "mask_methods", "alphas", "cascade",
                     "alpha_sweep", "alpha_sweep_counts", "train_masks"),
        }
        if "seed" in doc:
            kw["seed"] = int(doc.pop("seed"))
        for sec, keys in sections.items():
            table = dict(doc.pop(sec, {}))
            for k in keys:
                if k in table:
                    kw[k] = table.pop(k)
            _no_extra(sec, table)
        try:
            if "split" in doc:
                kw["split"] = Split(**doc.pop("split"))
            if "model" in doc:
                m = dict(doc.pop("model"))
                m.setdefault("seq_len", kw.get("segment_len", 100))
                m.setdefault("patch_len", m["seq_len"])
                kw["model"] = ModelConfig(**m)
            if "train" in doc:
                kw["train"] = TrainConfig(**doc.pop("train"))
        except TypeError as exc:
            raise SpecError(str(exc)) from None
        except SpecError:
            raise
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        _no_extra("top level", doc)
        return cls(**kw)

    def replace(self, **changes) -> ExperimentSpec:
        return dataclasses.replace(self, **changes)

    def cells(self) -> list[Cell]:
        """Grid cells in a fixed order: the main grid, then the alpha sweep."""
        out = [
            Cell(c, p, m, a, k)
            for c, p, m, a, k in itertools.product(self.missing_counts, self.positions,
                                                   self.mask_methods, self.alphas, self.cascade)
        ]
        for c, a in itertools.product(self.alpha_sweep_counts if self.alpha_sweep else (),
                                      self.alpha_sweep):
            out.append(Cell(c, Position.MIDDLE, MaskMethod.ZERO, a, True))
        seen, unique = set(), []
        for cell in out:
            if cell not in seen:
                seen.add(cell)
                unique.append(cell)
        return unique

    def fingerprint(self) -> dict:
        """Settings that affect every cell's result (grid axes excluded)."""
        return {
            "segment_len": self.segment_len,
            "split": dataclasses.asdict(self.split),
            "model": self.model.to_dict(),
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
        }


def _no_extra(where: str, table: dict) -> None:
    if table:
        raise SpecError(f"unknown key(s) in {where}: {sorted(table)}")


@dataclass(frozen=True)
class Cell:
    missing_count: int
    position: Position
    mask_method: MaskMethod
    alpha: float
    cascade: bool

    @property
    def data_key(self) -> str:
        """The part of the cell that decides data, masks and initial weights."""
        return (f"count={self.missing_count}/position={self.position.value}"
                f"/mask={self.mask_method.value}")

    @property
    def model_name(self) -> str:
        return "cascade" if self.cascade else "basic"

    @property
    def cell_id(self) -> str:
        return (f"n{self.missing_count}-{self.position.value}-{self.mask_method.value}"
                f"-a{self.alpha!r}-{self.model_name}")

    def to_dict(self) -> dict:
        return {"missing_count": self.missing_count, "position": self.position.value,
                "mask_method": self.mask_method.value, "alpha": self.alpha,
                "cascade": self.cascade}

    @classmethod
    def from_dict(cls, d: dict) -> Cell:
        return cls(int(d["missing_count"]), Position(d["position"]),
                   MaskMethod(d["mask_method"]), float(d["alpha"]), bool(d["cascade"]))


def cell_seed(seed: int, cell: Cell) -> int:
    """Seed for one cell, independent of which other cells exist.

    Alpha and the cascade flag are left out so that the pairs compared in
    the ablations start from the same weights and see the same batches.
    """
    return _hash_seed(seed, cell.data_key)


def _hash_seed(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


# --------------------------------------------------------------------------
# segment store


@dataclass
class SegmentStore:
    """Normalized segments with per-recording scale records and provenance.

    ``sources[i]`` describes recording ``i``: subject, file, sha256, sample
    rate, scale record and the number of segments it contributed; segments
    are stored recording by recording in that order.
    """

    segment_len: int
    channel: str
    sources: list[dict]
    segments: np.ndarray

    MAGIC_KIND = "eeg-segment-store/1"

    @functools.cached_property
    def source_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.sources)), [s["n_segments"] for s in self.sources])

    @functools.cached_property
    def _first(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s["n_segments"] for s in self.sources])])

    def subject_of(self, indices) -> list[str]:
        src = self.source_index
        return [self.sources[src[i]]["subject"] for i in indices]

    def scale_of(self, i: int) -> ScaleRecord:
        s = self.sources[self.source_index[i]]
        return ScaleRecord(s["offset"], s["half_range"])

    def segment(self, i: int) -> Segment:
        k = self.source_index[i]
        s = self.sources[k]
        return Segment(self.segments[i], f"{s['subject']}@{(i - self._first[k]) * s['stride']}")

    def to_bytes(self) -> bytes:
        meta = {"kind": self.MAGIC_KIND, "segment_len": self.segment_len,
                "channel": self.channel, "sources": self.sources}
        return checkpoint.dumps({"segments": self.segments}, meta)

    def save(self, path) -> None:
        tmp = os.fspath(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> SegmentStore:
        try:
            tensors, meta = checkpoint.load_tensors(path)
        except OSError as exc:
            raise DataError(f"cannot read segment store: {exc}") from None
        except checkpoint.CheckpointError as exc:
            raise DataError(f"{path}: {exc}") from None
        if meta.get("kind") != cls.MAGIC_KIND:
            raise DataError(f"{path} is not a segment store")
        return cls(meta["segment_len"], meta["channel"], meta["sources"], tensors["segments"])


def ingest(spec: ExperimentSpec, skip_bad: bool = False) -> tuple[SegmentStore, list[str]]:
    """Read every recording of ``spec`` into a store.

    Returns the store and one message per file that failed. Without
    ``skip_bad`` the first failure raises :class:`DataError`.
    """
    stride = spec.stride or spec.segment_len
    sources, blocks, errors = [], [], []

    def add(subject, file, digest, rate, raw):
        z, rec = normalize(raw)
        segs = extract_segments(z, spec.segment_len, stride, subject)
        sources.append({"subject": subject, "file": file, "sha256": digest,
                        "sample_rate": float(rate), "offset": rec.offset,
                        "half_range": rec.half_range, "stride": stride,
                        "n_segments": len(segs)})
        blocks.append(np.stack([s.samples for s in segs]))

    for name in spec.files:
        path = Path(spec.base_dir) / name
        try:
            data = path.read_bytes()
            raw, rate = read_channel(data, spec.channel)
            add(Path(name).stem, name, hashlib.sha256(data).hexdigest(), rate, raw)
        except (OSError, EdfError, SignalError) as exc:
            msg = f"{name}: {exc}"
            if not skip_bad:
                raise DataError(msg) from None
            log.warning("skipping %s", msg)
            errors.append(msg)
    if spec.synthetic_subjects > 0:
        recs = synthetic_subjects(spec.synthetic_subjects, spec.synthetic_seconds,
                                  seed=spec.synthetic_seed)
        for i, raw in enumerate(recs):
            tag = (f"synthetic:seed={spec.synthetic_seed}:subject={i}"
                   f":seconds={spec.synthetic_seconds!r}")
            add(f"synth{i:02d}", tag, hashlib.sha256(raw.tobytes()).hexdigest(), 100.0, raw)
    if not blocks:
        raise DataError("no usable recordings" + (f" ({len(errors)} failed)" if errors else ""))
    store = SegmentStore(spec.segment_len, spec.channel, sources, np.concatenate(blocks))
    return store, errors


def split_indices(store: SegmentStore, split: Split,
                  seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Segment indices for (train, val, test).

    ``subject`` policy keeps each subject in one part, in store order:
    training subjects first, then validation, then test. ``segment``
    policy shuffles segments with ``seed``. An empty validation part means
    early stopping watches the training set.
    """
    if split.policy == "subject":
        subjects = list(dict.fromkeys(s["subject"] for s in store.sources))
        groups = _partition(len(subjects), split)
        src = store.source_index
        subj_of_src = np.array([subjects.index(s["subject"]) for s in store.sources])
        seg_subject = subj_of_src[src]
        return tuple(np.flatnonzero(np.isin(seg_subject, g)) for g in groups)
    order = np.random.default_rng(seed).permutation(store.segments.shape[0])
    return tuple(np.sort(order[g]) for g in _partition(order.size, split))


def _partition(n: int, split: Split) -> list[np.ndarray]:
    n_test = max(1, round(split.test * n))
    n_val = round(split.val * n) if split.val > 0 else 0
    if split.val > 0:
        n_val = max(1, n_val)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DataError(f"{n} units cannot be split {split.train}/{split.val}/{split.test}")
    idx = np.arange(n)
    return [idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]]


# --------------------------------------------------------------------------
# cells


@dataclass
class CellResult:
    cell: Cell
    seed: int
    subjects: list[str]
    reports: list[MetricsReport]
    training: TrainReport | None = None
    model: CascadeModel | None = None
    checkpoint_sha256: str = ""

    def mean(self, metric: str = "nrmse") -> float:
        return float(np.mean([getattr(r, metric) for r in self.reports]))

    def to_json(self) -> str:
        doc = {"cell": self.cell.to_dict(), "seed": self.seed, "subjects": self.subjects,
               "checkpoint_sha256": self.checkpoint_sha256,
               "reports": [dataclasses.asdict(r) for r in self.reports]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> CellResult:
        doc = json.loads(text)
        return cls(Cell.from_dict(doc["cell"]), doc["seed"], doc["subjects"],
                   [MetricsReport(**r) for r in doc["reports"]],
                   checkpoint_sha256=doc["checkpoint_sha256"])


def _mask_segments(store: SegmentStore, indices, spec: MaskSpec, seed: int):
    out = []
    for i in indices:
        ss = np.random.SeedSequence([seed, int(i)]).generate_state(1)[0]
        out.append(apply_mask(store.segment(int(i)), spec, int(ss)))
    return out


def _grid_masks(spec: ExperimentSpec) -> list[MaskSpec]:
    return [build_mask(spec.segment_len, c, p, m)
            for c, p, m in itertools.product(spec.missing_counts, spec.positions,
                                             spec.mask_methods)]


def _mixed_segments(store: SegmentStore, indices, specs: list[MaskSpec], seed: int):
    out = []
    for j, i in enumerate(indices):
        ss = np.random.SeedSequence([seed, int(i)]).generate_state(1)[0]
        out.append(apply_mask(store.segment(int(i)), specs[j % len(specs)], int(ss)))
    return out


def _evaluate(model: CascadeModel, store: SegmentStore, indices, mspec: MaskSpec,
              seed: int) -> tuple[list[str], list[MetricsReport]]:
    masked = _mask_segments(store, indices, mspec, seed)
    x, t, m = stack_segments(masked)
    _, out = model.predict(x, m)
    reports = [evaluate(t[j], out[j], m[j], scale=store.scale_of(int(i)).half_range)
               for j, i in enumerate(indices)]
    return store.subject_of(indices), reports


def run_cell(store: SegmentStore, spec: ExperimentSpec, cell: Cell, out_dir=None, *,
             max_seconds: float | None = None) -> CellResult:
    """Train one model for ``cell`` and evaluate it on the test split.

    With ``out_dir`` the checkpoint, training curve and per-segment results
    go to ``out_dir/<cell_id>/``; a cell whose results are already there
    for the same settings and data is loaded instead of retrained.
    """
    if spec.train_masks == "grid":
        return _run_mixed_cell(store, spec, cell, out_dir, max_seconds)
    seed = cell_seed(spec.seed, cell)
    store_hash = hashlib.sha256(store.to_bytes()).hexdigest()
    stamp = {"settings": spec.fingerprint(), "store": store_hash, "cell": cell.to_dict(),
             "seed": seed}
    cdir = None if out_dir is None else Path(out_dir) / cell.cell_id
    if cdir is not None:
        cached = _load_cached(cdir, stamp)
        if cached is not None:
            log.info("cell %s: reusing results in %s", cell.cell_id, cdir)
            return cached

    mspec = build_mask(spec.segment_len, cell.missing_count, cell.position, cell.mask_method)
    tr, va, te = split_indices(store, spec.split, spec.seed)
    model = CascadeModel(spec.model, seed=seed, cascade=cell.cascade)
    cfg = dataclasses.replace(spec.train, alpha=cell.alpha, seed=seed)
    log.info("cell %s: training on %d segments (val %d, test %d)", cell.cell_id,
             tr.size, va.size, te.size)
    report = train(model, _mask_segments(store, tr, mspec, seed),
                   _mask_segments(store, va, mspec, seed), cfg, max_seconds=max_seconds)
    subjects, reports = _evaluate(model, store, te, mspec, seed)
    result = CellResult(cell, seed, subjects, reports, report, model)
    if cdir is not None:
        cdir.mkdir(parents=True, exist_ok=True)
        model.save(cdir / "model.ckpt", {"cell": cell.to_dict(), "seed": seed,
                                         "stamp": _digest(stamp)})
        result.checkpoint_sha256 = checkpoint.file_hash(cdir / "model.ckpt")
        (cdir / "training.csv").write_text(report.to_csv())
        _atomic_write(cdir / "result.json", result.to_json())
        _atomic_write(cdir / "stamp.json", json.dumps(stamp, sort_keys=True) + "\n")
    return result


def _run_mixed_cell(store, spec, cell, out_dir, max_seconds) -> CellResult:
    seed = _hash_seed(spec.seed, "train_masks=grid")
    kind = "cascade" if cell.cascade else "basic"
    masks = _grid_masks(spec)
    stamp = {"settings": spec.fingerprint(),
             "store": hashlib.sha256(store.to_bytes()).hexdigest(),
             "masks": [[m.count, m.position.value, m.method.value] for m in masks],
             "alpha": cell.alpha, "cascade": cell.cascade, "seed": seed}
    mdir = None if out_dir is None else Path(out_dir) / f"shared-a{cell.alpha!r}-{kind}"
    model, report = None, None
    if mdir is not None:
        try:
            if json.loads((mdir / "stamp.json").read_text()) == stamp:
                model, _ = CascadeModel.load(mdir / "model.ckpt")
                log.info("cell %s: reusing shared model in %s", cell.cell_id, mdir)
        except (OSError, ValueError):
            model = None
    tr, va, te = split_indices(store, spec.split, spec.seed)
    if model is None:
        model = CascadeModel(spec.model, seed=seed, cascade=cell.cascade)
        cfg = dataclasses.replace(spec.train, alpha=cell.alpha, seed=seed)
        log.info("training shared %s model (alpha %r) on %d mask settings", kind, cell.alpha,
                 len(masks))
        report = train(model, _mixed_segments(store, tr, masks, seed),
                       _mixed_segments(store, va, masks, seed), cfg, max_seconds=max_seconds)
        if mdir is not None:
            mdir.mkdir(parents=True, exist_ok=True)
            model.save(mdir / "model.ckpt", {"seed": seed, "stamp": _digest(stamp)})
            (mdir / "training.csv").write_text(report.to_csv())
            _atomic_write(mdir / "stamp.json", json.dumps(stamp, sort_keys=True) + "\n")
    mspec = build_mask(spec.segment_len, cell.missing_count, cell.position, cell.mask_method)
    subjects, reports = _evaluate(model, store, te, mspec, cell_seed(spec.seed, cell))
    sha = "" if mdir is None else checkpoint.file_hash(mdir / "model.ckpt")
    return CellResult(cell, seed, subjects, reports, report, model, sha)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_cached(cdir: Path, stamp: dict) -> CellResult | None:
    try:
        old = json.loads((cdir / "stamp.json").read_text())
        result = CellResult.from_json((cdir / "result.json").read_text())
    except (OSError, ValueError, KeyError):
        return None
    if old != stamp:
        return None
    ckpt = cdir / "model.ckpt"
    if not ckpt.exists() or checkpoint.file_hash(ckpt) != result.checkpoint_sha256:
        return None
    return result


# --------------------------------------------------------------------------
# grid and reports


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _groups(result: CellResult) -> list[tuple[str, list[MetricsReport]]]:
    """Pooled over all test segments first, then one group per subject."""
    by: dict[str, list[MetricsReport]] = {}
    for s, r in zip(result.subjects, result.reports):
        by.setdefault(s, []).append(r)
    return [("all", result.reports)] + sorted(by.items())


def metrics_table(results: list[CellResult]) -> str:
    rows = []
    for res in results:
        c = res.cell
        for subject, reps in _groups(res):
            agg = aggregate(reps)
            for m in METRIC_NAMES:
                rows.append([c.missing_count, c.position.value, c.mask_method.value, m,
                             agg.mean[m], agg.std[m], c.alpha, c.model_name, subject])
    return _csv(rows, ["missing_count", "position", "mask_method", "metric", "mean", "std",
                       "alpha", "model", "subject"])


def results_table(results: list[CellResult]) -> str:
    rows = []
    for res in results:
        agg = aggregate(res.reports)
        rows.append([res.cell.cell_id, res.cell.missing_count, res.cell.position.value,
                     res.cell.mask_method.value, res.cell.alpha, res.cell.model_name, res.seed,
                     agg.n, agg.mean["nrmse"], agg.std["nrmse"], agg.mean["nrmse_all"],
                     agg.std["nrmse_all"], agg.mean["fd_nrmse"], agg.mean["rmse_physical"],
                     res.checkpoint_sha256])
    return _csv(rows, ["cell", "missing_count", "position", "mask_method", "alpha", "model",
                       "seed", "n_test", "nrmse_mean", "nrmse_std", "nrmse_all_mean",
                       "nrmse_all_std", "fd_nrmse_mean", "rmse_physical_mean",
                       "checkpoint_sha256"])


def cascade_table(results: list[CellResult]) -> str:
    """Basic minus cascade NRMSE for every cell run both ways (positive means
    the cascade helped), pooled and per subject."""
    index = {(r.cell.data_key, r.cell.alpha, r.cell.cascade): r for r in results}
    rows = []
    for res in results:
        c = res.cell
        if not c.cascade or (c.data_key, c.alpha, False) not in index:
            continue
        basic = dict(_groups(index[(c.data_key, c.alpha, False)]))
        for subject, reps in _groups(res):
            b = aggregate(basic[subject]).mean["nrmse"]
            k = aggregate(reps).mean["nrmse"]
            rows.append([c.missing_count, c.position.value, c.mask_method.value, c.alpha,
                         subject, b, k, b - k])
    return _csv(rows, ["missing_count", "position", "mask_method", "alpha", "subject",
                       "basic_nrmse", "cascade_nrmse", "difference"])


def alpha_table(results: list[CellResult], spec: ExperimentSpec) -> str:
    rows = []
    wanted = set(spec.alpha_sweep)
    for res in sorted(results, key=lambda r: (r.cell.missing_count, r.cell.alpha)):
        c = res.cell
        if (c.alpha in wanted and c.missing_count in spec.alpha_sweep_counts and c.cascade
                and c.position is Position.MIDDLE and c.mask_method is MaskMethod.ZERO):
            agg = aggregate(res.reports)
            rows.append([c.missing_count, c.alpha, agg.mean["nrmse"], agg.std["nrmse"],
                         agg.mean["nrmse_all"], agg.std["nrmse_all"]])
    return _csv(rows, ["missing_count", "alpha", "nrmse_missing_mean", "nrmse_missing_std",
                       "nrmse_all_mean", "nrmse_all_std"])


@dataclass
class GridOutcome:
    results: list[CellResult] = field(default_factory=list)
    skipped: list[tuple[Cell, str]] = field(default_factory=list)


def run_grid(store: SegmentStore, spec: ExperimentSpec, out_dir) -> GridOutcome:
    """Run every cell (resuming finished ones) and write the CSV tables.

    Cells whose mask cannot be applied (e.g. an ``eeg`` mask without enough
    context) are skipped and listed in ``skipped.csv``.
    """
    out = Path(out_dir)
    cells_dir = out / "cells"
    outcome = GridOutcome()
    for cell in spec.cells():
        try:
            outcome.results.append(run_cell(store, spec, cell, cells_dir))
        except SignalError as exc:
            log.warning("cell %s skipped: %s", cell.cell_id, exc)
            outcome.skipped.append((cell, str(exc)))
    res = outcome.results
    (out / "results.csv").write_text(results_table(res))
    (out / "metrics.csv").write_text(metrics_table(res))
    (out / "cascade_vs_basic.csv").write_text(cascade_table(res))
    (out / "alpha_sweep.csv").write_text(alpha_table(res, spec))
    (out / "skipped.csv").write_text(
        _csv([[c.cell_id, msg] for c, msg in outcome.skipped], ["cell", "reason"]))
    return outcome


def evaluate_checkpoint(store: SegmentStore, spec: ExperimentSpec, path,
                        cell: Cell | None = None) -> CellResult:
    """Evaluate a saved model on the test split of ``spec``.

    The mask setting comes from ``cell`` or else the checkpoint metadata.
    """
    try:
        model, meta = CascadeModel.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except checkpoint.CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from None
    if model.config.seq_len != store.segment_len:
        raise DataError(f"checkpoint expects N={model.config.seq_len}, "
                        f"store has N={store.segment_len}")
    if cell is None:
        if "cell" not in meta:
            raise SpecError("checkpoint has no cell metadata; pass the mask setting")
        cell = Cell.from_dict(meta["cell"])
    seed = int(meta.get("seed", cell_seed(spec.seed, cell)))
    mspec = build_mask(store.segment_len, cell.missing_count, cell.position, cell.mask_method)
    _, _, te = split_indices(store, spec.split, spec.seed)
    subjects, reports = _evaluate(model, store, te, mspec, seed)
    return CellResult(cell, seed, subjects, reports, model=model,
                      checkpoint_sha256=checkpoint.file_hash(path))


# --------------------------------------------------------------------------
# completion


def parse_mask(text: str, n: int, method=MaskMethod.ZERO) -> MaskSpec:
    """``middle:10``, ``beginning:5``, ``ending:20``, ``explicit:3,4,7`` or
    ``none``."""
    text = text.strip()
    if text in ("none", "explicit:", ""):
        return explicit_mask(n, (), method)
    kind, _, arg = text.partition(":")
    try:
        if kind == "explicit":
            return explicit_mask(n, sorted(int(v) for v in arg.split(",")), method)
        return build_mask(n, int(arg), Position(kind), method)
    except ValueError as exc:
        raise SpecError(f"bad mask {text!r}: {exc}") from None


@dataclass
class Completion:
    observed: np.ndarray    # input as given (nan where unknown)
    completed: np.ndarray   # observed samples verbatim, model output at missing ones
    stage1: np.ndarray
    stage2: np.ndarray
    missing: np.ndarray


def complete(model: CascadeModel, observed, mask: MaskSpec, rng_seed: int = 0) -> Completion:
    """Fill the masked samples of one physical-unit segment.

    The segment is min-max normalized over its observed samples, run
    through the model and mapped back. Observed samples are copied through
    untouched, so they survive bit for bit.
    """
    observed = np.asarray(observed, dtype=np.float64)
    n = model.config.seq_len
    if observed.shape != (n,):
        raise DataError(f"model expects {n} samples, input has {observed.size}")
    if mask.n != n:
        raise DataError(f"mask built for N={mask.n}, model expects N={n}")
    miss = mask.boolean()
    known = observed[~miss]
    if not np.all(np.isfinite(known)):
        raise DataError("observed samples must be finite")
    if mask.count == 0:
        return Completion(observed, observed.copy(), observed.copy(), observed.copy(), miss)
    if known.size == 0:
        raise DataError("every sample is masked; nothing to condition on")
    lo, hi = float(known.min()), float(known.max())
    if not hi > lo:
        raise DataError("observed samples are constant; cannot normalize")
    rec = ScaleRecord((hi + lo) / 2.0, (hi - lo) / 2.0)
    z = np.where(miss, 0.0, rec.forward(np.where(miss, 0.0, observed)))
    masked = apply_mask(Segment(z, "input"), mask, rng_seed)
    s1, s2 = model.predict(masked.input[None], miss[None])
    s1, s2 = rec.inverse(s1[0]), rec.inverse(s2[0])
    completed = np.where(miss, s2, observed)
    return Completion(observed, completed, s1, s2, miss)


def write_completion(c: Completion, out_dir, real=None) -> None:
    """``completed.txt`` (one value per line), ``indices.csv`` (which
    samples were generated) and ``plot.csv`` (index, observed, stage1,
    stage2, real)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "completed.txt").write_text("".join(f"{float(v)!r}\n" for v in c.completed))
    (out / "indices.csv").write_text(_csv(
        [[i, "generated" if m else "observed"] for i, m in enumerate(c.missing)],
        ["index", "source"]))
    real = c.observed if real is None else np.asarray(real, dtype=np.float64)
    rows = []
    for i in range(c.completed.size):
        obs = "" if c.missing[i] else _fmt(c.observed[i])
        r = "" if not math.isfinite(real[i]) else _fmt(real[i])
        rows.append([i, obs, _fmt(c.stage1[i]), _fmt(c.stage2[i]), r])
    (out / "plot.csv").write_text(_csv(rows, ["index", "observed", "stage1", "stage2", "real"]))
