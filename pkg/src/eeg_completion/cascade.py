"""Two-stage cascade, re-weighted loss and the training loop.

Stage 1 completes the masked input. Its output is written back into the
missing positions only, the observed samples are kept, and stage 2 refines
that sequence. Both stages are trained together by default.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import dumps, loads, load_tensors, save_tensors
from .signal import MaskedSegment
from .transformer import ModelConfig, Transformer

__all__ = [
    "TrainingDivergence",
    "Optimizer",
    "LossKind",
    "TrainConfig",
    "CascadeModel",
    "SGD",
    "Adam",
    "EpochRecord",
    "TrainReport",
    "compose_stage2_input",
    "weighted_loss",
    "cascade_forward",
    "stack_segments",
    "train",
    "evaluate_model",
]

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 2.0
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAM
    loss: LossKind = LossKind.SQUARED
    stage_weights: tuple[float, float] = (1.0, 1.0)
    sequential: bool = False
    grad_clip: float | None = None
    min_epochs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "loss", LossKind(self.loss))
        object.__setattr__(self, "stage_weights", tuple(float(w) for w in self.stage_weights))
        if not self.alpha >= 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        d["loss"] = self.loss.value
        d["stage_weights"] = list(self.stage_weights)
        return d


# --------------------------------------------------------------------------
# model


class CascadeModel:
    """Two independent Transformers with the same config. ``cascade=False``
    keeps only stage 1 (the basic model)."""

    def __init__(self, config: ModelConfig, seed: int = 0, cascade: bool = True):
        self.config = config
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.stage1 = Transformer(config, np.random.default_rng(seeds[0]))
        self.stage2 = Transformer(config, np.random.default_rng(seeds[1])) if cascade else None

    @property
    def cascade(self) -> bool:
        return self.stage2 is not None

    @property
    def stages(self) -> list[Transformer]:
        return [self.stage1] if self.stage2 is None else [self.stage1, self.stage2]

    def parameters(self) -> list[Tensor]:
        return [p for s in self.stages for p in s.parameters()]

    def stage1_only(self) -> CascadeModel:
        """A basic model sharing this model's stage-1 weights."""
        view = object.__new__(CascadeModel)
        view.config, view.stage1, view.stage2 = self.config, self.stage1, None
        return view

    def outputs(self, x, missing) -> tuple[Tensor, Tensor | None]:
        """Stage outputs for a batch ``x (B, N)`` with boolean ``missing (B, N)``."""
        s1 = self.stage1(x)
        if self.stage2 is None:
            return s1, None
        return s1, self.stage2(compose_stage2_input(x, s1, missing))

    def predict(self, x, missing) -> tuple[np.ndarray, np.ndarray]:
        """Numpy stage outputs; the second equals the first for a basic model."""
        x = np.asarray(x, dtype=np.float64)
        missing = np.asarray(missing, dtype=bool)
        with ag.no_grad():
            s1, s2 = self.outputs(x, missing)
        return s1.data, (s1 if s2 is None else s2).data

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for i, s in enumerate(self.stages, start=1):
            for k, v in s.state_dict().items():
                out[f"stage{i}.{k}"] = v
        return out

    def load_state_dict(self, state) -> None:
        for i, s in enumerate(self.stages, start=1):
            prefix = f"stage{i}."
            s.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)})

    def meta(self) -> dict:
        return {"kind": "cascade" if self.cascade else "basic", "config": self.config.to_dict()}

    def to_bytes(self, extra: dict | None = None) -> bytes:
        return dumps(self.state_dict(), {**self.meta(), **(extra or {})})

    def save(self, path, extra: dict | None = None) -> None:
        save_tensors(path, self.state_dict(), {**self.meta(), **(extra or {})})

    @classmethod
    def from_state(cls, state, meta: dict) -> CascadeModel:
        model = cls(ModelConfig.from_dict(meta["config"]), seed=0, cascade=meta["kind"] == "cascade")
        model.load_state_dict(state)
        return model

    @classmethod
    def load(cls, path) -> tuple[CascadeModel, dict]:
        state, meta = load_tensors(path)
        return cls.from_state(state, meta), meta

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple[CascadeModel, dict]:
        state, meta = loads(data)
        return cls.from_state(state, meta), meta


# --------------------------------------------------------------------------
# composition and loss


def compose_stage2_input(observed, stage1_out, missing=None) -> Tensor:
    """Observed samples where present, stage-1 estimates at missing positions.

    ``observed`` may be a :class:`MaskedSegment` (then ``missing`` may be
    omitted). Differentiable in ``stage1_out`` only, with identity gradient
    on the missing positions.
    """
    if isinstance(observed, MaskedSegment):
        if missing is None:
            missing = observed.missing
        observed = observed.input
    obs = observed.data if isinstance(observed, Tensor) else np.asarray(observed, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    if obs.shape != tuple(stage1_out.shape if isinstance(stage1_out, Tensor)
                          else np.shape(stage1_out)):
        raise ValueError("observed input and stage-1 output lengths differ")
    if missing.shape != obs.shape:
        raise ValueError("missing mask shape does not match the input")
    return ag.where(missing, stage1_out, Tensor(obs))


def weighted_loss(output, target, missing, alpha: float = 1.0,
                  kind: LossKind | str = LossKind.SQUARED) -> Tensor:
    """``mean(w * err)`` with ``w = alpha`` on missing positions, 1 elsewhere.

    ``err`` is the squared error, or the absolute error for ``kind="absolute"``.
    """
    output = output if isinstance(output, Tensor) else Tensor(output)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if output.size == 0:
        raise ValueError("empty vectors")
    if output.shape != target.shape:
        raise ValueError(f"length mismatch: {output.shape} vs {target.shape}")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    diff = ag.sub(output, target)
    err = ag.square(diff) if LossKind(kind) is LossKind.SQUARED else ag.absolute(diff)
    w = np.where(np.asarray(missing, dtype=bool), float(alpha), 1.0)
    return ag.mean(ag.mul(err, w))


def cascade_forward(model: CascadeModel, masked: MaskedSegment) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(masked.input, masked.missing)


def stack_segments(items: Sequence[MaskedSegment]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(inputs, targets, missing)`` arrays of shape ``(B, N)``."""
    x = np.stack([m.input for m in items])
    t = np.stack([m.target.samples for m in items])
    miss = np.stack([m.missing for m in items])
    return x, t, miss


# --------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _make_optimizer(cfg: TrainConfig, params: list[Tensor]):
    if cfg.optimizer is Optimizer.SGD:
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate)


def _clip(params: list[Tensor], limit: float | None) -> None:
    if limit is None:
        return
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if total > limit:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (limit / total)


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_nrmse_missing: float
    val_nrmse_all: float
    phase: str = "joint"


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = math.inf
    best_state: OrderedDict | None = None
    stopped: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_nrmse_missing", "val_nrmse_all", "phase"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_nrmse_missing),
                        repr(r.val_nrmse_all), r.phase])
        return buf.getvalue()

    def curve(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.epochs]


def evaluate_model(model: CascadeModel, x, target, missing,
                   batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment (missing-index NRMSE, all-index NRMSE) of the final stage."""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    out = np.empty_like(x)
    for i in range(0, x.shape[0], batch_size):
        out[i:i + batch_size] = model.predict(x[i:i + batch_size], missing[i:i + batch_size])[1]
    rng = target.max(axis=1) - target.min(axis=1)
    sq = (out - target) ** 2
    n_miss = missing.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        miss = np.sqrt(np.where(missing, sq, 0.0).sum(axis=1) / n_miss) / rng
    whole = np.sqrt(sq.mean(axis=1)) / rng
    return miss, whole


def _stage_loss(model: CascadeModel, xb, tb, mb, cfg: TrainConfig, phase: str) -> Tensor:
    w1, w2 = cfg.stage_weights
    if phase == "stage2":
        with ag.no_grad():
            s1 = model.stage1(xb)
        return weighted_loss(model.stage2(compose_stage2_input(xb, s1, mb)), tb, mb,
                             cfg.alpha, cfg.loss)
    s1, s2 = model.outputs(xb, mb)
    loss = weighted_loss(s1, tb, mb, cfg.alpha, cfg.loss)
    if s2 is None or phase == "stage1":
        return loss
    return ag.add(ag.scale(loss, w1), ag.scale(weighted_loss(s2, tb, mb, cfg.alpha, cfg.loss), w2))


def _run_phase(model, params, data, val, cfg: TrainConfig, phase: str, report: TrainReport,
               rng: np.random.Generator, epoch0: int, deadline: float | None,
               target_metric: float | None) -> int:
    x, t, m = data
    opt = _make_optimizer(cfg, params)
    n = x.shape[0]
    best, best_state, stale = math.inf, None, 0
    epoch = epoch0
    for _ in range(cfg.max_epochs):
        epoch += 1
        order = rng.permutation(n)
        total, count = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            for p in params:
                p.grad = None
            loss = _stage_loss(model, x[idx], t[idx], m[idx], cfg, phase)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergence(
                    f"non-finite loss {value} at epoch {epoch}, batch {i // cfg.batch_size} "
                    f"({phase}); try a lower learning rate (now {cfg.learning_rate})"
                )
            ag.backward(loss)
            _clip(params, cfg.grad_clip)
            opt.step()
            total += value * idx.size
            count += idx.size
        probe = model.stage1_only() if phase == "stage1" else model
        miss, whole = evaluate_model(probe, *val)
        metric = float(np.mean(miss))
        if not math.isfinite(metric):
            raise TrainingDivergence(
                f"non-finite validation NRMSE after epoch {epoch} ({phase}); "
                f"try a lower learning rate (now {cfg.learning_rate})"
            )
        report.epochs.append(EpochRecord(epoch, total / count, metric, float(np.mean(whole)), phase))
        log.debug("epoch %d %s loss=%.6g val_nrmse=%.5f", epoch, phase, total / count, metric)
        if metric < best:
            best, stale = metric, 0
            best_state = model.state_dict()
            report.best_epoch, report.best_metric = epoch, metric
        else:
            stale += 1
        if target_metric is not None and metric < target_metric:
            report.stopped = f"{phase}: reached target at epoch {epoch}"
            break
        if stale >= cfg.patience and epoch - epoch0 >= cfg.min_epochs:
            report.stopped = f"{phase}: early stop at epoch {epoch}"
            break
        if deadline is not None and time.monotonic() > deadline:
            report.stopped = f"{phase}: time budget exhausted at epoch {epoch}"
            break
    else:
        report.stopped = f"{phase}: max_epochs reached"
    model.load_state_dict(best_state)
    report.best_state = best_state
    return epoch


def train(model: CascadeModel, train_set: Sequence[MaskedSegment],
          val_set: Sequence[MaskedSegment] | None, cfg: TrainConfig, *,
          max_seconds: float | None = None, target_metric: float | None = None) -> TrainReport:
    """Fit ``model`` to ``train_set`` by minimising the weighted loss.

    Early stopping watches the mean missing-index NRMSE on ``val_set``
    (the training set itself when ``val_set`` is empty). The model is left
    holding its best weights, which the report also carries.

    ``max_seconds`` and ``target_metric`` stop training early; runs that
    use neither are bit-reproducible from ``cfg.seed``.
    """
    if not train_set:
        raise ValueError("training set is empty")
    data = stack_segments(train_set)
    val = stack_segments(val_set) if val_set else data
    rng = np.random.default_rng(cfg.seed)
    deadline = None if max_seconds is None else time.monotonic() + max_seconds
    report = TrainReport()

    if cfg.sequential and model.cascade:
        e = _run_phase(model, model.stage1.parameters(), data, val, cfg, "stage1", report,
                       rng, 0, deadline, None)
        first = report.stopped
        _run_phase(model, model.stage2.parameters(), data, val, cfg, "stage2", report,
                   rng, e, deadline, target_metric)
        report.stopped = f"{first}; {report.stopped}"
    else:
        _run_phase(model, model.parameters(), data, val, cfg, "joint", report,
                   rng, 0, deadline, target_metric)
    return report
