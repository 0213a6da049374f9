"""Completion error metrics: RMSE and NRMSE on the missing samples, and the
frequency-domain NRMSE between magnitude spectra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricError",
    "MetricsReport",
    "Aggregate",
    "rmse_missing",
    "nrmse",
    "nrmse_all",
    "dft_magnitude",
    "fd_nrmse",
    "evaluate",
    "aggregate",
]


class MetricError(ValueError):
    pass


def _indices(missing, n: int) -> np.ndarray:
    m = np.asarray(missing)
    if m.dtype == bool:
        if m.shape != (n,):
            raise MetricError(f"boolean mask has shape {m.shape}, expected ({n},)")
        return np.flatnonzero(m)
    return np.asarray(sorted(set(int(i) for i in m.ravel())), dtype=int)


def rmse_missing(real, generated, missing) -> float:
    """Root-mean-square error over the missing indices only."""
    real = np.asarray(real, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if real.shape != generated.shape:
        raise MetricError(f"length mismatch: {real.shape} vs {generated.shape}")
    idx = _indices(missing, real.size)
    if idx.size == 0:
        raise MetricError("missing set is empty")
    err = real[idx] - generated[idx]
    return float(np.sqrt(np.mean(err * err)))


def _range(real: np.ndarray) -> float:
    r = float(real.max() - real.min())
    if not r > 0:
        raise MetricError("real segment has zero range")
    return r


def nrmse(real, generated, missing) -> float:
    """Missing-index RMSE divided by ``max(real) - min(real)``."""
    real = np.asarray(real, dtype=np.float64)
    return rmse_missing(real, generated, missing) / _range(real)


def nrmse_all(real, generated) -> float:
    """NRMSE over every index of the segment."""
    real = np.asarray(real, dtype=np.float64)
    return nrmse(real, generated, np.ones(real.size, dtype=bool))


def dft_magnitude(x, k: int | None = None) -> np.ndarray:
    """First ``k`` magnitudes of the N-point DFT of ``x``, divided by N.

    ``k`` defaults to N // 2 and may be at most N // 2 + 1.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n == 0:
        raise MetricError("empty signal")
    k = n // 2 if k is None else int(k)
    if not 1 <= k <= n // 2 + 1:
        raise MetricError(f"K={k} outside [1, {n // 2 + 1}] for N={n}")
    return np.abs(np.fft.rfft(x))[:k] / n


def fd_nrmse(real, generated, k: int | None = None) -> float:
    """RMS difference of the K-point magnitude spectra of two normalized segments."""
    real = np.asarray(real, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if real.shape != generated.shape:
        raise MetricError(f"length mismatch: {real.shape} vs {generated.shape}")
    d = dft_magnitude(real, k) - dft_magnitude(generated, k)
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    nrmse: float
    fd_nrmse: float
    n_missing: int
    nrmse_all: float = float("nan")
    rmse_physical: float = float("nan")


def evaluate(real, generated, missing, k: int | None = None,
             scale: float | None = None) -> MetricsReport:
    """All metrics for one segment. ``scale`` converts normalized RMSE back
    to physical units (the half-range of the recording's min-max map)."""
    real = np.asarray(real, dtype=np.float64)
    idx = _indices(missing, real.size)
    r = rmse_missing(real, generated, idx)
    return MetricsReport(
        rmse=r,
        nrmse=r / _range(real),
        fd_nrmse=fd_nrmse(real, generated, k),
        n_missing=int(idx.size),
        nrmse_all=nrmse_all(real, generated),
        rmse_physical=float("nan") if scale is None else r * scale,
    )


@dataclass(frozen=True)
class Aggregate:
    n: int
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def format(self, metric: str, digits: int = 3) -> str:
        return f"{self.mean[metric]:.{digits}g}±{self.std[metric]:.{digits}g}"


_FIELDS = ("rmse", "nrmse", "fd_nrmse", "nrmse_all", "rmse_physical")


def aggregate(reports, ddof: int = 0) -> Aggregate:
    """Mean and standard deviation of each metric over trials.

    ``ddof=0`` is the population std; pass 1 for the sample std.
    """
    reports = list(reports)
    if not reports:
        raise MetricError("nothing to aggregate")
    mean, std = {}, {}
    for f in _FIELDS:
        v = np.array([getattr(r, f) for r in reports], dtype=np.float64)
        mean[f] = float(v.mean())
        std[f] = float(v.std(ddof=ddof)) if v.size > ddof else float("nan")
    return Aggregate(n=len(reports), mean=mean, std=std)
