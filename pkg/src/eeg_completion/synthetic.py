"""Synthetic sleep-EEG-like recordings for tests and demos.

A recording is coloured (1/f^beta) background activity, band-limited to
0.3-35 Hz, plus waxing/waning alpha and spindle bursts and white sensor
noise. Each synthetic "subject" draws its own spectral slope, rhythm
frequencies and amplitudes from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SubjectProfile", "subject_profile", "synthetic_recording", "synthetic_subjects"]


@dataclass(frozen=True)
class SubjectProfile:
    beta: float
    alpha_hz: float
    alpha_amp: float
    spindle_hz: float
    spindle_amp: float
    noise_amp: float
    amplitude_uv: float


def subject_profile(seed: int) -> SubjectProfile:
    rng = np.random.default_rng([seed, 0x5EE6])
    return SubjectProfile(
        beta=float(rng.uniform(1.6, 2.2)),
        alpha_hz=float(rng.uniform(8.5, 11.5)),
        alpha_amp=float(rng.uniform(0.1, 0.3)),
        spindle_hz=float(rng.uniform(12.0, 14.0)),
        spindle_amp=float(rng.uniform(0.1, 0.25)),
        noise_amp=float(rng.uniform(0.01, 0.03)),
        amplitude_uv=float(rng.uniform(30.0, 80.0)),
    )


def _coloured_noise(n: int, fs: float, beta: float, rng: np.random.Generator) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    shape = np.zeros_like(freqs)
    band = (freqs >= 0.3) & (freqs <= 35.0)
    shape[band] = freqs[band] ** (-beta / 2.0)
    spec = shape * (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size))
    x = np.fft.irfft(spec, n)
    return x / x.std()


def _bursts(n: int, fs: float, hz: float, rng: np.random.Generator, rate_hz: float = 0.2,
            dur_s: float = 1.0) -> np.ndarray:
    t = np.arange(n) / fs
    envelope = np.zeros(n)
    n_bursts = rng.poisson(rate_hz * n / fs)
    for centre in rng.uniform(0, n / fs, size=n_bursts):
        width = dur_s * rng.uniform(0.5, 1.5) / 2.0
        envelope += np.exp(-0.5 * ((t - centre) / width) ** 2)
    phase = rng.uniform(0, 2 * np.pi)
    drift = np.cumsum(rng.standard_normal(n)) * 0.002
    return envelope * np.sin(2 * np.pi * hz * t + phase + drift)


def synthetic_recording(n_samples: int, subject: int | SubjectProfile = 0, seed: int = 0,
                        fs: float = 100.0) -> np.ndarray:
    """One channel of ``n_samples`` in microvolts."""
    prof = subject if isinstance(subject, SubjectProfile) else subject_profile(subject)
    rng = np.random.default_rng([seed, int(prof.beta * 1e6)])
    x = _coloured_noise(n_samples, fs, prof.beta, rng)
    x += prof.alpha_amp * _bursts(n_samples, fs, prof.alpha_hz, rng) * 2.0
    x += prof.spindle_amp * _bursts(n_samples, fs, prof.spindle_hz, rng, rate_hz=0.1) * 2.0
    x += prof.noise_amp * rng.standard_normal(n_samples)
    return x * prof.amplitude_uv


def synthetic_subjects(n_subjects: int, seconds: float, seed: int = 0,
                       fs: float = 100.0) -> list[np.ndarray]:
    n = int(round(seconds * fs))
    return [synthetic_recording(n, subject=s, seed=seed + s, fs=fs) for s in range(n_subjects)]
