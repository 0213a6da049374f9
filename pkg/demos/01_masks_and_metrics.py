"""Cut a recording into segments, hide a run of samples, score a guess.

Run: python3 demos/01_masks_and_metrics.py
"""
import numpy as np

from eeg_completion import apply_mask, build_mask, extract_segments, normalize
from eeg_completion.metrics import dft_magnitude, evaluate
from eeg_completion.synthetic import synthetic_recording

# Thirty seconds of synthetic single-channel EEG at 100 Hz, in microvolts.
raw = synthetic_recording(3000, subject=0)
z, scale = normalize(raw)
print(f"raw range {raw.min():.1f}..{raw.max():.1f} uV -> [-1, 1], half-range {scale.half_range:.1f}")

segments = extract_segments(z, 100, stride=100, source="demo")
print(f"{len(segments)} segments of 100 samples; first is {segments[0].source_id}")

# The three positions, each with 10 missing samples.
seg = segments[7]
for pos in ("beginning", "middle", "ending"):
    spec = build_mask(100, 10, pos)
    print(f"{pos:9s} -> indices {spec.missing_indices[0]}..{spec.missing_indices[-1]}")

# Three ways to fill the hole before the model sees it.
spec = build_mask(100, 10, "middle")
for method in ("zero", "random", "eeg"):
    masked = apply_mask(seg, spec.with_method(method), rng_seed=1)
    print(f"{method:6s} fill: {np.round(masked.input[45:48], 3)}")

# Score two naive guesses: zeros, and straight-line interpolation.
masked = apply_mask(seg, spec)
zeros = masked.input
line = seg.samples.copy()
line[45:55] = np.linspace(seg.samples[44], seg.samples[55], 12)[1:-1]
for name, guess in (("zeros", zeros), ("linear", line)):
    r = evaluate(seg.samples, guess, masked.missing, scale=scale.half_range)
    print(f"{name:6s}: NRMSE {r.nrmse:.3f}  FD-NRMSE {r.fd_nrmse:.4f}  RMSE {r.rmse_physical:.2f} uV")

# The spectrum behind FD-NRMSE: the first few bins of |DFT| / N.
print("spectrum head:", np.round(dft_magnitude(seg.samples)[:6], 4))
