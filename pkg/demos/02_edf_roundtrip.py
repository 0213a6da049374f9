"""Write a small EDF file, read one channel back, and check both domains.

Run: python3 demos/02_edf_roundtrip.py
"""
import tempfile
from pathlib import Path

import numpy as np

from eeg_completion.edf import LabelError, SignalHeader, parse_header, read_channel, write_edf

fpz = SignalHeader("EEG Fpz-Cz", -200.0, 200.0, -2048, 2047, 100, physical_dimension="uV")
pz = SignalHeader("EEG Pz-Oz", -100.0, 100.0, -32768, 32767, 100, physical_dimension="uV")
rng = np.random.default_rng(0)
digital = [rng.integers(-2048, 2048, 300), rng.integers(-32768, 32768, 300)]

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "night1.edf"
    write_edf(path, [fpz, pz], digital)

    hdr = parse_header(path.read_bytes())
    print(f"{hdr.num_signals} signals, {hdr.num_records} records of {hdr.record_duration_s} s")
    print("labels:", hdr.labels)

    ints, rate = read_channel(path, "EEG Fpz-Cz", digital=True)
    print(f"integer round trip exact: {np.array_equal(ints, digital[0])} at {rate} Hz")

    uv, _ = read_channel(path, "EEG Fpz-Cz")
    expected = -200.0 + (digital[0] + 2048) * 400.0 / 4095
    print(f"physical max error: {np.max(np.abs(uv - expected)):.2e} uV")

    try:
        read_channel(path, "EOG horizontal")
    except LabelError as exc:
        print("unknown label ->", exc)
