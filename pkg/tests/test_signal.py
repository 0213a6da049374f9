import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eeg_completion.signal import (
    DegenerateRangeError,
    EmptyInputError,
    InsufficientContextError,
    InvalidCountError,
    MaskMethod,
    MaskSpec,
    Position,
    Segment,
    SignalError,
    apply_mask,
    build_mask,
    explicit_mask,
    extract_segments,
    normalize,
)


def test_extract_exact_fit():
    segs = extract_segments(np.arange(100.0), 100, 100)
    assert len(segs) == 1 and segs[0].n == 100


def test_extract_window_count_and_offsets():
    segs = extract_segments(np.arange(250.0), 100, 100, source="rec")
    assert [s.source_id for s in segs] == ["rec@0", "rec@100"]
    assert segs[1].samples[0] == 100.0


@pytest.mark.parametrize("length,seg,stride", [(250, 100, 30), (1000, 100, 1), (137, 7, 5)])
def test_extract_count_formula(length, seg, stride):
    assert len(extract_segments(np.zeros(length), seg, stride)) == (length - seg) // stride + 1


def test_extract_too_short():
    with pytest.raises(EmptyInputError):
        extract_segments(np.zeros(99), 100, 100)


def test_normalize_endpoints():
    out, rec = normalize([0.0, 5.0, 10.0])
    np.testing.assert_array_equal(out, [-1.0, 0.0, 1.0])


def test_normalize_identity_record():
    out, rec = normalize([-1.0, 1.0])
    np.testing.assert_array_equal(out, [-1.0, 1.0])
    assert (rec.offset, rec.half_range) == (0.0, 1.0)


def test_normalize_constant_rejected():
    with pytest.raises(DegenerateRangeError):
        normalize([3.0, 3.0, 3.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e6, 1e6)))
def test_normalize_roundtrip(raw):
    if raw.max() == raw.min():
        return
    out, rec = normalize(raw)
    assert np.all(out >= -1) and np.all(out <= 1)
    back = rec.inverse(out)
    scale = max(np.max(np.abs(raw)), 1e-300)
    assert np.max(np.abs(back - raw)) / scale < 1e-12


def test_mask_middle_centering():
    assert build_mask(100, 10, Position.MIDDLE).missing_indices == tuple(range(45, 55))


def test_mask_beginning_single():
    assert build_mask(100, 1, "beginning").missing_indices == (0,)


def test_mask_ending_fifty():
    assert build_mask(100, 50, "ending").missing_indices == tuple(range(50, 100))


@pytest.mark.parametrize("count", [0, 101, -3])
def test_mask_bad_count(count):
    with pytest.raises(InvalidCountError):
        build_mask(100, count, "middle")


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 200), st.data())
def test_positional_masks_pure_and_contiguous(n, data):
    count = data.draw(st.integers(1, n))
    for pos in ("beginning", "middle", "ending"):
        a, b = build_mask(n, count, pos), build_mask(n, count, pos)
        assert a == b
        idx = a.missing_indices
        assert len(idx) == count and idx[-1] - idx[0] == count - 1 and idx[-1] < n


def test_maskspec_validation():
    with pytest.raises(SignalError):
        MaskSpec((3, 2), 10)
    with pytest.raises(SignalError):
        MaskSpec((1, 20), 10)
    with pytest.raises(SignalError):
        MaskSpec((1, 3), 10, Position.MIDDLE)


SEG = Segment([0.1, 0.2, 0.3, 0.4])


def test_zero_mask():
    m = apply_mask(SEG, explicit_mask(4, [1, 2], MaskMethod.ZERO))
    np.testing.assert_array_equal(m.input, [0.1, 0.0, 0.0, 0.4])


def test_eeg_mask_copies_preceding_run():
    m = apply_mask(SEG, explicit_mask(4, [2, 3], MaskMethod.EEG))
    np.testing.assert_array_equal(m.input, [0.1, 0.2, 0.1, 0.2])


def test_eeg_mask_falls_back_to_following_run():
    m = apply_mask(SEG, build_mask(4, 2, "beginning", MaskMethod.EEG))
    np.testing.assert_array_equal(m.input, [0.3, 0.4, 0.3, 0.4])


def test_eeg_mask_insufficient_context():
    with pytest.raises(InsufficientContextError):
        apply_mask(Segment(np.arange(10.0)), build_mask(10, 6, "middle", MaskMethod.EEG))


def test_random_mask_deterministic_and_in_range():
    seg = Segment(np.sin(np.linspace(0, 6, 100)))
    spec = build_mask(100, 20, "middle", MaskMethod.RANDOM)
    a, b = apply_mask(seg, spec, rng_seed=5), apply_mask(seg, spec, rng_seed=5)
    np.testing.assert_array_equal(a.input, b.input)
    vals = a.input[list(spec.missing_indices)]
    assert vals.min() >= seg.samples.min() and vals.max() <= seg.samples.max()
    assert not np.array_equal(a.input, apply_mask(seg, spec, rng_seed=6).input)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 40, elements=st.floats(-1, 1)), st.integers(1, 20),
       st.sampled_from(list(Position)[:3]), st.sampled_from(list(MaskMethod)),
       st.integers(0, 2**31))
def test_unmasked_indices_untouched(samples, count, pos, method, seed):
    seg = Segment(samples)
    spec = build_mask(40, count, pos, method)
    try:
        m = apply_mask(seg, spec, seed)
    except InsufficientContextError:
        return
    keep = ~spec.boolean()
    np.testing.assert_array_equal(m.input[keep], samples[keep])
    if method is MaskMethod.ZERO:
        assert np.all(m.input[~keep] == 0.0)


def test_segment_is_immutable():
    with pytest.raises(ValueError):
        SEG.samples[0] = 5.0
