import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flarebench.core import BoundingBox, ConfidenceSignal, Frame
from flarebench.errors import EmptySignal, InsufficientSamples, InvalidRegion, NoTarget
from flarebench.flasher_sim import (BLUE, CameraModel, FlasherMode, FlasherPattern, SceneConfig,
                                    render_frame)
from flarebench.signal_analysis import (METRIC_LABELS, REPORT_THRESHOLDS, THRESHOLD_GRID,
                                        compute_metrics, detection_loss, extract_signal,
                                        histogram_l1, iou_track, spectrum, tonal_histogram)

from conftest import det


def sig(values, fps=24.0):
    return ConfidenceSignal(tuple(values), fps)


# -- oracles ---------------------------------------------------------------------

def naive_dft_magnitudes(x):
    n = len(x)
    return [abs(sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n)))
            for k in range(n // 2 + 1)]


def brute_metrics(values):
    n = len(values)
    total = 0.0
    for v in values:
        total += v
    lo = hi = values[0]
    for v in values:
        lo, hi = min(lo, v), max(hi, v)
    above = {}
    for tau in REPORT_THRESHOLDS:
        above[tau] = sum(1 for v in values if v >= tau) / n
    return total / n, lo, hi, hi - lo, above


# -- extraction ------------------------------------------------------------------

def test_extract_single_detection_verbatim():
    confs = [0.9, 0.2, 0.55, 0.7]
    s = extract_signal([[det(0, 0, 10, 10, c)] for c in confs], 24)
    assert s.values == tuple(confs)


def test_extract_gap_zero_fill():
    frames = [[det(0, 0, 10, 10, 0.8)], [det(0, 0, 10, 10, 0.7)], [],
              [det(0, 0, 10, 10, 0.6)], [det(0, 0, 10, 10, 0.5)]]
    s = extract_signal(frames, 24)
    assert s.values == (0.8, 0.7, 0.0, 0.6, 0.5)
    assert s.boxes[2] is None


def test_extract_roi_follows_target_over_brighter_neighbour():
    a = [0.6, 0.5, 0.4, 0.55, 0.3]
    b = [0.95, 0.96, 0.97, 0.98, 0.99]
    frames = []
    for i in range(5):
        # car A drifts right one pixel per frame; car B sits far to the right
        frames.append([det(100, 0, 140, 30, b[i]), det(i, 0, 40 + i, 30, a[i])])
    s = extract_signal(frames, 24, roi=BoundingBox(0, 0, 40, 30))
    assert s.values == tuple(a)
    s_default = extract_signal(frames, 24)
    assert s_default.values == tuple(b)


def test_extract_falls_back_when_target_jumps():
    frames = [[det(0, 0, 10, 10, 0.9)], [det(50, 50, 60, 60, 0.4), det(80, 80, 90, 90, 0.7)]]
    assert extract_signal(frames, 24).values == (0.9, 0.7)


def test_extract_ignores_other_classes_and_raises_no_target():
    frames = [[det(0, 0, 10, 10, 0.9, "truck")]] * 3
    with pytest.raises(NoTarget):
        extract_signal(frames, 24)
    frames = [[det(0, 0, 10, 10, 0.9, "truck"), det(0, 0, 10, 10, 0.4)]]
    assert extract_signal(frames, 24).values == (0.4,)


def test_extract_leading_gap():
    frames = [[], [det(0, 0, 10, 10, 0.5)]]
    assert extract_signal(frames, 24).values == (0.0, 0.5)


# -- metrics ---------------------------------------------------------------------

def test_metrics_hand_example():
    m = compute_metrics(sig([0.9, 0.3, 0.8, 0.4, 0.6]))
    assert m.average == pytest.approx(0.6, abs=1e-12)
    assert (m.minimum, m.maximum) == (0.3, 0.9)
    assert m.range == pytest.approx(0.6, abs=1e-12)
    assert m.fraction_above[0.5] == 0.6


def test_metrics_constant():
    m = compute_metrics(sig([0.7] * 10))
    assert m.range == 0.0
    assert m.fraction_above[0.5] == m.fraction_above[0.6] == m.fraction_above[0.7] == 1.0
    assert m.fraction_above[0.8] == 0.0


def test_metric_keys_and_labels():
    d = compute_metrics(sig([0.5])).to_dict()
    assert list(d) == ["average", "minimum", "maximum", "range",
                       "above_0.5", "above_0.6", "above_0.7", "above_0.8"]
    assert list(METRIC_LABELS.values()) == [
        "Average Confidence", "Absolute Range", "Above 0.5", "Above 0.6", "Above 0.7",
        "Above 0.8", "Minimum Value", "Maximum Value"]
    assert set(METRIC_LABELS) == set(d)


def test_metrics_empty():
    with pytest.raises(EmptySignal):
        compute_metrics(sig([]))


signals = st.lists(st.floats(0, 1), min_size=1, max_size=60)


@given(signals)
def test_metrics_match_brute_force(values):
    m = compute_metrics(sig(values))
    avg, lo, hi, rng, above = brute_metrics(values)
    assert m.average == pytest.approx(avg, abs=1e-9)
    assert (m.minimum, m.maximum) == (lo, hi)
    assert m.range == pytest.approx(rng, abs=1e-9)
    assert m.fraction_above == above
    fa = [m.fraction_above[t] for t in REPORT_THRESHOLDS]
    assert all(b <= a for a, b in zip(fa, fa[1:]))


# -- detection loss ---------------------------------------------------------------

def test_loss_step_function():
    c = detection_loss(sig([0.9] * 8))
    for t, v in zip(c.thresholds, c.fraction_detected):
        assert v == (1.0 if t <= 0.9 else 0.0)


def test_loss_direct_count():
    c = detection_loss(sig([0.2, 0.6, 1.0]))
    assert c.at(0.5) == pytest.approx(2 / 3)
    assert c.at(0.0) == 1.0
    assert c.at(1.0) == pytest.approx(1 / 3)


def test_loss_grid():
    assert len(THRESHOLD_GRID) == 101
    assert THRESHOLD_GRID[0] == 0.0 and THRESHOLD_GRID[-1] == 1.0


def test_loss_reads_like_detected_in_90_percent_at_09():
    # 90 % of frames at or above 0.9 means the curve reads 0.9 at threshold 0.9
    c = detection_loss(sig([0.95] * 9 + [0.3]))
    assert c.at(0.9) == pytest.approx(0.9)


@given(signals)
def test_loss_monotone_and_consistent(values):
    s = sig(values)
    c = detection_loss(s)
    assert all(b <= a for a, b in zip(c.fraction_detected, c.fraction_detected[1:]))
    assert c.fraction_detected[0] == 1.0
    m = compute_metrics(s)
    for tau in REPORT_THRESHOLDS:
        assert c.at(tau) == m.fraction_above[tau]


def test_loss_empty():
    with pytest.raises(EmptySignal):
        detection_loss(sig([]))


# -- spectrum --------------------------------------------------------------------

def test_spectrum_constant_is_no_peak():
    sp = spectrum(sig([0.73] * 64))
    assert sp.dominant is None
    assert np.all(sp.magnitudes[1:] < 1e-9)


def test_spectrum_too_short():
    with pytest.raises(InsufficientSamples):
        spectrum(sig([0.5] * 15))


def square_wave(freq, fps, n, lo=0.2, hi=0.9):
    t = np.arange(n) / fps
    return np.where(np.mod(t * freq, 1.0) < 0.5, hi, lo)


def test_spectrum_square_wave_against_naive_dft():
    fps, n = 24.0, 720
    x = square_wave(1.3, fps, n)
    sp = spectrum(sig(x, fps))
    windowed = (x - x.mean()) * np.hanning(n)
    oracle = naive_dft_magnitudes(list(windowed))
    np.testing.assert_allclose(sp.magnitudes, oracle, atol=1e-8)
    k = max((k for k in range(len(oracle)) if k * fps / n >= 0.2), key=lambda k: oracle[k])
    assert sp.dominant.frequency_hz == pytest.approx(k * fps / n)
    assert abs(sp.dominant.frequency_hz - 1.3) <= fps / n
    assert sp.dominant.resolution_hz == pytest.approx(fps / n)


def test_spectrum_ignores_drift_below_floor():
    fps, n = 24.0, 480
    t = np.arange(n) / fps
    x = 0.5 + 0.3 * np.sin(2 * np.pi * 0.1 * t) + 0.05 * np.sin(2 * np.pi * 2.0 * t)
    sp = spectrum(sig(np.clip(x, 0, 1), fps))
    assert sp.dominant.frequency_hz == pytest.approx(2.0, abs=fps / n)


@settings(max_examples=25)
@given(st.floats(0.3, 5.0), st.sampled_from([24.0, 30.0, 36.0]))
def test_spectrum_peak_frequency_never_exceeds_nyquist(freq, fps):
    sp = spectrum(sig(square_wave(freq, fps, 256), fps))
    assert sp.dominant is not None
    assert 0 <= sp.dominant.frequency_hz <= fps / 2


# -- tonal -----------------------------------------------------------------------

def test_uniform_region_is_delta():
    h = tonal_histogram(Frame.filled(10, 10, (10, 20, 30)), BoundingBox(2, 2, 8, 8))
    assert h.shape == (3, 256)
    np.testing.assert_allclose(h.sum(axis=1), 1.0)
    assert [int(np.flatnonzero(h[c])[0]) for c in range(3)] == [10, 20, 30]
    assert all(np.count_nonzero(h[c]) == 1 for c in range(3))


def test_identical_regions_zero_distance():
    rng = np.random.default_rng(0)
    f = Frame.from_array(rng.integers(0, 256, (20, 20, 3), dtype=np.uint8))
    h = tonal_histogram(f, BoundingBox(0, 0, 20, 20))
    assert histogram_l1(h, h) == 0.0


def test_disjoint_histograms_distance_two():
    a = tonal_histogram(Frame.filled(4, 4, (0, 0, 0)), BoundingBox(0, 0, 4, 4))
    b = tonal_histogram(Frame.filled(4, 4, (255, 255, 255)), BoundingBox(0, 0, 4, 4))
    assert histogram_l1(a, b) == 2.0


def test_blue_flare_shifts_blue_histogram():
    scene = SceneConfig()
    cam = CameraModel(24, 0.5)
    off = FlasherPattern(mode=FlasherMode.STEADY_OFF)
    on = FlasherPattern(1.3, 0.5, FlasherMode.SINGLE_COLOR, (BLUE,), 1.0)
    box = scene.effective_car_box()
    f_off = Frame.from_array(render_frame(scene, off, cam, 0)[0])
    f_on = Frame.from_array(render_frame(scene, on, cam, 0)[0])
    h_off, h_on = tonal_histogram(f_off, box), tonal_histogram(f_on, box)
    bins = np.arange(256)
    assert (h_on[2] * bins).sum() > (h_off[2] * bins).sum() + 50
    assert histogram_l1(h_on, h_off, channel=2) > 0
    assert histogram_l1(h_on, h_off) > 0


def test_tonal_invalid_region():
    f = Frame.filled(10, 10, (0, 0, 0))
    with pytest.raises(InvalidRegion):
        tonal_histogram(f, BoundingBox(5, 5, 15, 8))


# -- tracker ---------------------------------------------------------------------

def test_single_persistent_track():
    frames = [[det(i, 0, 20 + i, 20, c)] for i, c in enumerate([0.9, 0.1, 0.8, 0.05])]
    tracks = iou_track(frames)
    assert len(tracks) == 1
    assert tracks[0].confidences == {0: 0.9, 1: 0.1, 2: 0.8, 3: 0.05}


def test_track_holes_not_filled():
    frames = [[det(0, 0, 20, 20, 0.9)], [], [det(0, 0, 20, 20, 0.7)]]
    tracks = iou_track(frames)
    assert len(tracks) == 1
    assert tracks[0].confidence_series(3) == [0.9, 0.0, 0.7]


def test_crossing_objects_keep_identity():
    # A moves right, B moves left; they pass each other vertically offset so
    # IoU between them stays below 0.3 while each chain stays above it
    a = [det(0 + 6 * i, 0, 20 + 6 * i, 20, 0.9 - 0.1 * i) for i in range(4)]
    b = [det(24 - 6 * i, 14, 44 - 6 * i, 34, 0.3 + 0.1 * i) for i in range(4)]
    from flarebench.core import iou
    for i in range(4):
        assert iou(a[i].box, b[i].box) < 0.3
    for i in range(3):
        assert iou(a[i].box, a[i + 1].box) > 0.3 and iou(b[i].box, b[i + 1].box) > 0.3
    tracks = iou_track([[a[i], b[i]] for i in range(4)])
    assert len(tracks) == 2
    ta = next(t for t in tracks if t.detections[0] == a[0])
    tb = next(t for t in tracks if t.detections[0] == b[0])
    assert [ta.detections[i] for i in range(4)] == a
    assert [tb.detections[i] for i in range(4)] == b


def test_tracker_respects_class():
    frames = [[det(0, 0, 20, 20, 0.9)], [det(0, 0, 20, 20, 0.9, "truck")]]
    assert len(iou_track(frames)) == 2
