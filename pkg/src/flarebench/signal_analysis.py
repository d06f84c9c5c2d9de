"""Analyses of per-frame detector confidence: extraction, summary metrics,
spectrum, detection-loss curve, tonal histograms and a pass-through tracker.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BoundingBox, ConfidenceSignal, Detection, Frame, GapPolicy, frame_timestamp_ms, iou
from .errors import EmptySignal, InsufficientSamples, InvalidRegion, NoTarget

REPORT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8)
MIN_SPECTRUM_SAMPLES = 16
PEAK_FLOOR_HZ = 0.2
# magnitudes at or below this are numerical noise of a constant signal
NO_PEAK_EPS = 1e-9
FALLBACK_IOU = 0.1

# row labels used by published confidence-metric tables, keyed by report field
METRIC_LABELS = {
    "average": "Average Confidence",
    "range": "Absolute Range",
    "above_0.5": "Above 0.5",
    "above_0.6": "Above 0.6",
    "above_0.7": "Above 0.7",
    "above_0.8": "Above 0.8",
    "minimum": "Minimum Value",
    "maximum": "Maximum Value",
}


# -- extraction --------------------------------------------------------------------

def extract_signal(detections_per_frame: Sequence[Sequence[Detection]], fps: float,
                   target_class: str = "car", roi: Optional[BoundingBox] = None) -> ConfidenceSignal:
    """Follow one target through the frames and record its confidence.

    The target is seeded by ``roi`` or by the most confident target-class
    detection of the first frame that has one. Each frame picks the candidate
    overlapping the previous pick most; below IoU 0.1 it falls back to the most
    confident candidate. Frames without candidates record 0.0 and keep the
    previous box.
    """
    if not detections_per_frame:
        raise EmptySignal("no frames given")
    per_frame = [[d for d in dets if d.class_label == target_class] for dets in detections_per_frame]
    if not any(per_frame):
        raise NoTarget(f"no {target_class!r} detection in any of {len(per_frame)} frames")

    prev = roi
    values: List[float] = []
    boxes: List[Optional[BoundingBox]] = []
    for cands in per_frame:
        if not cands:
            values.append(0.0)
            boxes.append(None)
            continue
        most_confident = max(cands, key=lambda d: d.confidence)
        if prev is None:
            pick = most_confident
        else:
            pick = max(cands, key=lambda d: iou(d.box, prev))
            if iou(pick.box, prev) < FALLBACK_IOU:
                pick = most_confident
        values.append(pick.confidence)
        boxes.append(pick.box)
        prev = pick.box
    return ConfidenceSignal(tuple(values), fps, target_class, GapPolicy.ZERO_FILL, tuple(boxes))


# -- metrics -----------------------------------------------------------------------

@dataclass(frozen=True)
class SignalMetrics:
    average: float
    minimum: float
    maximum: float
    range: float
    fraction_above: Dict[float, float]

    def to_dict(self) -> dict:
        d = {"average": self.average, "minimum": self.minimum, "maximum": self.maximum,
             "range": self.range}
        for tau in REPORT_THRESHOLDS:
            d[f"above_{tau}"] = self.fraction_above[tau]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SignalMetrics":
        return cls(float(d["average"]), float(d["minimum"]), float(d["maximum"]),
                   float(d["range"]), {tau: float(d[f"above_{tau}"]) for tau in REPORT_THRESHOLDS})


def compute_metrics(s: ConfidenceSignal) -> SignalMetrics:
    """Average, extremes, range and the share of frames at or above each report threshold."""
    if len(s) == 0:
        raise EmptySignal("cannot summarise an empty signal")
    x = s.as_array()
    lo, hi = float(x.min()), float(x.max())
    above = {tau: float(np.count_nonzero(x >= tau)) / x.size for tau in REPORT_THRESHOLDS}
    return SignalMetrics(float(x.mean()), lo, hi, hi - lo, above)


# -- spectrum ----------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumPeak:
    frequency_hz: float
    magnitude: float
    resolution_hz: float

    def to_dict(self) -> dict:
        return {"frequency_hz": self.frequency_hz, "magnitude": self.magnitude,
                "resolution_hz": self.resolution_hz}


NO_PEAK = "NoPeak"


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    frequencies: np.ndarray
    dominant: Optional[SpectrumPeak]  # None means NoPeak


def spectrum(s: ConfidenceSignal, floor_hz: float = PEAK_FLOOR_HZ) -> Spectrum:
    """Hann-windowed magnitude spectrum of the mean-removed signal."""
    n = len(s)
    if n < MIN_SPECTRUM_SAMPLES:
        raise InsufficientSamples(f"spectrum needs >= {MIN_SPECTRUM_SAMPLES} samples, got {n}")
    x = s.as_array()
    x = (x - x.mean()) * np.hanning(n)
    mags = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(n, d=1.0 / s.fps)
    band = np.flatnonzero(freqs >= floor_hz)
    dominant = None
    if band.size:
        k = band[np.argmax(mags[band])]
        if mags[k] > NO_PEAK_EPS:
            dominant = SpectrumPeak(float(freqs[k]), float(mags[k]), s.fps / n)
    return Spectrum(mags, freqs, dominant)


# -- detection loss ----------------------------------------------------------------

THRESHOLD_GRID = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass(frozen=True)
class DetectionLossCurve:
    thresholds: Tuple[float, ...]
    fraction_detected: Tuple[float, ...]

    def at(self, tau: float) -> float:
        return self.fraction_detected[self.thresholds.index(round(tau, 2))]

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds), "fraction_detected": list(self.fraction_detected)}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionLossCurve":
        return cls(tuple(float(t) for t in d["thresholds"]),
                   tuple(float(v) for v in d["fraction_detected"]))


def detection_loss(s: ConfidenceSignal) -> DetectionLossCurve:
    if len(s) == 0:
        raise EmptySignal("cannot build a loss curve from an empty signal")
    x = np.sort(s.as_array())
    grid = np.array(THRESHOLD_GRID)
    # count of values >= tau, via the first index not below tau
    counts = x.size - np.searchsorted(x, grid, side="left")
    return DetectionLossCurve(THRESHOLD_GRID, tuple(float(c) / x.size for c in counts))


# -- tonal analysis ----------------------------------------------------------------

def tonal_histogram(frame: Frame, box: BoundingBox) -> np.ndarray:
    """(3, 256) per-channel histograms of the box region, each summing to 1."""
    if not box.inside_frame(frame.width, frame.height):
        raise InvalidRegion(f"box {box.as_tuple()} is not inside the {frame.width}x{frame.height} frame")
    rows, cols = box.pixel_slice(frame.width, frame.height)
    region = frame.array[rows, cols].reshape(-1, 3)
    if region.shape[0] == 0:
        raise InvalidRegion(f"box {box.as_tuple()} covers no pixels")
    hist = np.stack([np.bincount(region[:, c], minlength=256) for c in range(3)]).astype(float)
    return hist / region.shape[0]


def histogram_l1(h1: np.ndarray, h2: np.ndarray, channel: Optional[int] = None) -> float:
    """L1 distance between normalized histograms, averaged over channels unless one is given."""
    a, b = np.asarray(h1, dtype=float), np.asarray(h2, dtype=float)
    if channel is not None:
        return float(np.abs(a[channel] - b[channel]).sum())
    return float(np.abs(a - b).sum(axis=-1).mean())


# -- tracking ----------------------------------------------------------------------

@dataclass
class Track:
    track_id: int
    class_label: str
    detections: Dict[int, Detection] = field(default_factory=dict)

    @property
    def last_box(self) -> BoundingBox:
        return self.detections[max(self.detections)].box

    @property
    def last_frame(self) -> int:
        return max(self.detections)

    @property
    def confidences(self) -> Dict[int, float]:
        return {i: d.confidence for i, d in sorted(self.detections.items())}

    def confidence_series(self, n_frames: int) -> List[float]:
        """Per-frame confidence with 0.0 where the track had no detection."""
        return [self.detections[i].confidence if i in self.detections else 0.0
                for i in range(n_frames)]


def iou_track(detections_per_frame: Sequence[Sequence[Detection]], match_threshold: float = 0.3,
              max_age: int = 3) -> List[Track]:
    """Greedy frame-to-frame IoU association. Confidences are passed through untouched;
    a frame where the detector missed leaves a hole in the track."""
    tracks: List[Track] = []
    for fi, dets in enumerate(detections_per_frame):
        live = [t for t in tracks if fi - t.last_frame <= max_age]
        pairs = []
        for ti, t in enumerate(live):
            for di, d in enumerate(dets):
                if d.class_label != t.class_label:
                    continue
                overlap = iou(t.last_box, d.box)
                if overlap >= match_threshold:
                    pairs.append((-overlap, ti, di))
        pairs.sort()
        used_t, used_d = set(), set()
        for _, ti, di in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            live[ti].detections[fi] = dets[di]
        for di, d in enumerate(dets):
            if di not in used_d:
                tracks.append(Track(len(tracks) + 1, d.class_label, {fi: d}))
    return tracks


# -- CSV export --------------------------------------------------------------------

def write_signal_csv(path, s: ConfidenceSignal) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "timestamp_ms", "confidence"])
        for i, v in enumerate(s.values):
            w.writerow([i, frame_timestamp_ms(i, s.fps), repr(v)])


def write_spectrum_csv(path, spec: Spectrum) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency_hz", "magnitude"])
        for f, m in zip(spec.frequencies, spec.magnitudes):
            w.writerow([repr(float(f)), repr(float(m))])


def write_curve_csv(path, curve: DetectionLossCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fraction"])
        for t, v in zip(curve.thresholds, curve.fraction_detected):
            w.writerow([t, repr(v)])


def read_signal_csv(path, fps: float, target_class: str = "car") -> ConfidenceSignal:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ConfidenceSignal(tuple(float(r["confidence"]) for r in rows), fps, target_class)
