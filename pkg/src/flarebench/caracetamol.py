"""Dual-path detection pipeline with per-stage latency instrumentation.

Per frame: the denoised frame goes to the tuned detector, the original frame
goes to the raw (original ADAS) detector, and the combiner merges both lists
while keeping every raw detection.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Detection, Frame, iou
from .detectors import DetectorBackend
from .errors import ConfigError, EmptyInput, StageError

Clock = Callable[[], float]  # seconds, monotonic


# -- denoisers ---------------------------------------------------------------------

@dataclass(frozen=True)
class ChromaClampConfig:
    excess_threshold: float = 80.0
    luma_floor: float = 180.0


def chroma_clamp_denoise(frame: Frame, cfg: ChromaClampConfig = ChromaClampConfig()) -> Frame:
    """Pull bright, strongly coloured pixels toward gray.

    A pixel is touched when its brightest channel is at least ``luma_floor``
    and its max-min channel spread is at least ``excess_threshold``; each
    channel then moves toward the pixel mean by ``min(1, spread / 255)``.
    """
    arr = frame.array.astype(np.float64)
    hi = arr.max(axis=2)
    spread = hi - arr.min(axis=2)
    mask = (hi >= cfg.luma_floor) & (spread >= cfg.excess_threshold)
    if not mask.any():
        return frame
    factor = np.minimum(1.0, spread / 255.0)[..., None]
    mean = arr.mean(axis=2, keepdims=True)
    pulled = arr + (mean - arr) * factor
    out = np.where(mask[..., None], pulled, arr)
    return frame.with_pixels(np.clip(np.rint(out), 0, 255).astype(np.uint8))


class DenoiserKind(str, Enum):
    IDENTITY = "identity"
    CHROMA_CLAMP = "chroma_clamp"
    EXTERNAL = "external"


Denoiser = Callable[[Frame], Frame]


def identity_denoise(frame: Frame) -> Frame:
    return frame


# -- combiner ----------------------------------------------------------------------

def match_detections(raw: Sequence[Detection], tuned: Sequence[Detection],
                     iou_threshold: float = 0.5, class_match: bool = True
                     ) -> List[Tuple[int, int, float]]:
    """Greedy one-to-one (raw_idx, tuned_idx, iou) pairs, highest IoU first."""
    candidates = []
    for i, r in enumerate(raw):
        for j, t in enumerate(tuned):
            if class_match and r.class_label != t.class_label:
                continue
            overlap = iou(r.box, t.box)
            if overlap >= iou_threshold:
                candidates.append((-overlap, i, j))
    candidates.sort()
    used_raw, used_tuned, pairs = set(), set(), []
    for neg, i, j in candidates:
        if i in used_raw or j in used_tuned:
            continue
        used_raw.add(i)
        used_tuned.add(j)
        pairs.append((i, j, -neg))
    return pairs


def combine(raw: Sequence[Detection], tuned: Sequence[Detection], iou_threshold: float = 0.5,
            class_match: bool = True) -> List[Detection]:
    """Merge the two paths; every raw detection survives, matched or not.

    A matched pair becomes one detection with the pair's max confidence and the
    box of the more confident member (the raw box on ties). Output order is the
    raw order followed by unmatched tuned detections in their original order.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ConfigError("iou_threshold", f"must lie in (0, 1], got {iou_threshold}")
    partner = {i: j for i, j, _ in match_detections(raw, tuned, iou_threshold, class_match)}
    out = []
    for i, r in enumerate(raw):
        j = partner.get(i)
        if j is None:
            out.append(r)
            continue
        t = tuned[j]
        best = t if t.confidence > r.confidence else r
        out.append(Detection(best.box, best.class_label, max(r.confidence, t.confidence)))
    matched_tuned = set(partner.values())
    out.extend(t for j, t in enumerate(tuned) if j not in matched_tuned)
    return out


# -- pipeline ----------------------------------------------------------------------

@dataclass(frozen=True)
class StageTimings:
    denoise_ms: float = 0.0
    tuned_detect_ms: float = 0.0
    raw_detect_ms: float = 0.0
    combine_ms: float = 0.0
    total_ms: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


STAGES = ("denoise_ms", "tuned_detect_ms", "raw_detect_ms", "combine_ms", "total_ms")


@dataclass
class PipelineConfig:
    """Either detector may be None: no tuned path is the plain original detector,
    no raw path is a detector behind a denoiser preprocessor."""

    raw_detector: Optional[DetectorBackend]
    tuned_detector: Optional[DetectorBackend]
    denoiser: Denoiser = identity_denoise
    combiner_iou_threshold: float = 0.5
    class_match: bool = True
    concurrent: bool = True
    name: str = "caracetamol"

    def __post_init__(self):
        if not 0.0 < self.combiner_iou_threshold <= 1.0:
            raise ConfigError("combiner.iou_threshold",
                              f"must lie in (0, 1], got {self.combiner_iou_threshold}")
        if self.raw_detector is None and self.tuned_detector is None:
            raise ConfigError("detectors", "at least one of raw_detector/tuned_detector is required")


def _timed(stage: str, fn, clock: Clock, *args):
    start = clock()
    try:
        result = fn(*args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    return result, (clock() - start) * 1000.0


class Pipeline:
    """Runs a PipelineConfig frame by frame; owns the thread used for the raw path."""

    def __init__(self, cfg: PipelineConfig, clock: Clock = time.perf_counter):
        self.cfg = cfg
        self.clock = clock
        both = cfg.raw_detector is not None and cfg.tuned_detector is not None
        self._pool = ThreadPoolExecutor(max_workers=1) if (cfg.concurrent and both) else None

    def _tuned_path(self, frame: Frame):
        if self.cfg.tuned_detector is None:
            return [], 0.0, 0.0
        denoised, d_ms = _timed("denoise", self.cfg.denoiser, self.clock, frame)
        dets, t_ms = _timed("tuned_detect", self.cfg.tuned_detector.detect, self.clock, denoised)
        return dets, d_ms, t_ms

    def _raw_path(self, frame: Frame):
        if self.cfg.raw_detector is None:
            return [], 0.0
        return _timed("raw_detect", self.cfg.raw_detector.detect, self.clock, frame)

    def run(self, frame: Frame) -> Tuple[List[Detection], StageTimings]:
        start = self.clock()
        if self._pool is not None:
            raw_future = self._pool.submit(self._raw_path, frame)
            try:
                tuned, d_ms, t_ms = self._tuned_path(frame)
            finally:
                raw, r_ms = raw_future.result()
        else:
            raw, r_ms = self._raw_path(frame)
            tuned, d_ms, t_ms = self._tuned_path(frame)
        merged, c_ms = _timed("combine", combine, self.clock, raw, tuned,
                              self.cfg.combiner_iou_threshold, self.cfg.class_match)
        total = (self.clock() - start) * 1000.0
        return merged, StageTimings(d_ms, t_ms, r_ms, c_ms, total)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_pipeline(frame: Frame, cfg: PipelineConfig, clock: Clock = time.perf_counter
                 ) -> Tuple[List[Detection], StageTimings]:
    with Pipeline(cfg, clock) as p:
        return p.run(frame)


# -- benchmarking ------------------------------------------------------------------

@dataclass(frozen=True)
class StageStats:
    mean: float
    p50: float
    p95: float


@dataclass(frozen=True)
class LatencyReport:
    name: str
    samples: int
    stages: Dict[str, StageStats]
    fps: float
    baseline_name: Optional[str] = None
    baseline_total_ms: Optional[float] = None
    overhead_pct: Optional[float] = None

    @property
    def mean_total_ms(self) -> float:
        return self.stages["total_ms"].mean

    @property
    def fps_floor(self) -> int:
        """Whole frames per second, as latency tables usually print them."""
        return int(math.floor(self.fps + 1e-9))

    def table_row(self) -> str:
        """Compact ``"26 ms (+23.8%) / 38 FPS"`` style summary."""
        total = f"{self.mean_total_ms:.0f} ms"
        if self.overhead_pct is not None:
            total += f" ({self.overhead_pct:+.1f}%)"
        return f"{total} / {self.fps_floor} FPS"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "samples": self.samples,
            "stages": {k: asdict(v) for k, v in self.stages.items()},
            "fps": self.fps,
            "fps_floor": self.fps_floor,
            "baseline": self.baseline_name,
            "baseline_total_ms": self.baseline_total_ms,
            "overhead_pct": self.overhead_pct,
        }


def overhead_pct(total_ms: float, baseline_ms: float) -> float:
    if baseline_ms <= 0:
        raise ConfigError("baseline_total_ms", f"must be > 0, got {baseline_ms}")
    return (total_ms - baseline_ms) / baseline_ms * 100.0


def latency_report(timings: Sequence[StageTimings], name: str = "pipeline",
                   baseline: Optional["LatencyReport"] = None,
                   baseline_total_ms: Optional[float] = None) -> LatencyReport:
    """Summarise per-frame timings; overhead is relative to ``baseline`` (a report)
    or to an explicit ``baseline_total_ms``."""
    if not timings:
        raise EmptyInput("no timing samples")
    stages = {}
    for stage in STAGES:
        vals = np.array([getattr(t, stage) for t in timings], dtype=float)
        stages[stage] = StageStats(float(vals.mean()), float(np.percentile(vals, 50)),
                                   float(np.percentile(vals, 95)))
    mean_total = stages["total_ms"].mean
    fps = 1000.0 / mean_total if mean_total > 0 else math.inf
    base_name = None
    if baseline is not None:
        baseline_total_ms, base_name = baseline.mean_total_ms, baseline.name
    over = overhead_pct(mean_total, baseline_total_ms) if baseline_total_ms is not None else None
    return LatencyReport(name, len(timings), stages, fps, base_name, baseline_total_ms, over)


def benchmark(pipeline: PipelineConfig, frames: Sequence[Frame], repetitions: int = 1,
              baseline: Optional[PipelineConfig] = None, clock: Clock = time.perf_counter
              ) -> LatencyReport:
    """Run every frame ``repetitions`` times and report per-stage latency.

    When ``baseline`` is given it is benchmarked on the same frames and the
    overhead is reported against it; passing the same config yields 0 %.
    """
    if not frames:
        raise EmptyInput("benchmark needs at least one frame")
    if repetitions < 1:
        raise ConfigError("repetitions", f"must be >= 1, got {repetitions}")

    def collect(cfg: PipelineConfig) -> List[StageTimings]:
        out = []
        with Pipeline(cfg, clock) as p:
            for _ in range(repetitions):
                for f in frames:
                    out.append(p.run(f)[1])
        return out

    timings = collect(pipeline)
    base_report = None
    if baseline is not None:
        base_timings = timings if baseline is pipeline else collect(baseline)
        base_report = latency_report(base_timings, baseline.name)
    return latency_report(timings, pipeline.name, baseline=base_report)
