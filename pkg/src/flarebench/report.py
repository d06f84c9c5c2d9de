"""Analysis reports: building them from a video, persisting them, comparing two."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

from . import __version__
from .core import BoundingBox, Detection, VideoSequence
from .errors import ConfigError
from .signal_analysis import (METRIC_LABELS, NO_PEAK, DetectionLossCurve, SignalMetrics,
                              SpectrumPeak, compute_metrics, detection_loss, extract_signal,
                              histogram_l1, spectrum, tonal_histogram, write_curve_csv,
                              write_signal_csv, write_spectrum_csv)

REPORT_NAME = "report.json"


@dataclass
class AnalysisReport:
    metrics: SignalMetrics
    dominant_peak: Optional[SpectrumPeak]
    loss_curve: DetectionLossCurve
    histogram_shift_l1: float
    provenance: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics.to_dict(),
            "dominant_peak": self.dominant_peak.to_dict() if self.dominant_peak else NO_PEAK,
            "loss_curve": self.loss_curve.to_dict(),
            "histogram_shift_l1": self.histogram_shift_l1,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        try:
            peak = d["dominant_peak"]
            return cls(
                SignalMetrics.from_dict(d["metrics"]),
                None if peak == NO_PEAK else SpectrumPeak(float(peak["frequency_hz"]),
                                                          float(peak["magnitude"]),
                                                          float(peak["resolution_hz"])),
                DetectionLossCurve.from_dict(d["loss_curve"]),
                float(d["histogram_shift_l1"]),
                dict(d["provenance"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("report", f"malformed report: {exc!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AnalysisReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError("report", f"not JSON: {exc}") from None


def analyze_sequence(seq: VideoSequence, detect: Callable, provenance: dict,
                     target_class: str = "car", roi: Optional[BoundingBox] = None,
                     out_dir: Union[str, Path, None] = None) -> AnalysisReport:
    """Run ``detect`` on every frame and derive the full report.

    The tonal shift compares the target region in the most and least confident
    frames.
    """
    detections: List[Sequence[Detection]] = [detect(f) for f in seq]
    signal = extract_signal(detections, seq.fps, target_class, roi)
    spec = spectrum(signal)
    curve = detection_loss(signal)
    shift = 0.0
    hit = [i for i, b in enumerate(signal.boxes) if b is not None]
    hi = max(hit, key=lambda i: signal.values[i])
    lo = min(hit, key=lambda i: signal.values[i])
    w, h = seq.resolution
    box_hi, box_lo = signal.boxes[hi], signal.boxes[lo]
    if box_hi.inside_frame(w, h) and box_lo.inside_frame(w, h):
        shift = histogram_l1(tonal_histogram(seq[hi], box_hi), tonal_histogram(seq[lo], box_lo))
    report = AnalysisReport(compute_metrics(signal), spec.dominant, curve, shift,
                            {"tool_version": __version__, **provenance})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT_NAME).write_text(report.to_json())
        write_signal_csv(out / "signal.csv", signal)
        write_spectrum_csv(out / "spectrum.csv", spec)
        write_curve_csv(out / "loss_curve.csv", curve)
    return report


# -- comparison --------------------------------------------------------------------

def improvement_pct(baseline: float, candidate: float) -> float:
    """Relative change of ``candidate`` over ``baseline`` in percent."""
    if baseline == 0:
        return float("inf") if candidate > 0 else 0.0
    return (candidate - baseline) / baseline * 100.0


def compare_reports(baseline: AnalysisReport, candidate: AnalysisReport) -> dict:
    a, b = baseline.metrics.to_dict(), candidate.metrics.to_dict()
    if set(a) != set(b):
        raise ConfigError("metrics", f"schema mismatch: {sorted(set(a) ^ set(b))}")
    rows = []
    for key, label in METRIC_LABELS.items():
        rows.append({
            "metric": key,
            "label": label,
            "baseline": a[key],
            "candidate": b[key],
            "delta": b[key] - a[key],
            "improvement_pct": round(improvement_pct(a[key], b[key]), 2),
        })
    return {"baseline": baseline.provenance, "candidate": candidate.provenance, "rows": rows}


def format_comparison(table: dict) -> str:
    lines = [f"{'Metric':<20}{'Baseline':>10}{'Candidate':>11}{'Delta':>9}{'Change %':>10}"]
    for r in table["rows"]:
        lines.append(f"{r['label']:<20}{r['baseline']:>10.2f}{r['candidate']:>11.2f}"
                     f"{r['delta']:>+9.2f}{r['improvement_pct']:>+10.2f}")
    return "\n".join(lines)
