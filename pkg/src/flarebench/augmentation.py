"""Day/night split and manual flasher augmentation of nighttime images."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import Frame, mean_brightness, read_ppm, write_ppm
from .errors import ConfigError, DegenerateInput, EmptyDataset, FlareBenchError
from .flasher_sim import BLUE, RED, glow_profile, screen_blend

log = logging.getLogger(__name__)

RGB = Tuple[int, int, int]

FOOTPRINT_RADII = 3.0  # glow is cut to zero beyond 3 radii
STREAK_STRETCH = 6.0
LOG_NAME = "augmentation_log.json"
IMAGE_SUFFIXES = (".ppm", ".pnm")


class DayNight(str, Enum):
    DAY = "Day"
    NIGHT = "Night"


@dataclass(frozen=True)
class AugmentationConfig:
    night_brightness_threshold: float = 60.0
    flare_colors: Tuple[RGB, ...] = (RED, BLUE)
    flare_radius_range: Tuple[int, int] = (6, 20)
    flare_peak_intensity: float = 1.0
    streak_enabled: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flare_colors", tuple(tuple(int(v) for v in c) for c in self.flare_colors))
        object.__setattr__(self, "flare_radius_range", tuple(self.flare_radius_range))
        if not 0 < self.night_brightness_threshold < 255:
            raise ConfigError("night_brightness_threshold",
                              f"must lie in (0, 255), got {self.night_brightness_threshold}")
        lo, hi = self.flare_radius_range
        if not 0 < lo <= hi:
            raise ConfigError("flare_radius_range", f"need 0 < min <= max, got {self.flare_radius_range}")
        if not 0 < self.flare_peak_intensity <= 1:
            raise ConfigError("flare_peak_intensity", f"must lie in (0, 1], got {self.flare_peak_intensity}")
        if not self.flare_colors:
            raise ConfigError("flare_colors", "at least one color is required")


@dataclass(frozen=True)
class FlarePlacement:
    center: Tuple[int, int]
    radius: int
    color: RGB
    seed_used: int
    streak: bool = False

    @property
    def footprint(self) -> Tuple[int, int, int, int]:
        """Half-open (x0, y0, x1, y1) box outside which no pixel is changed."""
        reach_y = FOOTPRINT_RADII * self.radius
        reach_x = reach_y * (STREAK_STRETCH if self.streak else 1.0)
        cx, cy = self.center
        return (int(math.floor(cx + 0.5 - reach_x)), int(math.floor(cy + 0.5 - reach_y)),
                int(math.ceil(cx + 0.5 + reach_x)), int(math.ceil(cy + 0.5 + reach_y)))

    def to_dict(self) -> dict:
        return {"cx": self.center[0], "cy": self.center[1], "radius": self.radius,
                "color": list(self.color), "seed": self.seed_used, "streak": self.streak,
                "footprint": list(self.footprint)}


def classify_day_night(frame: Frame, cfg: AugmentationConfig = AugmentationConfig()) -> DayNight:
    """Day only when mean brightness is strictly above the threshold."""
    return DayNight.DAY if mean_brightness(frame) > cfg.night_brightness_threshold else DayNight.NIGHT


def derive_seed(global_seed: int, key) -> int:
    """64-bit per-image seed from the global seed and an int or string key."""
    h = hashlib.sha256(f"{int(global_seed)}:{key}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def flare_layer(width: int, height: int, placement: FlarePlacement, peak: float) -> np.ndarray:
    """(h, w, 3) float flare colour layer, zero outside the footprint."""
    cx, cy = placement.center
    sigma = placement.radius / 2.0
    # pixel centers sit at +0.5, so the placement center pixel gets the peak
    glow = glow_profile(width, height, cx + 0.5, cy + 0.5, sigma, sigma)
    ys, xs = np.mgrid[0:height, 0:width]
    dist = np.hypot(xs - cx, ys - cy)
    glow[dist > FOOTPRINT_RADII * placement.radius] = 0.0
    if placement.streak:
        streak = glow_profile(width, height, cx + 0.5, cy + 0.5, STREAK_STRETCH * sigma, sigma)
        ellipse = np.hypot((xs - cx) / STREAK_STRETCH, ys - cy)
        streak[ellipse > FOOTPRINT_RADII * placement.radius] = 0.0
        glow = 1.0 - (1.0 - glow) * (1.0 - streak)
    return (peak * glow)[..., None] * np.asarray(placement.color, dtype=float)


def augment_flare(frame: Frame, cfg: AugmentationConfig = AugmentationConfig(),
                  key=None) -> Tuple[Frame, FlarePlacement]:
    """Screen-blend a coloured Gaussian glow at a random spot.

    Randomness comes from ``derive_seed(cfg.rng_seed, key)``; ``key`` defaults to
    the frame index, and dataset builds pass the file name.
    """
    lo, hi = cfg.flare_radius_range
    if frame.width < 2 * hi or frame.height < 2 * hi:
        raise DegenerateInput(
            f"{frame.width}x{frame.height} frame is smaller than twice the max flare radius {hi}")
    seed = derive_seed(cfg.rng_seed, frame.index if key is None else key)
    rng = np.random.default_rng(seed)
    color = cfg.flare_colors[int(rng.integers(len(cfg.flare_colors)))]
    radius = int(rng.integers(lo, hi + 1))
    cx = int(rng.integers(frame.width))
    cy = int(rng.integers(frame.height))
    placement = FlarePlacement((cx, cy), radius, color, seed, cfg.streak_enabled)
    return apply_placement(frame, placement, cfg.flare_peak_intensity), placement


def apply_placement(frame: Frame, placement: FlarePlacement, peak: float) -> Frame:
    base = frame.array.astype(float)
    blended = screen_blend(base, flare_layer(frame.width, frame.height, placement, peak))
    out = np.maximum(np.clip(np.rint(blended), 0, 255), base).astype(np.uint8)
    return frame.with_pixels(out)


# -- dataset build -----------------------------------------------------------------

@dataclass
class DatasetSummary:
    day: int = 0
    night: int = 0
    augmented: int = 0
    skipped: int = 0
    entries: List[dict] = field(default_factory=list)

    def counts(self) -> Dict[str, int]:
        return {"day": self.day, "night": self.night, "augmented": self.augmented,
                "skipped": self.skipped}


def _process_one(path: Path, out_dir: Path, cfg: AugmentationConfig) -> dict:
    try:
        frame = read_ppm(path)
    except (FlareBenchError, OSError) as exc:
        log.warning("skipping %s: %s", path.name, exc)
        return {"file": path.name, "classification": None, "placement": None,
                "error": str(exc)}
    label = classify_day_night(frame, cfg)
    if label is DayNight.DAY:
        shutil.copyfile(path, out_dir / path.name)
        return {"file": path.name, "classification": label.value, "placement": None}
    try:
        out, placement = augment_flare(frame, cfg, key=path.name)
    except DegenerateInput as exc:
        log.warning("skipping %s: %s", path.name, exc)
        return {"file": path.name, "classification": label.value, "placement": None,
                "error": str(exc)}
    write_ppm(out_dir / path.name, out)
    return {"file": path.name, "classification": label.value, "placement": placement.to_dict()}


def build_augmented_dataset(input_dir, output_dir, cfg: AugmentationConfig = AugmentationConfig(),
                            max_workers: Optional[int] = None) -> DatasetSummary:
    """Copy daytime images untouched and write flare-augmented nighttime images.

    The per-image seed depends only on the global seed and the file name, so the
    output does not depend on ``max_workers``.
    """
    src, dst = Path(input_dir), Path(output_dir)
    files = sorted(p for p in src.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES) \
        if src.is_dir() else []
    if not files:
        raise EmptyDataset(f"no PPM images in {src}")
    dst.mkdir(parents=True, exist_ok=True)
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            entries = list(pool.map(lambda p: _process_one(p, dst, cfg), files))
    else:
        entries = [_process_one(p, dst, cfg) for p in files]

    summary = DatasetSummary(entries=entries)
    for e in entries:
        if "error" in e:
            summary.skipped += 1
            if e["classification"] == DayNight.NIGHT.value:
                summary.night += 1
        elif e["classification"] == DayNight.DAY.value:
            summary.day += 1
        else:
            summary.night += 1
            summary.augmented += 1
    (dst / LOG_NAME).write_text(json.dumps(entries, indent=2))
    return summary


def config_from_dict(d: dict) -> AugmentationConfig:
    known = AugmentationConfig.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown augmentation field")
    try:
        return AugmentationConfig(**d)
    except TypeError as exc:
        raise ConfigError("augmentation", str(exc)) from None
