"""Synthetic emergency-flasher footage with exact ground-truth timing.

The flasher is a piecewise-constant on/off schedule repeating every
``1 / frequency_hz`` seconds, phase 0 at t=0. Each frame integrates the
schedule over its exposure window ``[i/fps, i/fps + exposure_fraction/fps)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import BoundingBox, Frame, VideoSequence, frame_timestamp_ms
from .errors import ConfigError, InvalidScene

RGB = Tuple[int, int, int]

RED: RGB = (255, 40, 40)
BLUE: RGB = (60, 60, 255)

BURST_PULSE_S = 0.060
BURST_GAP_S = 0.080


class FlasherMode(str, Enum):
    STEADY_OFF = "SteadyOff"
    SINGLE_COLOR = "SingleColor"
    ALTERNATING_TWO_COLOR = "AlternatingTwoColor"
    DOUBLE_BURST = "DoubleBurst"


def _rgb(value, name: str) -> RGB:
    try:
        r, g, b = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected an RGB triple, got {value!r}") from None
    if not all(0 <= c <= 255 for c in (r, g, b)):
        raise ConfigError(name, f"channels must lie in [0, 255], got {value!r}")
    return r, g, b


@dataclass(frozen=True)
class FlasherPattern:
    frequency_hz: float = 1.3
    duty_cycle: float = 0.5
    mode: FlasherMode = FlasherMode.SINGLE_COLOR
    colors: Tuple[RGB, ...] = (BLUE,)
    intensity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", FlasherMode(self.mode))
        object.__setattr__(self, "colors", tuple(_rgb(c, "colors") for c in self.colors))
        if self.mode is FlasherMode.STEADY_OFF:
            return
        if not (math.isfinite(self.frequency_hz) and self.frequency_hz > 0):
            raise ConfigError("frequency_hz", f"must be > 0, got {self.frequency_hz}")
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ConfigError("duty_cycle", f"must lie in [0, 1], got {self.duty_cycle}")
        if not 0.0 < self.intensity <= 1.0:
            raise ConfigError("intensity", f"must lie in (0, 1], got {self.intensity}")
        if not 1 <= len(self.colors) <= 2:
            raise ConfigError("colors", f"need 1 or 2 colors, got {len(self.colors)}")
        if self.mode is FlasherMode.ALTERNATING_TWO_COLOR and len(self.colors) != 2:
            raise ConfigError("colors", "AlternatingTwoColor requires exactly 2 colors")
        if self.mode is FlasherMode.DOUBLE_BURST and self.period_s < 2 * BURST_PULSE_S + BURST_GAP_S:
            raise ConfigError("frequency_hz", "DoubleBurst needs a period of at least 200 ms")

    @property
    def period_s(self) -> float:
        return 1.0 / self.frequency_hz

    def slots(self) -> List[Tuple[float, float, int]]:
        """On-intervals ``(start_s, end_s, color_index)`` within one period."""
        if self.mode is FlasherMode.STEADY_OFF:
            return []
        T = self.period_s
        if self.mode is FlasherMode.SINGLE_COLOR:
            return [(0.0, self.duty_cycle * T, 0)]
        if self.mode is FlasherMode.ALTERNATING_TWO_COLOR:
            half = T / 2
            return [(0.0, self.duty_cycle * half, 0), (half, half + self.duty_cycle * half, 1)]
        second = BURST_PULSE_S + BURST_GAP_S
        return [(0.0, BURST_PULSE_S, 0), (second, second + BURST_PULSE_S, 0)]

    def on_time(self, t0: float, t1: float) -> Dict[int, float]:
        """Seconds of on-time per color index within ``[t0, t1)``."""
        out: Dict[int, float] = {}
        if self.mode is FlasherMode.STEADY_OFF or t1 <= t0:
            return out
        T = self.period_s
        for a, b, color in self.slots():
            if b <= a:
                continue
            dt = _cumulative(t1, T, a, b) - _cumulative(t0, T, a, b)
            out[color] = out.get(color, 0.0) + max(0.0, dt)
        return out


def _cumulative(t: float, period: float, a: float, b: float) -> float:
    """On-time in [0, t) for a slot [a, b) repeating every ``period``."""
    k = math.floor(t / period)
    rem = t - k * period
    return k * (b - a) + min(max(rem - a, 0.0), b - a)


@dataclass(frozen=True)
class CameraModel:
    fps: float = 24.0
    exposure_fraction: float = 0.5
    iso_gain: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ConfigError("fps", f"must be > 0, got {self.fps}")
        if not 0.0 < self.exposure_fraction <= 1.0:
            raise ConfigError("exposure_fraction", f"must lie in (0, 1], got {self.exposure_fraction}")
        if not self.iso_gain >= 1.0:
            raise ConfigError("iso_gain", f"must be >= 1, got {self.iso_gain}")
        if not self.noise_sigma >= 0.0:
            raise ConfigError("noise_sigma", f"must be >= 0, got {self.noise_sigma}")

    def exposure_window(self, frame_index: int) -> Tuple[float, float]:
        t0 = frame_index / self.fps
        return t0, t0 + self.exposure_fraction / self.fps


@dataclass(frozen=True)
class SceneConfig:
    resolution: Tuple[int, int] = (160, 120)
    ambient_lux: float = 20.0
    car_albedo: int = 150
    car_box: BoundingBox = field(default_factory=lambda: BoundingBox(40, 50, 120, 100))
    flasher_position: Tuple[float, float] = (80.0, 75.0)
    flasher_radius: float = 48.0
    distance_scale: float = 1.0
    # peak glow amplitude for a frame fully lit for its whole interval
    flare_gain: float = 12.0

    def __post_init__(self):
        w, h = (int(v) for v in self.resolution)
        object.__setattr__(self, "resolution", (w, h))
        if w < 1 or h < 1:
            raise ConfigError("resolution", f"must be >= 1x1, got {self.resolution}")
        if not self.ambient_lux >= 0:
            raise ConfigError("ambient_lux", f"must be >= 0, got {self.ambient_lux}")
        if not 0 <= self.car_albedo <= 255:
            raise ConfigError("car_albedo", f"must lie in [0, 255], got {self.car_albedo}")
        if not self.flasher_radius > 0:
            raise ConfigError("flasher_radius", f"must be > 0, got {self.flasher_radius}")
        if not self.distance_scale > 0:
            raise ConfigError("distance_scale", f"must be > 0, got {self.distance_scale}")
        if not self.flare_gain > 0:
            raise ConfigError("flare_gain", f"must be > 0, got {self.flare_gain}")

    @property
    def base_luminance(self) -> float:
        return 255.0 * min(1.0, self.ambient_lux / 1000.0)

    def effective_car_box(self) -> BoundingBox:
        """Car box scaled about its center by ``distance_scale``."""
        cx, cy = self.car_box.center
        hw = (self.car_box.x_max - self.car_box.x_min) * self.distance_scale / 2
        hh = (self.car_box.y_max - self.car_box.y_min) * self.distance_scale / 2
        return BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh)

    def effective_flasher(self) -> Tuple[float, float, float]:
        """Flasher (x, y, radius) after distance scaling about the car center."""
        cx, cy = self.car_box.center
        fx, fy = self.flasher_position
        s = self.distance_scale
        return cx + (fx - cx) * s, cy + (fy - cy) * s, self.flasher_radius * s

    def validate_geometry(self) -> None:
        w, h = self.resolution
        box = self.effective_car_box()
        if not box.inside_frame(w, h):
            raise InvalidScene(f"car box {box.as_tuple()} lies outside the {w}x{h} frame")
        fx, fy, _ = self.effective_flasher()
        if not (0 <= fx < w and 0 <= fy < h):
            raise InvalidScene(f"flasher position ({fx:.1f}, {fy:.1f}) lies outside the frame")
        if not (box.x_min <= fx <= box.x_max and fy <= box.y_max):
            raise InvalidScene("flasher must sit on or above the car box")


@dataclass(frozen=True)
class FrameTruth:
    index: int
    intensity: float  # waveform integral over the exposure window
    color: Optional[RGB]
    energy: float  # on-time in units of the frame interval, times intensity and gain

    def to_dict(self) -> dict:
        return {"index": self.index, "intensity": self.intensity,
                "color": list(self.color) if self.color else None}


@dataclass(frozen=True)
class GroundTruth:
    frames: Tuple[FrameTruth, ...]
    car_box: BoundingBox
    fps: float

    def intensities(self) -> np.ndarray:
        return np.array([f.intensity for f in self.frames])

    def to_json(self) -> list:
        return [f.to_dict() for f in self.frames]


def waveform_integral(pattern: FlasherPattern, cam: CameraModel, frame_index: int) -> float:
    """Fraction of the frame's exposure window during which the flasher is on."""
    t0, t1 = cam.exposure_window(frame_index)
    on = sum(pattern.on_time(t0, t1).values())
    return min(1.0, max(0.0, on / (t1 - t0)))


def frame_energy(pattern: FlasherPattern, cam: CameraModel, frame_index: int) -> Dict[int, float]:
    """Per-color flare energy: on-seconds times fps, times intensity and ISO gain."""
    t0, t1 = cam.exposure_window(frame_index)
    scale = cam.fps * pattern.intensity * cam.iso_gain
    return {c: s * scale for c, s in pattern.on_time(t0, t1).items()}


def base_frame(scene: SceneConfig, cam: CameraModel) -> np.ndarray:
    """Float (h, w, 3) scene without flare or noise, after ISO gain."""
    w, h = scene.resolution
    lum = scene.base_luminance
    img = np.full((h, w, 3), lum, dtype=float)
    rows, cols = scene.effective_car_box().pixel_slice(w, h)
    illum = 0.25 + 0.75 * lum / 255.0
    img[rows, cols, :] = scene.car_albedo * illum
    return np.clip(img * cam.iso_gain, 0.0, 255.0)


def glow_profile(width: int, height: int, cx: float, cy: float, sigma_x: float,
                 sigma_y: float) -> np.ndarray:
    """Unit-peak anisotropic Gaussian sampled at pixel centers."""
    xs = np.arange(width) + 0.5 - cx
    ys = np.arange(height) + 0.5 - cy
    gx = np.exp(-(xs ** 2) / (2 * sigma_x ** 2))
    gy = np.exp(-(ys ** 2) / (2 * sigma_y ** 2))
    return np.outer(gy, gx)


def screen_blend(base: np.ndarray, flare: np.ndarray) -> np.ndarray:
    return 255.0 - (255.0 - base) * (255.0 - flare) / 255.0


def render_frame(scene: SceneConfig, pattern: FlasherPattern, cam: CameraModel,
                 frame_index: int, base: Optional[np.ndarray] = None,
                 profile: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None
                 ) -> Tuple[np.ndarray, FrameTruth]:
    w, h = scene.resolution
    img = base_frame(scene, cam) if base is None else base.copy()
    energies = frame_energy(pattern, cam, frame_index)
    if profile is None:
        fx, fy, r = scene.effective_flasher()
        profile = glow_profile(w, h, fx, fy, r / 2, r / 2)
    for color_idx, energy in sorted(energies.items()):
        if energy <= 0:
            continue
        amp = np.minimum(1.0, scene.flare_gain * energy * profile)
        flare = amp[..., None] * np.asarray(pattern.colors[color_idx], dtype=float)
        img = screen_blend(img, flare)
    if cam.noise_sigma > 0:
        gen = rng if rng is not None else np.random.default_rng(frame_index)
        img = np.clip(img + gen.normal(0.0, cam.noise_sigma, img.shape), 0.0, 255.0)
    color = None
    if energies and max(energies.values()) > 0:
        color = pattern.colors[max(energies, key=lambda c: energies[c])]
    truth = FrameTruth(frame_index, waveform_integral(pattern, cam, frame_index), color,
                       sum(energies.values()))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), truth


def render_sequence(scene: SceneConfig, pattern: FlasherPattern, cam: CameraModel,
                    duration_s: float, seed: int = 0) -> Tuple[VideoSequence, GroundTruth]:
    """Render ``round(duration_s * fps)`` frames with per-frame seeded sensor noise."""
    if not duration_s > 0:
        raise ConfigError("duration_s", f"must be > 0, got {duration_s}")
    scene.validate_geometry()
    n = int(math.floor(duration_s * cam.fps + 0.5))
    w, h = scene.resolution
    base = base_frame(scene, cam)
    fx, fy, r = scene.effective_flasher()
    profile = glow_profile(w, h, fx, fy, r / 2, r / 2)
    seeds = np.random.SeedSequence(seed).spawn(n)
    frames, truths = [], []
    for i in range(n):
        arr, truth = render_frame(scene, pattern, cam, i, base, profile,
                                  np.random.default_rng(seeds[i]))
        frames.append(Frame.from_array(arr, i, frame_timestamp_ms(i, cam.fps)))
        truths.append(truth)
    return (VideoSequence(tuple(frames), cam.fps),
            GroundTruth(tuple(truths), scene.effective_car_box(), cam.fps))


# -- JSON config helpers --------------------------------------------------------

def scene_from_dict(d: dict) -> SceneConfig:
    d = dict(d)
    if "car_box" in d:
        d["car_box"] = BoundingBox.from_seq(d["car_box"])
    if "resolution" in d:
        d["resolution"] = tuple(d["resolution"])
    if "flasher_position" in d:
        d["flasher_position"] = tuple(d["flasher_position"])
    return _construct(SceneConfig, d)


def pattern_from_dict(d: dict) -> FlasherPattern:
    d = dict(d)
    if "mode" in d:
        try:
            d["mode"] = FlasherMode(d["mode"])
        except ValueError:
            raise ConfigError("mode", f"unknown flasher mode {d['mode']!r}") from None
    if "colors" in d:
        d["colors"] = tuple(tuple(c) for c in d["colors"])
    return _construct(FlasherPattern, d)


def camera_from_dict(d: dict) -> CameraModel:
    return _construct(CameraModel, dict(d))


def _construct(cls, d: dict):
    known = cls.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown field for {cls.__name__}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(cls.__name__, str(exc)) from None


def scene_to_dict(scene: SceneConfig) -> dict:
    d = asdict(scene)
    d["car_box"] = list(scene.car_box.as_tuple())
    d["resolution"] = list(scene.resolution)
    d["flasher_position"] = list(scene.flasher_position)
    return d


def pattern_to_dict(pattern: FlasherPattern) -> dict:
    return {"frequency_hz": pattern.frequency_hz, "duty_cycle": pattern.duty_cycle,
            "mode": pattern.mode.value, "colors": [list(c) for c in pattern.colors],
            "intensity": pattern.intensity}


def camera_to_dict(cam: CameraModel) -> dict:
    return asdict(cam)
