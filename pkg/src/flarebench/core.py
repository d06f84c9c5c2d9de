"""Domain types and geometric primitives shared across flarebench.

Frames hold raw RGB24 bytes so they are immutable and hashable-by-value;
``Frame.array`` exposes a read-only numpy view for vectorised work.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, InvalidImage

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.json"
FRAME_PATTERN = "frame_{:06d}.ppm"


def frame_timestamp_ms(index: int, fps: float) -> int:
    """Timestamp of frame ``index`` in ms, rounded half up."""
    return int(math.floor(1000.0 * index / fps + 0.5))


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixels: bytes  # row-major RGB24
    index: int = 0
    timestamp_ms: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidImage(f"frame dimensions must be >= 1, got {self.width}x{self.height}")
        if len(self.pixels) != 3 * self.width * self.height:
            raise InvalidImage(
                f"pixel buffer has {len(self.pixels)} bytes, expected {3 * self.width * self.height}"
            )
        if self.index < 0:
            raise InvalidImage(f"frame index must be >= 0, got {self.index}")

    @classmethod
    def from_array(cls, array: np.ndarray, index: int = 0, timestamp_ms: int = 0) -> "Frame":
        arr = np.asarray(array)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidImage(f"expected an HxWx3 array, got shape {arr.shape}")
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8) if arr.dtype != np.uint8 else arr
        h, w, _ = arr.shape
        return cls(w, h, np.ascontiguousarray(arr).tobytes(), index, timestamp_ms)

    @classmethod
    def filled(cls, width: int, height: int, rgb: Sequence[int], index: int = 0,
               timestamp_ms: int = 0) -> "Frame":
        return cls(width, height, bytes(rgb) * (width * height), index, timestamp_ms)

    @property
    def array(self) -> np.ndarray:
        """Read-only (height, width, 3) uint8 view of the pixels."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.width, self.height

    def with_pixels(self, array: np.ndarray) -> "Frame":
        """Copy of this frame carrying new pixel data but the same index/timestamp."""
        return Frame.from_array(array, self.index, self.timestamp_ms)


@dataclass(frozen=True)
class VideoSequence:
    frames: Tuple[Frame, ...]
    fps: float

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.fps > 0:
            raise ConfigError("fps", f"must be > 0, got {self.fps}")
        if not self.frames:
            return
        res = self.frames[0].resolution
        for i, f in enumerate(self.frames):
            if f.resolution != res:
                raise InvalidImage(f"frame {i} has resolution {f.resolution}, expected {res}")
            if f.index != i or f.timestamp_ms != frame_timestamp_ms(i, self.fps):
                raise InvalidImage(f"frame {i} has index/timestamp {f.index}/{f.timestamp_ms}")

    @classmethod
    def from_arrays(cls, arrays: Iterable[np.ndarray], fps: float) -> "VideoSequence":
        frames = [Frame.from_array(a, i, frame_timestamp_ms(i, fps)) for i, a in enumerate(arrays)]
        return cls(tuple(frames), fps)

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.frames[0].resolution

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, half-open on the max edges."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("box", f"coordinates must be finite, got {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError("box", f"requires x_min < x_max and y_min < y_max, got {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max

    def intersects_frame(self, width: int, height: int) -> bool:
        return self.x_min < width and self.y_min < height and self.x_max > 0 and self.y_max > 0

    def inside_frame(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def pixel_slice(self, width: int, height: int, pad: int = 0) -> Tuple[slice, slice]:
        """Integer (rows, cols) slices covering the box grown by ``pad``, clipped to the frame."""
        x0 = max(0, int(math.floor(self.x_min)) - pad)
        y0 = max(0, int(math.floor(self.y_min)) - pad)
        x1 = min(width, int(math.ceil(self.x_max)) + pad)
        y1 = min(height, int(math.ceil(self.y_max)) + pad)
        return slice(y0, max(y0, y1)), slice(x0, max(x0, x1))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}

    @classmethod
    def from_seq(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise ConfigError("box", f"expected 4 coordinates, got {len(values)}")
        return cls(*values)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_label: str
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfigError("confidence", f"must lie in [0, 1], got {self.confidence}")

    def to_dict(self) -> dict:
        d = self.box.to_dict()
        d["class"] = self.class_label
        d["confidence"] = self.confidence
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        box = BoundingBox(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]))
        return cls(box, str(d["class"]), float(d["confidence"]))


class GapPolicy(str, Enum):
    ZERO_FILL = "ZeroFill"


@dataclass(frozen=True)
class ConfidenceSignal:
    values: Tuple[float, ...]
    fps: float
    target_class: str = "car"
    gap_policy: GapPolicy = GapPolicy.ZERO_FILL
    # box selected per frame, None where nothing was detected
    boxes: Optional[Tuple[Optional[BoundingBox], ...]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.fps > 0:
            raise ConfigError("fps", f"must be > 0, got {self.fps}")
        bad = [v for v in self.values if not 0.0 <= v <= 1.0]
        if bad:
            raise ConfigError("values", f"confidences must lie in [0, 1], got {bad[0]}")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def mean_brightness(frame: Frame) -> float:
    """Mean over pixels of the unweighted channel average (R+G+B)/3."""
    total = np.frombuffer(frame.pixels, dtype=np.uint8).sum(dtype=np.int64)
    return float(total) / (3 * frame.width * frame.height)


# -- PPM codec ---------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(data: bytes) -> Tuple[bytes, int, int, int, int]:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise InvalidImage("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InvalidImage(f"non-integer PNM header field in {tokens[1:]}") from None
    return magic, width, height, maxval, pos


def decode_ppm(data: bytes, index: int = 0, timestamp_ms: int = 0) -> Frame:
    """Decode a binary (P6) or ASCII (P3) PPM with maxval 255."""
    magic, width, height, maxval, pos = _parse_header(data)
    if magic not in (b"P6", b"P3"):
        raise InvalidImage(f"unsupported PNM magic {magic!r}")
    if maxval != 255:
        raise InvalidImage(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise InvalidImage(f"bad dimensions {width}x{height}")
    n = 3 * width * height
    if magic == b"P6":
        # exactly one whitespace byte separates the header from the raster
        raster = data[pos + 1:pos + 1 + n]
        if len(raster) != n:
            raise InvalidImage(f"raster truncated: {len(raster)} of {n} bytes")
        return Frame(width, height, bytes(raster), index, timestamp_ms)
    try:
        values = np.array(data[pos:].split()[:n], dtype=np.int64)
    except ValueError:
        raise InvalidImage("non-integer sample in P3 raster") from None
    if values.size != n or values.min(initial=0) < 0 or values.max(initial=0) > 255:
        raise InvalidImage("bad P3 raster")
    return Frame(width, height, values.astype(np.uint8).tobytes(), index, timestamp_ms)


def encode_ppm(frame: Frame) -> bytes:
    return b"P6\n%d %d\n255\n" % (frame.width, frame.height) + frame.pixels


def read_ppm(path: PathLike, index: int = 0, timestamp_ms: int = 0) -> Frame:
    return decode_ppm(Path(path).read_bytes(), index, timestamp_ms)


def write_ppm(path: PathLike, frame: Frame) -> None:
    Path(path).write_bytes(encode_ppm(frame))


def save_sequence(seq: VideoSequence, directory: PathLike) -> Path:
    """Write ``frame_NNNNNN.ppm`` files plus ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for f in seq.frames:
        write_ppm(out / FRAME_PATTERN.format(f.index), f)
    width, height = seq.resolution if len(seq) else (0, 0)
    manifest = {"fps": seq.fps, "width": width, "height": height, "count": len(seq)}
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return out


def load_sequence(directory: PathLike) -> VideoSequence:
    src = Path(directory)
    try:
        manifest = json.loads((src / MANIFEST_NAME).read_text())
        fps = float(manifest["fps"])
        count = int(manifest["count"])
        width, height = int(manifest["width"]), int(manifest["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidImage(f"bad manifest in {src}: {exc}") from exc
    frames = []
    for i in range(count):
        f = read_ppm(src / FRAME_PATTERN.format(i), i, frame_timestamp_ms(i, fps))
        if f.resolution != (width, height):
            raise InvalidImage(f"frame {i} is {f.resolution}, manifest says {(width, height)}")
        frames.append(f)
    return VideoSequence(tuple(frames), fps)
