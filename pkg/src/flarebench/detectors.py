"""Detector backends: a deterministic flare-sensitive reference detector and
a stdin/stdout worker client for external detectors and denoisers.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import select
import struct
import subprocess
import time
from dataclasses import dataclass, field
from typing import IO, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .core import BoundingBox, Detection, Frame
from .errors import ConfigError, ProtocolError, WorkerCrashed, WorkerTimeout

log = logging.getLogger(__name__)

TIMEOUT_ENV = "FLAREBENCH_WORKER_TIMEOUT_MS"
DEFAULT_TIMEOUT_MS = 1000.0
DEFAULT_STARTUP_TIMEOUT_MS = 15000.0
MAX_MESSAGE_BYTES = 1 << 30

_LEN = struct.Struct(">I")


@dataclass(frozen=True)
class Capabilities:
    name: str
    classes: Tuple[str, ...] = ("car",)
    expected_resolution: Optional[Tuple[int, int]] = None  # None means any


class DetectorBackend(Protocol):
    capabilities: Capabilities

    def detect(self, frame: Frame) -> List[Detection]:
        ...


@dataclass(frozen=True)
class ReferenceDetectorConfig:
    c_clear: float = 0.95
    gamma: float = 0.85
    saturation_level: int = 240
    dilation: int = 8

    def __post_init__(self):
        if not 0.0 < self.c_clear <= 1.0:
            raise ConfigError("c_clear", f"must lie in (0, 1], got {self.c_clear}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma", f"must lie in [0, 1], got {self.gamma}")
        if not 0 <= self.saturation_level < 255:
            raise ConfigError("saturation_level", f"must lie in [0, 255), got {self.saturation_level}")
        if self.dilation < 0:
            raise ConfigError("dilation", f"must be >= 0, got {self.dilation}")


def flare_excess(frame: Frame, car_box: BoundingBox, cfg: ReferenceDetectorConfig) -> float:
    """Mean normalized excess of the max channel over ``saturation_level``
    inside the dilated car box, in [0, 1]."""
    rows, cols = car_box.pixel_slice(frame.width, frame.height, pad=cfg.dilation)
    region = frame.array[rows, cols]
    if region.size == 0:
        return 0.0
    peak = region.max(axis=2).astype(np.int32)
    excess = np.clip(peak - cfg.saturation_level, 0, None)
    return float(excess.sum()) / ((255 - cfg.saturation_level) * peak.size)


def confidence_from_excess(excess: float, cfg: ReferenceDetectorConfig) -> float:
    return min(1.0, max(0.0, cfg.c_clear * (1.0 - cfg.gamma * excess)))


def reference_detect(frame: Frame, car_box: BoundingBox,
                     cfg: ReferenceDetectorConfig = ReferenceDetectorConfig()) -> List[Detection]:
    """One ``car`` detection at the ground-truth box, confidence falling linearly with flare."""
    if not car_box.intersects_frame(frame.width, frame.height):
        raise ConfigError("car_box", "does not intersect the frame")
    conf = confidence_from_excess(flare_excess(frame, car_box, cfg), cfg)
    return [Detection(car_box, "car", conf)]


@dataclass
class ReferenceDetector:
    car_box: BoundingBox
    config: ReferenceDetectorConfig = field(default_factory=ReferenceDetectorConfig)
    capabilities: Capabilities = field(default_factory=lambda: Capabilities("reference"))

    def detect(self, frame: Frame) -> List[Detection]:
        return reference_detect(frame, self.car_box, self.config)


# -- wire protocol ---------------------------------------------------------------

def encode_message(payload: dict) -> bytes:
    body = json.dumps(payload, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return _LEN.pack(len(body)) + body


def decode_body(body: bytes) -> dict:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"message body is not UTF-8 JSON: {exc}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError("message must be a JSON object with a string 'type'")
    return msg


def _read_exact(stream: IO[bytes], n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return buf


def read_message(stream: IO[bytes]) -> Optional[dict]:
    """Blocking read of one framed message; None on clean EOF at a boundary."""
    head = _read_exact(stream, _LEN.size)
    if not head:
        return None
    if len(head) < _LEN.size:
        raise ProtocolError(f"truncated length prefix ({len(head)} of 4 bytes)")
    (n,) = _LEN.unpack(head)
    if n > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message length {n} exceeds limit")
    body = _read_exact(stream, n)
    if len(body) < n:
        raise ProtocolError(f"truncated body ({len(body)} of {n} bytes)")
    return decode_body(body)


def write_message(stream: IO[bytes], payload: dict) -> None:
    stream.write(encode_message(payload))
    stream.flush()


def frame_to_wire(frame: Frame) -> dict:
    return {"width": frame.width, "height": frame.height,
            "pixels_b64": base64.b64encode(frame.pixels).decode("ascii")}


def frame_from_wire(d: dict, index: int = 0, timestamp_ms: int = 0) -> Frame:
    try:
        pixels = base64.b64decode(d["pixels_b64"], validate=True)
        return Frame(int(d["width"]), int(d["height"]), pixels, index, timestamp_ms)
    except ProtocolError:
        raise
    except Exception as exc:
        raise ProtocolError(f"bad frame payload: {exc}") from None


def detections_to_wire(dets: Sequence[Detection]) -> dict:
    return {"type": "detections", "items": [d.to_dict() for d in dets]}


def detections_from_wire(msg: dict) -> List[Detection]:
    if msg.get("type") != "detections" or not isinstance(msg.get("items"), list):
        raise ProtocolError(f"expected a detections message, got type {msg.get('type')!r}")
    try:
        return [Detection.from_dict(item) for item in msg["items"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad detection item: {exc}") from None


def default_timeout_ms() -> float:
    raw = os.environ.get(TIMEOUT_ENV)
    if raw is None:
        return DEFAULT_TIMEOUT_MS
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(TIMEOUT_ENV, f"not a number: {raw!r}") from None
    if value <= 0:
        raise ConfigError(TIMEOUT_ENV, f"must be > 0, got {value}")
    return value


class WorkerClient:
    """Owns one worker process and speaks the framed JSON protocol over its pipes.

    Not thread-safe; use one client per thread.
    """

    def __init__(self, cmd: Sequence[str], timeout_ms: Optional[float] = None,
                 startup_timeout_ms: float = DEFAULT_STARTUP_TIMEOUT_MS, env: Optional[dict] = None):
        self.cmd = list(cmd)
        self.timeout_ms = default_timeout_ms() if timeout_ms is None else float(timeout_ms)
        self.startup_timeout_ms = startup_timeout_ms
        try:
            self.proc = subprocess.Popen(self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         env=env, bufsize=0)
        except OSError as exc:
            raise WorkerCrashed(f"cannot start worker {self.cmd}: {exc}") from exc
        self.capabilities = Capabilities(os.path.basename(self.cmd[0]))
        self._handshake()

    def _handshake(self):
        reply = self.request({"type": "hello"}, timeout_ms=self.startup_timeout_ms)
        if reply.get("type") != "capabilities" or not isinstance(reply.get("classes"), list):
            raise ProtocolError(f"bad handshake reply: {reply!r}")
        self.capabilities = Capabilities(str(reply.get("name", self.capabilities.name)),
                                         tuple(str(c) for c in reply["classes"]))

    def _recv_exact(self, n: int, deadline: float) -> bytes:
        fd = self.proc.stdout.fileno()
        buf = b""
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise WorkerTimeout(f"no reply within {self.timeout_ms:.0f} ms")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                return buf
            buf += chunk
        return buf

    def request(self, payload: dict, timeout_ms: Optional[float] = None) -> dict:
        limit = self.timeout_ms if timeout_ms is None else timeout_ms
        deadline = time.monotonic() + limit / 1000.0
        try:
            self.proc.stdin.write(encode_message(payload))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise WorkerCrashed(f"worker stdin closed (exit code {self.proc.poll()})") from exc
        try:
            return self._receive(deadline)
        except WorkerTimeout:
            # a late reply would desynchronise the stream, so the worker is discarded
            self.proc.kill()
            raise

    def _receive(self, deadline: float) -> dict:
        head = self._recv_exact(_LEN.size, deadline)
        if not head:
            try:
                code = self.proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                code = None
            raise WorkerCrashed(f"worker closed its output (exit code {code})")
        if len(head) < _LEN.size:
            raise ProtocolError(f"truncated length prefix ({len(head)} of 4 bytes)")
        (n,) = _LEN.unpack(head)
        if n > MAX_MESSAGE_BYTES:
            raise ProtocolError(f"message length {n} exceeds limit")
        body = self._recv_exact(n, deadline)
        if len(body) < n:
            raise ProtocolError(f"truncated body ({len(body)} of {n} bytes)")
        msg = decode_body(body)
        if msg["type"] == "error":
            raise ProtocolError(f"worker error: {msg.get('message')}")
        return msg

    def detect(self, frame: Frame) -> List[Detection]:
        return detections_from_wire(self.request({"type": "detect", "frame": frame_to_wire(frame)}))

    def denoise(self, frame: Frame) -> Frame:
        msg = self.request({"type": "denoise", "frame": frame_to_wire(frame)})
        if msg["type"] != "frame":
            raise ProtocolError(f"expected a frame message, got type {msg['type']!r}")
        out = frame_from_wire(msg, frame.index, frame.timestamp_ms)
        if out.resolution != frame.resolution:
            raise ProtocolError(f"denoiser changed resolution to {out.resolution}")
        return out

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=1.0)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
        for pipe in (self.proc.stdin, self.proc.stdout):
            try:
                pipe.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_detect(client: WorkerClient, frame: Frame) -> List[Detection]:
    return client.detect(frame)
