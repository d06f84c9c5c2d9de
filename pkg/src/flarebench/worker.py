"""Reference worker process speaking the framed JSON protocol on stdin/stdout.

Run as ``python -m flarebench.worker --car-box X0 Y0 X1 Y1`` to serve the
reference detector, add ``--denoiser chroma_clamp`` to also answer denoise
requests, or ``--fixed FILE`` to echo a fixed detection list.
"""

from __future__ import annotations

import argparse
import json
import sys

from .core import BoundingBox, Detection
from .detectors import (ReferenceDetectorConfig, detections_to_wire, frame_from_wire,
                        frame_to_wire, read_message, reference_detect, write_message)
from .errors import FlareBenchError


def serve(stdin, stdout, handler) -> int:
    while True:
        try:
            msg = read_message(stdin)
        except FlareBenchError as exc:
            write_message(stdout, {"type": "error", "message": str(exc)})
            return 1
        if msg is None:
            return 0
        try:
            reply = handler(msg)
        except (FlareBenchError, KeyError, TypeError, ValueError) as exc:
            reply = {"type": "error", "message": f"{type(exc).__name__}: {exc}"}
        write_message(stdout, reply)


def make_handler(car_box=None, cfg=ReferenceDetectorConfig(), fixed=None, denoiser=None):
    from .caracetamol import chroma_clamp_denoise

    def handle(msg: dict) -> dict:
        kind = msg["type"]
        if kind == "hello":
            return {"type": "capabilities", "name": "flarebench-reference", "classes": ["car"]}
        if kind == "detect":
            if fixed is not None:
                return detections_to_wire(fixed)
            frame = frame_from_wire(msg["frame"])
            if car_box is None:
                raise ValueError("worker started without --car-box")
            return detections_to_wire(reference_detect(frame, car_box, cfg))
        if kind == "denoise":
            frame = frame_from_wire(msg["frame"])
            out = frame if denoiser in (None, "identity") else chroma_clamp_denoise(frame)
            return {"type": "frame", **frame_to_wire(out)}
        return {"type": "error", "message": f"unknown message type {kind!r}"}

    return handle


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="flarebench-worker")
    ap.add_argument("--car-box", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    ap.add_argument("--c-clear", type=float, default=0.95)
    ap.add_argument("--gamma", type=float, default=0.85)
    ap.add_argument("--saturation-level", type=int, default=240)
    ap.add_argument("--dilation", type=int, default=8)
    ap.add_argument("--fixed", help="JSON file holding a list of detections to echo")
    ap.add_argument("--denoiser", choices=["identity", "chroma_clamp"])
    args = ap.parse_args(argv)

    car_box = BoundingBox.from_seq(args.car_box) if args.car_box else None
    cfg = ReferenceDetectorConfig(args.c_clear, args.gamma, args.saturation_level, args.dilation)
    fixed = None
    if args.fixed:
        with open(args.fixed) as fh:
            fixed = [Detection.from_dict(d) for d in json.load(fh)]
    handler = make_handler(car_box, cfg, fixed, args.denoiser)
    return serve(sys.stdin.buffer, sys.stdout.buffer, handler)


if __name__ == "__main__":
    sys.exit(main())
