"""``flarebench`` command line: simulate, augment, analyze, compare, bench, pipeline-run.

Exit codes: 0 success, 2 config/validation, 3 IO, 4 analysis, 5 backend.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from pathlib import Path
from typing import Optional

from . import __version__
from .augmentation import build_augmented_dataset, config_from_dict
from .caracetamol import (ChromaClampConfig, PipelineConfig, Pipeline, benchmark,
                          chroma_clamp_denoise, identity_denoise)
from .core import MANIFEST_NAME, BoundingBox, load_sequence, save_sequence
from .detectors import ReferenceDetector, ReferenceDetectorConfig, WorkerClient
from .errors import (BackendError, ConfigError, DegenerateInput, EmptyDataset, EmptyInput,
                     EmptySignal, FlareBenchError, InsufficientSamples, InvalidImage,
                     InvalidScene, NoTarget)
from .flasher_sim import (camera_from_dict, camera_to_dict, pattern_from_dict, pattern_to_dict,
                          render_sequence, scene_from_dict, scene_to_dict)
from .report import AnalysisReport, analyze_sequence, compare_reports, format_comparison

log = logging.getLogger("flarebench")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ANALYSIS, EXIT_BACKEND = 0, 2, 3, 4, 5
SIM_CONFIG_NAME = "simulation.json"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, (NoTarget, InsufficientSamples, EmptySignal)):
        return EXIT_ANALYSIS
    if isinstance(exc, (ConfigError, InvalidScene, DegenerateInput, EmptyInput)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, InvalidImage, EmptyDataset)):
        return EXIT_IO
    return EXIT_CONFIG


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path} is not valid JSON: {exc}") from None


def _out_dir(args, positional: Optional[str]) -> Path:
    out = positional or args.out
    if not out:
        raise CliError(EXIT_CONFIG, "an output directory is required (positional or --out)")
    return Path(out)


# -- backend construction ----------------------------------------------------------

def _sim_car_box(video_dir: Path) -> Optional[BoundingBox]:
    path = video_dir / SIM_CONFIG_NAME
    if not path.exists():
        return None
    return BoundingBox.from_seq(_load_json(path)["ground_truth_car_box"])


def build_detector(spec: dict, stack: ExitStack, video_dir: Optional[Path] = None):
    """Instantiate a detector from ``{"kind": "reference"|"external", ...}``."""
    if not isinstance(spec, dict):
        raise ConfigError("detector", "must be a JSON object")
    kind = spec.get("kind", "reference")
    if kind == "reference":
        if "car_box" in spec:
            box = BoundingBox.from_seq(spec["car_box"])
        else:
            box = _sim_car_box(video_dir) if video_dir else None
            if box is None:
                raise ConfigError("car_box", "reference backend needs car_box (or a simulated video)")
        params = {k: spec[k] for k in ReferenceDetectorConfig.__dataclass_fields__ if k in spec}
        return ReferenceDetector(box, ReferenceDetectorConfig(**params))
    if kind == "external":
        cmd = spec.get("cmd")
        if not isinstance(cmd, list) or not cmd:
            raise ConfigError("cmd", "external backend needs a non-empty command list")
        return stack.enter_context(WorkerClient(cmd, spec.get("timeout_ms")))
    raise ConfigError("kind", f"unknown detector kind {kind!r}")


def build_denoiser(spec: dict, stack: ExitStack):
    kind = (spec or {}).get("kind", "identity")
    if kind == "identity":
        return identity_denoise
    if kind == "chroma_clamp":
        cfg = ChromaClampConfig(**{k: spec[k] for k in ChromaClampConfig.__dataclass_fields__ if k in spec})
        return lambda frame: chroma_clamp_denoise(frame, cfg)
    if kind == "external":
        cmd = spec.get("cmd")
        if not isinstance(cmd, list) or not cmd:
            raise ConfigError("cmd", "external denoiser needs a non-empty command list")
        return stack.enter_context(WorkerClient(cmd, spec.get("timeout_ms"))).denoise
    raise ConfigError("denoiser.kind", f"unknown denoiser kind {kind!r}")


def build_pipeline(spec: dict, stack: ExitStack, video_dir: Optional[Path] = None,
                   name: str = "pipeline") -> PipelineConfig:
    """Build from the ``pipeline.json`` schema; a null detector slot disables that path."""
    known = {"name", "denoiser", "raw_detector", "tuned_detector", "combiner", "concurrent"}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown pipeline field")
    raw = spec.get("raw_detector")
    tuned = spec.get("tuned_detector")
    comb = spec.get("combiner") or {}
    return PipelineConfig(
        raw_detector=build_detector(raw, stack, video_dir) if raw is not None else None,
        tuned_detector=build_detector(tuned, stack, video_dir) if tuned is not None else None,
        denoiser=build_denoiser(spec.get("denoiser"), stack),
        combiner_iou_threshold=float(comb.get("iou_threshold", 0.5)),
        class_match=bool(comb.get("class_match", True)),
        concurrent=bool(spec.get("concurrent", True)),
        name=str(spec.get("name", name)),
    )


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    if not isinstance(cfg, dict):
        raise ConfigError("config", "must be a JSON object")
    scene = scene_from_dict(cfg.get("scene", {}))
    pattern = pattern_from_dict(cfg.get("pattern", {}))
    camera = camera_from_dict(cfg.get("camera", {}))
    duration = cfg.get("duration_s", 30.0)
    if not isinstance(duration, (int, float)) or duration <= 0:
        raise ConfigError("duration_s", f"must be > 0, got {duration!r}")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    seq, truth = render_sequence(scene, pattern, camera, float(duration), seed)
    out = _out_dir(args, args.out_dir)
    save_sequence(seq, out)
    (out / "ground_truth.json").write_text(json.dumps(truth.to_json()))
    (out / SIM_CONFIG_NAME).write_text(json.dumps({
        "scene": scene_to_dict(scene), "pattern": pattern_to_dict(pattern),
        "camera": camera_to_dict(camera), "duration_s": duration, "seed": seed,
        "ground_truth_car_box": list(truth.car_box.as_tuple()), "tool_version": __version__,
    }, indent=2))
    log.info("wrote %d frames to %s", len(seq), out)
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg_dict = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["rng_seed"] = args.seed
    cfg = config_from_dict(cfg_dict)
    summary = build_augmented_dataset(args.in_dir, _out_dir(args, args.out_dir), cfg, args.workers)
    print(json.dumps(summary.counts()))
    return EXIT_OK


def _analyze_one(video_dir: Path, out_dir: Path, backend_spec: dict, args) -> int:
    with ExitStack() as stack:
        seq = load_sequence(video_dir)
        detector = build_detector(backend_spec, stack, video_dir)
        roi = BoundingBox.from_seq(args.roi) if args.roi else None
        provenance = {"input": str(video_dir), "backend": detector.capabilities.name,
                      "seed": args.seed}

        def detect(frame):
            try:
                return detector.detect(frame)
            except BackendError:
                raise
            except Exception as exc:  # backend bug surfaces as a backend failure
                raise BackendError(str(exc)) from exc

        report = analyze_sequence(seq, detect, provenance, args.target_class, roi, out_dir)
    peak = report.dominant_peak
    log.info("%s: average %.3f, peak %s", video_dir,
             report.metrics.average, f"{peak.frequency_hz:.3f} Hz" if peak else "NoPeak")
    return EXIT_OK


def cmd_analyze(args) -> int:
    video_dir = Path(args.video_dir)
    out = _out_dir(args, args.out_dir)
    backend = _load_json(args.backend) if args.backend else {"kind": "reference"}
    if (video_dir / MANIFEST_NAME).exists():
        return _analyze_one(video_dir, out, backend, args)
    subdirs = sorted(p for p in video_dir.iterdir() if (p / MANIFEST_NAME).exists()) \
        if video_dir.is_dir() else []
    if not subdirs:
        raise CliError(EXIT_IO, f"{video_dir} holds no video sequence")

    def run(sub: Path) -> int:
        try:
            return _analyze_one(sub, out / sub.name, backend, args)
        except (FlareBenchError, OSError) as exc:
            log.error("%s: %s", sub.name, exc)
            return exit_code_for(exc)

    with ThreadPoolExecutor(max_workers=args.workers or None) as pool:
        codes = list(pool.map(run, subdirs))
    return max(codes)


def cmd_compare(args) -> int:
    reports = []
    for path in (args.report_a, args.report_b):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
        reports.append(AnalysisReport.from_json(text))
    table = compare_reports(*reports)
    print(format_comparison(table))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(table, indent=2))
    else:
        print(json.dumps(table))
    return EXIT_OK


def _frames(video_dir, max_frames: Optional[int]):
    seq = load_sequence(video_dir)
    frames = list(seq.frames)
    return seq, frames[:max_frames] if max_frames else frames


def cmd_bench(args) -> int:
    if args.repetitions < 1:
        raise ConfigError("repetitions", f"must be >= 1, got {args.repetitions}")
    spec = _load_json(args.pipeline_config)
    video_dir = Path(args.video_dir)
    _, frames = _frames(video_dir, args.max_frames)
    with ExitStack() as stack:
        cfg = build_pipeline(spec, stack, video_dir, name="pipeline")
        baseline = None
        if args.baseline:
            baseline = build_pipeline(_load_json(args.baseline), stack, video_dir, name="baseline")
        report = benchmark(cfg, frames, args.repetitions, baseline)
    text = json.dumps(report.to_dict(), indent=2)
    print(text)
    print(f"{report.name}: {report.table_row()}", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "latency.json").write_text(text)
    return EXIT_OK


def cmd_pipeline_run(args) -> int:
    spec = _load_json(args.pipeline_config)
    video_dir = Path(args.video_dir)
    out = _out_dir(args, args.out_dir)
    seq, _ = _frames(video_dir, None)
    per_frame, timings = [], []
    with ExitStack() as stack:
        cfg = build_pipeline(spec, stack, video_dir)
        pipe = stack.enter_context(Pipeline(cfg))

        def detect(frame):
            dets, t = pipe.run(frame)
            per_frame.append([d.to_dict() for d in dets])
            timings.append(t.to_dict())
            return dets

        provenance = {"input": str(video_dir), "backend": cfg.name, "seed": args.seed,
                      "pipeline": spec}
        roi = BoundingBox.from_seq(args.roi) if args.roi else None
        analyze_sequence(seq, detect, provenance, args.target_class, roi, out)
    (out / "detections.json").write_text(json.dumps(per_frame))
    (out / "timings.json").write_text(json.dumps(timings))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flarebench", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--verbose", "-v", action="store_true", default=False)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a synthetic flasher video")
    p.add_argument("config")
    p.add_argument("out_dir", nargs="?")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("augment", parents=[common], help="day/night split plus flare augmentation")
    p.add_argument("in_dir")
    p.add_argument("out_dir", nargs="?")
    p.add_argument("--config")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("analyze", parents=[common], help="confidence-signal analysis of a video")
    p.add_argument("video_dir")
    p.add_argument("out_dir", nargs="?")
    p.add_argument("--backend", help="detector backend JSON (default: reference)")
    p.add_argument("--roi", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    p.add_argument("--class", dest="target_class", default="car")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", parents=[common], help="metric deltas between two reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", parents=[common], help="per-stage latency of a pipeline")
    p.add_argument("pipeline_config")
    p.add_argument("video_dir")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--baseline", help="pipeline JSON to measure overhead against")
    p.add_argument("--max-frames", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline-run", parents=[common], help="run the dual-path pipeline on a video")
    p.add_argument("pipeline_config")
    p.add_argument("video_dir")
    p.add_argument("out_dir", nargs="?")
    p.add_argument("--roi", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    p.add_argument("--class", dest="target_class", default="car")
    p.set_defaults(func=cmd_pipeline_run)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, FlareBenchError, OSError, TypeError, ValueError, KeyError) as exc:
        code = exit_code_for(exc)
        print(f"flarebench {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
