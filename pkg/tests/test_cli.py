import json
import subprocess
import sys

import pytest

from flarebench.cli import main
from flarebench.core import Frame, load_sequence, write_ppm
from flarebench.report import AnalysisReport, improvement_pct
from flarebench.signal_analysis import DetectionLossCurve, SignalMetrics, SpectrumPeak

from conftest import WORKER_CMD


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def sim_config(tmp_path, freq=1.3, mode="SingleColor", fps=24, duration=4.0, name="sim.json"):
    return write_json(tmp_path / name, {
        "scene": {"resolution": [160, 120]},
        "pattern": {"frequency_hz": freq, "duty_cycle": 0.5, "mode": mode,
                    "colors": [[60, 60, 255]], "intensity": 1.0},
        "camera": {"fps": fps, "exposure_fraction": 0.5},
        "duration_s": duration,
    })


@pytest.fixture
def flashing_video(tmp_path):
    out = tmp_path / "video"
    assert main(["simulate", str(sim_config(tmp_path, duration=10.0)), str(out)]) == 0
    return out


def make_report(avg, lo=0.1, hi=0.9):
    m = SignalMetrics(avg, lo, hi, hi - lo, {0.5: 0.5, 0.6: 0.4, 0.7: 0.3, 0.8: 0.2})
    return AnalysisReport(m, SpectrumPeak(1.3, 4.0, 0.05), DetectionLossCurve((0.0, 1.0), (1.0, 0.0)),
                          0.3, {"input": "x", "backend": "reference", "seed": 0, "tool_version": "0"})


# -- simulate ----------------------------------------------------------------------

def test_simulate_happy_path(tmp_path):
    out = tmp_path / "v"
    assert main(["simulate", str(sim_config(tmp_path, duration=1.0)), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest == {"fps": 24, "width": 160, "height": 120, "count": 24}
    truth = json.loads((out / "ground_truth.json").read_text())
    assert len(truth) == 24 and set(truth[0]) == {"index", "intensity", "color"}
    assert truth[0]["color"] == [60, 60, 255]
    assert len(load_sequence(out)) == 24


def test_simulate_36fps_frame_count(tmp_path):
    cfg = sim_config(tmp_path, fps=36, duration=30.0)
    data = json.loads(cfg.read_text())
    data["scene"]["resolution"] = [64, 48]
    data["scene"].update({"car_box": [16, 20, 48, 40], "flasher_position": [32, 30],
                          "flasher_radius": 10})
    write_json(cfg, data)
    assert main(["simulate", str(cfg), str(tmp_path / "t")]) == 0
    assert json.loads((tmp_path / "t" / "manifest.json").read_text())["count"] == 1080


def test_simulate_negative_frequency(tmp_path, capsys):
    cfg = sim_config(tmp_path, freq=-1.0)
    assert main(["simulate", str(cfg), str(tmp_path / "v")]) == 2
    assert "frequency_hz" in capsys.readouterr().err


def test_simulate_bad_json_and_missing_file(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    assert main(["simulate", str(tmp_path / "bad.json"), str(tmp_path / "v")]) == 2
    assert main(["simulate", str(tmp_path / "missing.json"), str(tmp_path / "v")]) == 3


def test_simulate_seed_determinism(tmp_path):
    cfg = json.loads(sim_config(tmp_path, duration=0.5).read_text())
    cfg["camera"]["noise_sigma"] = 4.0
    path = write_json(tmp_path / "noisy.json", cfg)
    for name in ("a", "b"):
        assert main(["--seed", "42", "simulate", str(path), str(tmp_path / name)]) == 0
    for p in sorted((tmp_path / "a").glob("*.ppm")):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


# -- analyze -----------------------------------------------------------------------

def test_analyze_flashing_video(flashing_video, tmp_path):
    out = tmp_path / "analysis"
    assert main(["analyze", str(flashing_video), str(out), "--seed", "1"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert list(report["metrics"]) == ["average", "minimum", "maximum", "range",
                                       "above_0.5", "above_0.6", "above_0.7", "above_0.8"]
    assert abs(report["dominant_peak"]["frequency_hz"] - 1.3) <= max(0.1, 24 / 240)
    assert report["histogram_shift_l1"] > 0
    assert set(report["provenance"]) >= {"input", "backend", "seed", "tool_version"}
    assert (out / "signal.csv").read_text().splitlines()[0] == "index,timestamp_ms,confidence"
    assert (out / "spectrum.csv").read_text().splitlines()[0] == "frequency_hz,magnitude"
    assert (out / "loss_curve.csv").read_text().splitlines()[0] == "threshold,fraction"
    assert len((out / "loss_curve.csv").read_text().splitlines()) == 102


def test_analyze_flasher_off(tmp_path):
    video = tmp_path / "off"
    assert main(["simulate", str(sim_config(tmp_path, mode="SteadyOff")), str(video)]) == 0
    assert main(["analyze", str(video), str(tmp_path / "a")]) == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["dominant_peak"] == "NoPeak"


def test_analyze_external_backend_matches_reference(flashing_video, tmp_path):
    box = json.loads((flashing_video / "simulation.json").read_text())["ground_truth_car_box"]
    backend = write_json(tmp_path / "ext.json", {"kind": "external",
                                                 "cmd": WORKER_CMD + ["--car-box", *map(str, box)]})
    assert main(["analyze", str(flashing_video), str(tmp_path / "ext"), "--backend", str(backend)]) == 0
    assert main(["analyze", str(flashing_video), str(tmp_path / "ref")]) == 0
    ext = json.loads((tmp_path / "ext" / "report.json").read_text())
    ref = json.loads((tmp_path / "ref" / "report.json").read_text())
    assert ext["metrics"] == ref["metrics"]


def test_analyze_no_target_exit_4(flashing_video, tmp_path):
    assert main(["analyze", str(flashing_video), str(tmp_path / "a"), "--class", "pedestrian"]) == 4


def test_analyze_too_short_exit_4(tmp_path):
    video = tmp_path / "short"
    assert main(["simulate", str(sim_config(tmp_path, duration=0.5)), str(video)]) == 0
    assert main(["analyze", str(video), str(tmp_path / "a")]) == 4


def test_analyze_backend_failure_exit_5(flashing_video, tmp_path):
    backend = write_json(tmp_path / "ext.json", {"kind": "external",
                                                 "cmd": [sys.executable, "-c", "import sys; sys.exit(1)"]})
    assert main(["analyze", str(flashing_video), str(tmp_path / "a"), "--backend", str(backend)]) == 5


def test_analyze_directory_of_videos(tmp_path):
    root = tmp_path / "videos"
    for name, freq in (("slow", 1.0), ("fast", 2.0)):
        assert main(["simulate", str(sim_config(tmp_path, freq=freq, duration=8.0)), str(root / name)]) == 0
    assert main(["analyze", str(root), str(tmp_path / "out")]) == 0
    for name, freq in (("slow", 1.0), ("fast", 2.0)):
        rep = json.loads((tmp_path / "out" / name / "report.json").read_text())
        assert abs(rep["dominant_peak"]["frequency_hz"] - freq) <= 0.125


def test_analyze_missing_video(tmp_path):
    assert main(["analyze", str(tmp_path / "nothing"), str(tmp_path / "a")]) == 3


def test_report_roundtrip(flashing_video, tmp_path):
    main(["analyze", str(flashing_video), str(tmp_path / "a")])
    text = (tmp_path / "a" / "report.json").read_text()
    report = AnalysisReport.from_json(text)
    assert AnalysisReport.from_json(report.to_json()) == report
    assert json.loads(report.to_json()) == json.loads(text)


# -- compare -----------------------------------------------------------------------

def test_improvement_anchors():
    assert round(improvement_pct(0.50, 0.71), 2) == 42.0
    assert round(improvement_pct(0.63, 0.80), 2) == 26.98


def test_compare_identical(tmp_path, capsys):
    path = tmp_path / "r.json"
    path.write_text(make_report(0.5).to_json())
    assert main(["compare", str(path), str(path), "--out", str(tmp_path / "cmp")]) == 0
    table = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert all(r["delta"] == 0 for r in table["rows"])
    assert "Average Confidence" in capsys.readouterr().out


def test_compare_improvement(tmp_path):
    (tmp_path / "a.json").write_text(make_report(0.50).to_json())
    (tmp_path / "b.json").write_text(make_report(0.71).to_json())
    assert main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--out", str(tmp_path / "c")]) == 0
    rows = json.loads((tmp_path / "c" / "comparison.json").read_text())["rows"]
    avg = next(r for r in rows if r["metric"] == "average")
    assert avg["improvement_pct"] == 42.0


def test_compare_schema_mismatch(tmp_path):
    (tmp_path / "a.json").write_text(make_report(0.5).to_json())
    bad = json.loads(make_report(0.5).to_json())
    del bad["metrics"]["above_0.7"]
    write_json(tmp_path / "b.json", bad)
    assert main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == 2


# -- augment / bench / pipeline-run ------------------------------------------------

def test_augment_counts(tmp_path, capsys):
    src = tmp_path / "in"
    src.mkdir()
    write_ppm(src / "d.ppm", Frame.filled(64, 48, (200, 200, 200)))
    write_ppm(src / "n1.ppm", Frame.filled(64, 48, (10, 10, 10)))
    write_ppm(src / "n2.ppm", Frame.filled(64, 48, (30, 20, 10)))
    assert main(["augment", str(src), str(tmp_path / "out"), "--seed", "3"]) == 0
    assert json.loads(capsys.readouterr().out) == {"day": 1, "night": 2, "augmented": 2, "skipped": 0}
    log = json.loads((tmp_path / "out" / "augmentation_log.json").read_text())
    assert sum(e["classification"] == "Night" for e in log) == 2


def test_augment_empty_dir(tmp_path):
    (tmp_path / "in").mkdir()
    assert main(["augment", str(tmp_path / "in"), str(tmp_path / "out")]) == 3


PIPELINE = {"denoiser": {"kind": "chroma_clamp"}, "raw_detector": {"kind": "reference"},
            "tuned_detector": {"kind": "reference"},
            "combiner": {"iou_threshold": 0.5, "class_match": True}}


def test_bench(flashing_video, tmp_path, capsys):
    cfg = write_json(tmp_path / "pipeline.json", PIPELINE)
    base = write_json(tmp_path / "base.json", {"raw_detector": {"kind": "reference"}, "name": "adas"})
    assert main(["bench", str(cfg), str(flashing_video), "--repetitions", "1", "--max-frames", "100",
                 "--baseline", str(base), "--out", str(tmp_path / "b")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["samples"] == 100
    assert rep["fps"] == pytest.approx(1000 / rep["stages"]["total_ms"]["mean"])
    assert rep["baseline"] == "adas" and rep["overhead_pct"] is not None
    assert json.loads((tmp_path / "b" / "latency.json").read_text()) == rep


def test_bench_rejects_zero_repetitions(flashing_video, tmp_path):
    cfg = write_json(tmp_path / "pipeline.json", PIPELINE)
    assert main(["bench", str(cfg), str(flashing_video), "--repetitions", "0"]) == 2


def test_bench_unknown_kind(flashing_video, tmp_path):
    cfg = write_json(tmp_path / "pipeline.json", {"raw_detector": {"kind": "yolo9000"}})
    assert main(["bench", str(cfg), str(flashing_video)]) == 2


def test_pipeline_run_improves_on_raw(flashing_video, tmp_path):
    cfg = write_json(tmp_path / "pipeline.json", PIPELINE)
    assert main(["pipeline-run", str(cfg), str(flashing_video), str(tmp_path / "p")]) == 0
    assert main(["analyze", str(flashing_video), str(tmp_path / "raw")]) == 0
    cara = json.loads((tmp_path / "p" / "report.json").read_text())["metrics"]
    raw = json.loads((tmp_path / "raw" / "report.json").read_text())["metrics"]
    assert cara["average"] > raw["average"]
    assert cara["minimum"] >= raw["minimum"]
    dets = json.loads((tmp_path / "p" / "detections.json").read_text())
    assert len(dets) == 240 and all(len(d) == 1 for d in dets)


def test_pipeline_run_external_denoiser(flashing_video, tmp_path):
    spec = dict(PIPELINE, denoiser={"kind": "external", "cmd": WORKER_CMD + ["--denoiser", "chroma_clamp"]})
    cfg = write_json(tmp_path / "pipeline.json", spec)
    assert main(["pipeline-run", str(cfg), str(flashing_video), str(tmp_path / "ext")]) == 0
    assert main(["pipeline-run", str(write_json(tmp_path / "p2.json", PIPELINE)), str(flashing_video),
                 str(tmp_path / "int")]) == 0
    assert (json.loads((tmp_path / "ext" / "report.json").read_text())["metrics"]
            == json.loads((tmp_path / "int" / "report.json").read_text())["metrics"])


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "flarebench.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("simulate", "augment", "analyze", "compare", "bench", "pipeline-run"):
        assert verb in res.stdout


def test_unknown_verb():
    assert main(["explode"]) == 2
