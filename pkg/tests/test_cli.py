import json

import numpy as np
import pytest

from videoalign.harness import io
from videoalign.harness.cli import (
    EXIT_MALFORMED,
    EXIT_MISSING_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_INVALID_VALUE,
    EXIT_USAGE,
    ExperimentConfig,
    UsageError,
    run_cli,
)

SMALL = ["--width", "16", "--height", "12"]


def run(capsys, *argv):
    code = run_cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert run_cli(["synth", "--frames", "6", "--seed", "3", *SMALL, "--window", "1", "--out", str(d)]) == EXIT_OK
    return d


def test_synth_layout(scene_dir):
    names = {p.name for p in scene_dir.iterdir()}
    assert {"scene.json", "gt", "mono", "pairs.bin", "corr.bin"} <= names
    meta = io.read_json(scene_dir / "scene.json")
    assert meta["spec"]["frame_count"] == 6 and meta["strategy"]["kind"] == "window"
    assert len(io.PairFile(scene_dir / "pairs.bin")) == 12
    assert len(io.read_depth_sequence(scene_dir / "gt")) == 6


def test_end_to_end_noiseless(tmp_path, capsys):
    d = tmp_path / "d"
    assert run(capsys, "synth", "--frames", 10, "--seed", 7, "--out", d)[0] == EXIT_OK
    code, out, err = run(capsys, "align", "--in", d, "--iters", 300, "--lr", 0.05, "--clip-length", 10)
    assert code == EXIT_OK, err
    assert json.loads(out)["pairs_evaluated"] == 90
    code, out, _ = run(capsys, "eval", "--in", d)
    assert code == EXIT_OK
    metrics = json.loads(out)
    assert metrics["abs_rel"] < 1e-6
    assert io.read_json(d / "metrics.json") == metrics


def test_hierarchical_log_reports_138(tmp_path, capsys):
    code, out, err = run(capsys, "align", "--strategy", "hierarchical", "--frames", 30, "--clip-length", 10, *SMALL, "--iters", 3, "--out", tmp_path)
    assert code == EXIT_OK, err
    assert "using 138 pairs (peak resident 45)" in err
    assert json.loads(out)["pairs_evaluated"] == 138


def test_eval_identical_inputs(scene_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--gt", scene_dir / "gt", "--pred", scene_dir / "gt", "--out", tmp_path / "m.json")
    assert code == EXIT_OK
    m = json.loads(out)
    assert m["abs_rel"] == pytest.approx(0.0, abs=1e-12) and m["delta_125"] == 1.0
    assert m["ate_m"] == pytest.approx(0.0, abs=1e-12)


def test_align_options(scene_dir, tmp_path, capsys):
    for extra in (["--scale-map"], ["--corr", scene_dir / "corr.bin", "--corr-weight", 1.0], ["--residual", "depth", "--strategy", "window", "--window", 1]):
        code, out, err = run(capsys, "align", "--in", scene_dir, "--iters", 10, "--out", tmp_path / "o", *extra)
        assert code == EXIT_OK, err
        assert json.loads(out)["final_energy"] >= 0
    state = io.read_state(tmp_path / "o" / "state.bin")
    assert state.frame_count == 6


def test_viz_outputs(scene_dir, tmp_path, capsys):
    assert run(capsys, "align", "--in", scene_dir, "--iters", 5, "--out", tmp_path)[0] == EXIT_OK
    code, out, err = run(capsys, "viz", "--in", tmp_path)
    assert code == EXIT_OK, err
    viz = tmp_path / "viz"
    assert len(list(viz.glob("*.png"))) == 6 and len(list(viz.glob("*.ply"))) == 6
    assert (viz / "trajectory.svg").read_text().lstrip().startswith(("<?xml", "<svg"))
    pts, _ = io.read_ply(next(viz.glob("*.ply")))
    assert np.isfinite(pts).all()


def test_usage_errors(capsys, tmp_path):
    for argv in (["align", "--bogus"], ["frobnicate"], ["align", "--in", tmp_path, "--frames", 4], ["align", "--frames", 4, *SMALL], ["eval"]):
        code, _, err = run(capsys, *argv)
        assert code == EXIT_USAGE, argv
        assert error_of(err)["exit_code"] == EXIT_USAGE
    with pytest.raises(UsageError):
        ExperimentConfig()


def test_missing_input(capsys, tmp_path):
    code, _, err = run(capsys, "align", "--in", tmp_path / "nope")
    assert code == EXIT_MISSING_INPUT
    assert "scene.json" in error_of(err)["message"]


def test_missing_edge_in_pair_file(scene_dir, capsys, tmp_path):
    code, _, err = run(capsys, "align", "--in", scene_dir, "--strategy", "window", "--window", 2, "--out", tmp_path)
    assert code == EXIT_MISSING_INPUT
    assert "no prediction for edge" in error_of(err)["message"]


def test_malformed_input(scene_dir, capsys, tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "scene.json").write_text((scene_dir / "scene.json").read_text())
    (d / "pairs.bin").write_bytes(b"VAPB\x01\x01")
    code, _, err = run(capsys, "align", "--in", d)
    assert code == EXIT_MALFORMED
    assert error_of(err)["error"] == "FormatError"


def test_invalid_value(capsys, tmp_path):
    code, _, _ = run(capsys, "align", "--frames", 4, *SMALL, "--iters", 0, "--out", tmp_path)
    assert code == EXIT_INVALID_VALUE


def test_numerical_failure(scene_dir, capsys, tmp_path):
    with np.errstate(all="ignore"):
        code, _, err = run(capsys, "align", "--in", scene_dir, "--lr", 1e6, "--out", tmp_path)
    assert code == EXIT_NUMERICAL
    assert error_of(err)["error"] == "DivergenceError"


def test_threads_flag(capsys, tmp_path):
    code, _, _ = run(capsys, "--threads", 1, "synth", "--frames", 2, *SMALL, "--window", 1, "--out", tmp_path)
    assert code == EXIT_OK
    assert run(capsys, "synth", "--threads", 0, "--frames", 2, "--out", tmp_path)[0] == EXIT_USAGE
