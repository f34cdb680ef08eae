import subprocess
import sys

import numpy as np
import pytest

from thermoseed.cli import main
from thermoseed.frameio import load_raw_frame


@pytest.fixture(scope="module")
def rendered(tmp_path_factory):
    out = tmp_path_factory.mktemp("render")
    assert main(["render", "--spec", "plane", "--out", str(out), "--seed", "2"]) == 0
    return out


def _frames(d):
    return [str(d / f"frame_{k:03d}.pgm") for k in range(3)]


def _depths(d, ext=".npy"):
    return [str(d / f"depth_{k:03d}{ext}") for k in range(3)]


def test_render_outputs(rendered):
    names = {p.name for p in rendered.iterdir()}
    assert {"intrinsics.cfg", "poses.cfg", "frame_000.pgm", "depth_002.npy", "hot_001.pgm"} <= names
    f = load_raw_frame(rendered / "frame_000.pgm")
    assert f.counts.dtype == np.uint16 and f.shape == (64, 64)


def test_remap_writes_frames_and_profile(rendered, tmp_path, capsys):
    out = tmp_path / "mapped"
    assert main(["remap", str(rendered), str(out), "--glob", "frame_*.pgm"]) == 0
    assert sorted(p.name for p in out.glob("frame_*.pgm")) == ["frame_000.pgm", "frame_001.pgm", "frame_002.pgm"]
    assert [p.name for p in out.glob("*.csv")] == ["profile_000.csv"]
    assert "mode tctr" in capsys.readouterr().out
    assert main(["remap", str(rendered), str(tmp_path / "g"), "--glob", "frame_*.pgm",
                 "--group-size", "2", "--format", "png16"]) == 0
    assert len(list((tmp_path / "g").glob("profile_*.csv"))) == 2
    assert len(list((tmp_path / "g").glob("*.png"))) == 3


def test_histogram_stdout(rendered, capsys):
    assert main(["histogram", *_frames(rendered), "--bins", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6 and "np.float64" not in lines[1]


def test_loss_reports_terms(rendered, capsys):
    args = ["loss", *_frames(rendered), "--intrinsics", str(rendered / "intrinsics.cfg"),
            "--poses", str(rendered / "poses.cfg"), "--depths", *_depths(rendered)]
    assert main(args) == 0
    out = dict(line.split(" = ") for line in capsys.readouterr().out.strip().splitlines())
    assert {"l_total", "l_rec", "l_gc", "l_sm"} <= set(out)
    assert main(args[:-3] + _depths(rendered, ".pgm")) == 0


def test_loss_size_mismatch_names_files(rendered, tmp_path, capsys):
    small = tmp_path / "small.npy"
    np.save(small, np.full((32, 32), 5.0))
    depths = _depths(rendered)
    depths[1] = str(small)
    code = main(["loss", *_frames(rendered), "--intrinsics", str(rendered / "intrinsics.cfg"),
                 "--poses", str(rendered / "poses.cfg"), "--depths", *depths])
    err = capsys.readouterr().err
    assert code == 1 and "small.npy" in err and "frame_000.pgm" in err and len(err.splitlines()) == 1


def test_diff_and_enhance(rendered, tmp_path, capsys):
    fr = _frames(rendered)
    assert main(["diff", fr[0], fr[1], "--hot-mask", str(rendered / "hot_000.pgm"),
                 "--out", str(tmp_path / "d.png"), "--mode", "minmax"]) == 0
    out = capsys.readouterr().out
    assert "hot_loss_share = 0" in out and (tmp_path / "d.png").exists()
    mapped = tmp_path / "m"
    main(["remap", str(rendered), str(mapped), "--glob", "frame_*.pgm"])
    assert main(["enhance", str(mapped), str(tmp_path / "e")]) == 0
    assert len(list((tmp_path / "e").glob("*.pgm"))) == 3


def test_optimize_writes_trace(rendered, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    code = main(["optimize", *_frames(rendered), "--intrinsics", str(rendered / "intrinsics.cfg"),
                 "--poses", str(rendered / "poses.cfg"), "--gt-poses", str(rendered / "poses.cfg"),
                 "--depths", *_depths(rendered), "--perturb-deg", "1", "--max-iters", "2",
                 "--out", str(trace), "--depth-out", str(tmp_path / "d.npy")])
    assert code == 0
    assert "rot_err_deg" in capsys.readouterr().out
    assert trace.read_text().startswith("iteration,loss,tx")
    assert np.load(tmp_path / "d.npy").shape == (64, 64)


def test_ablate_row_count(tmp_path):
    csv = tmp_path / "r.csv"
    assert main(["ablate", "--spec", "hotspot", "--spec", "plane", "--seeds", "2",
                 "--max-iters", "1", "--out", str(csv)]) == 0
    assert len(csv.read_text().splitlines()) == 1 + 2 * 3 * 2


def test_usage_errors_exit_2(capsys):
    for argv in [[], ["remap"], ["loss", "a.pgm"], ["remap", "a", "b", "--format", "tiff"]]:
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 2


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["remap", "--help"])
    text = capsys.readouterr().out
    assert "(default: 30)" in text and "(default: tctr)" in text and "(default: pgm16)" in text


def test_config_precedence(rendered, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bins = 4\n")
    main(["histogram", *_frames(rendered), "--config", str(cfg)])
    assert len(capsys.readouterr().out.strip().splitlines()) == 5
    main(["histogram", *_frames(rendered), "--config", str(cfg), "--bins", "7"])
    assert len(capsys.readouterr().out.strip().splitlines()) == 8
    cfg.write_text("colour = red\n")
    assert main(["histogram", *_frames(rendered), "--config", str(cfg)]) == 1
    assert "unknown setting" in capsys.readouterr().err


def test_thread_cap_env(rendered, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("THERMOSEED_THREADS", "0")
    assert main(["remap", str(rendered), str(tmp_path / "x"), "--glob", "frame_*.pgm"]) == 1
    assert "THERMOSEED_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("THERMOSEED_THREADS", "3")
    assert main(["remap", str(rendered), str(tmp_path / "y"), "--glob", "frame_*.pgm"]) == 0


def test_missing_input_is_one_line_error(tmp_path, capsys):
    assert main(["histogram", str(tmp_path / "none.pgm")]) == 1
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "thermoseed", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("thermoseed")
