import csv
import subprocess
import sys

import numpy as np
import pytest

from panosim.cli import main
from panosim.manifest import load_manifest
from panosim.simulator import RESULT_FIELDS, SUMMARY_FIELDS
from panosim.traces import load_network_trace, load_video_descriptor, load_viewpoint_trace


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen", "--duration", "8", "--users", "2", "--history", "3", "--seed", "5", "--out", str(out)]) == 0
    prep = out / "prep"
    assert main(["prepare", "--video", str(out / "video.csv"), "--viewpoint", *map(str, sorted(
        (out / "history").glob("*.csv"))), "--out", str(prep)]) == 0
    return out


def test_gen_files_loadable(data, capsys):
    video = load_video_descriptor(data / "video.csv")
    assert video.num_chunks == 8
    assert load_viewpoint_trace(data / "viewpoint.csv").end >= 7.9
    assert load_network_trace(data / "network.csv").mean_bps() == pytest.approx(1e6)


def test_gen_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["gen", "--duration", "3", "--seed", "9", "--out", str(tmp_path / d)]) == 0
    assert "seed 9" in capsys.readouterr().out
    for name in ("video.csv", "video.json", "viewpoint.csv", "network.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_chunk_count(tmp_path):
    assert main(["gen", "--scene", "tracked-object", "--duration", "30", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "video.csv")
    assert len({r["chunk"] for r in rows}) == 30


def test_prepare_default_thirty_tiles(data, capsys):
    rows = read_csv(data / "prep" / "tiling.csv")
    assert len(rows) == 30 and {r["chunk"] for r in rows} == {"-1"}
    assert load_manifest(data / "prep" / "manifest.pano").num_tiles == 30


def test_prepare_single_tile(data, tmp_path, capsys):
    assert main(["prepare", "--video", str(data / "video.csv"), "--viewpoint", str(data / "viewpoint.csv"),
                 "--n-tiles", "1", "--json", "--out", str(tmp_path)]) == 0
    assert "1 tiles" in capsys.readouterr().out
    assert load_manifest(tmp_path / "manifest.pano").num_tiles == 1
    assert (tmp_path / "manifest.json").exists()


def test_prepare_rejects_bad_n(data, tmp_path, capsys):
    code = main(["prepare", "--video", str(data / "video.csv"), "--viewpoint", str(data / "viewpoint.csv"),
                 "--n-tiles", "289", "--out", str(tmp_path)])
    assert code == 1 and "n-tiles" in capsys.readouterr().err


def simulate(data, out, *extra):
    return main(["simulate", "--video", str(data / "video.csv"), "--network", str(data / "network.csv"),
                 "--manifest", str(data / "prep" / "manifest.pano"), "--out", str(out), *extra])


def test_simulate_one_row(data, tmp_path):
    assert simulate(data, tmp_path, "--viewpoint", str(data / "viewpoint.csv"), "--scheme", "pano") == 0
    rows = read_csv(tmp_path / "results.csv")
    assert len(rows) == 1 and rows[0]["scheme"] == "pano"
    assert tuple(rows[0]) == RESULT_FIELDS


def test_simulate_matrix_and_report(data, tmp_path, capsys):
    views = [str(data / "viewpoint.csv"), str(data / "viewpoint_1.csv")]
    assert simulate(data, tmp_path, "--viewpoint", *views, "--workers", "2", "--timeline") == 0
    rows = read_csv(tmp_path / "results.csv")
    assert len(rows) == 6
    summary = read_csv(tmp_path / "summary.csv")
    assert len(summary) == 3 and tuple(summary[0]) == SUMMARY_FIELDS
    assert len(read_csv(tmp_path / "timeline.csv")) == 6 * 8

    report = tmp_path / "report"
    assert main(["report", "--results", str(tmp_path), "--out", str(report)]) == 0
    assert "viewport_uniform" in capsys.readouterr().out
    for s in read_csv(report / "summary.csv"):
        group = [r for r in rows if r["scheme"] == s["scheme"]]
        for f in ("pspnr_db", "bandwidth_bps", "buffering_ratio", "mos"):
            assert float(s[f]) == pytest.approx(np.mean([float(g[f]) for g in group]), abs=1e-9)
    assert len(read_csv(report / "plot.csv")) == 6


def test_simulate_idempotent(data, tmp_path):
    args = ["--viewpoint", str(data / "viewpoint.csv"), "--seed", "3"]
    assert simulate(data, tmp_path / "a", *args) == 0
    assert simulate(data, tmp_path / "b", *args) == 0
    assert simulate(data, tmp_path / "b", *args) == 0
    for name in ("results.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_missing_file(data, tmp_path, capsys):
    code = main(["simulate", "--video", str(data / "nope.csv"), "--viewpoint", str(data / "viewpoint.csv"),
                 "--network", str(data / "network.csv"), "--out", str(tmp_path)])
    assert code == 1 and "error" in capsys.readouterr().err


def test_pano_needs_manifest(data, tmp_path, capsys):
    code = main(["simulate", "--video", str(data / "video.csv"), "--viewpoint", str(data / "viewpoint.csv"),
                 "--network", str(data / "network.csv"), "--scheme", "pano", "--out", str(tmp_path)])
    assert code == 1 and "manifest" in capsys.readouterr().err


def test_compare_writes_json(data, tmp_path, capsys):
    code = main(["compare", "--video", str(data / "video.csv"), "--viewpoint", str(data / "viewpoint.csv"),
                 "--network", str(data / "network.csv"), "--manifest", str(data / "prep" / "manifest.pano"),
                 "--out", str(tmp_path)])
    assert code == 0 and "equal bandwidth" in capsys.readouterr().out
    assert (tmp_path / "comparison.json").exists()


@pytest.mark.parametrize("argv,code", [(["--help"], 0), (["simulate", "--help"], 0), (["gen", "--bogus"], 2),
                                       ([], 2), (["frobnicate"], 2)])
def test_help_and_unknown_flags(argv, code):
    proc = subprocess.run([sys.executable, "-m", "panosim", *argv], capture_output=True, text=True)
    assert proc.returncode == code
    if code == 0:
        assert "usage" in proc.stdout


def test_log_env(data, tmp_path):
    env = {"PANO_LOG": "DEBUG", "PATH": ""}
    proc = subprocess.run([sys.executable, "-m", "panosim", "prepare", "--video", str(data / "video.csv"),
                           "--viewpoint", str(data / "viewpoint.csv"), "--n-tiles", "4", "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "tiling ready" in proc.stderr
