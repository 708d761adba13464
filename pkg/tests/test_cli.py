from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from taterec.cli import main
from taterec.fileio import read_field, read_sinogram, sha256_file

SMALL = """
[grid]
extent = -0.5 -0.5 1.5 1.5
counts = 61
domain = 0 0 1 1

[phantom]
type = gaussian
center = 0.5 0.5
width = 0.1
cutoff = 3

[speed]
type = bump
center = 0.5 0.5
radius = 0.3
amp = 0.2

[eigen]
K = auto

[rays]
positions = 3
directions = 4
t_escape = 10
trajectories = 3

[reconstruct]
kernel_points = 4
"""


def _run(capsys, *argv):
    code = main(list(argv))
    lines = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(lines[-1])


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def _manifest(out):
    with open(out / "manifest.csv") as fh:
        return {r["file"]: r for r in csv.DictReader(fh)}


def test_pipeline_writes_report_and_manifest(tmp_path, cfg, capsys):
    out = tmp_path / "run"
    code, status = _run(capsys, "pipeline", "--config", str(cfg), "--out", str(out))
    assert code == 0 and status["status"] == "ok" and status["command"] == "pipeline"
    res = status["result"]
    assert res["verdict"] == "non-trapping (empirical)" and res["K"] >= 10
    assert res["checks"]["operator vs second_derivative relative"] < 1e-9
    man = _manifest(out)
    for name in ("phantom.tatf", "speed.pgm", "sinogram.tats", "energy.csv", "rays.txt", "rays.png",
                 "basis.tatb", "eigen.csv", "reconstruction.tatf", "reconstruction.png", "error_report.csv"):
        assert name in man, name
    for name, row in man.items():
        assert sha256_file(out / name) == row["sha256"] and (out / name).stat().st_size == int(row["bytes"])
    assert "report.json" not in man and (out / "report.json").is_file()
    assert read_field(out / "reconstruction.tatf").grid.counts == (31, 31)
    assert read_sinogram(out / "sinogram.tats").surface.count == 120


def test_reruns_are_byte_identical(tmp_path, cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "pipeline", "--config", str(cfg), "--out", str(a))[0] == 0
    assert _run(capsys, "pipeline", "--config", str(cfg), "--out", str(b))[0] == 0
    ma, mb = _manifest(a), _manifest(b)
    assert {k: v["sha256"] for k, v in ma.items()} == {k: v["sha256"] for k, v in mb.items()}


@pytest.mark.parametrize("command", ["phantom", "speed", "simulate", "rays", "eigen", "reconstruct"])
def test_single_stages(tmp_path, cfg, capsys, command):
    out = tmp_path / command
    code, status = _run(capsys, command, "--config", str(cfg), "--out", str(out))
    assert code == 0, status
    assert (out / "manifest.csv").is_file()


def test_config_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL + "\n[solver]\nspeed_of_light = 3\n")
    code = main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o")])
    io = capsys.readouterr()
    status = json.loads(io.out.strip().splitlines()[-1])
    assert code == 2 and status["error"] == "ConfigError" and "speed_of_light" in io.err


def test_numerical_error_exit_3(tmp_path, capsys):
    bad = tmp_path / "cfl.cfg"
    bad.write_text(SMALL + "\n[solver]\ndt = 0.5\n")
    code, status = _run(capsys, "simulate", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert code == 3 and status["error"] == "CFLError"


def test_format_error_exit_4(tmp_path, capsys):
    (tmp_path / "junk.tats").write_bytes(b"TATS\x01\x00garbage")
    bad = tmp_path / "fmt.cfg"
    bad.write_text(SMALL + "\n[inputs]\nsinogram = junk.tats\n")
    code, status = _run(capsys, "reconstruct", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert code == 4 and status["error"] == "FormatError"


def test_module_entry_point(tmp_path, cfg):
    proc = subprocess.run(
        [sys.executable, "-m", "taterec", "phantom", "--config", str(cfg), "--out", str(tmp_path / "m")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout.strip().splitlines()[-1])["status"] == "ok"
