from __future__ import annotations

from importlib import resources

import pytest

from taterec.config import load_config, parse_config, parse_primitive_spec
from taterec.errors import ConfigError
from taterec.fields import Disk, Gaussian, SmoothBump

FIXTURES = sorted(p.name for p in resources.files("taterec.fixtures").iterdir() if p.name.endswith(".cfg"))

BASE = """
[grid]
extent = -0.5 -0.5 1.5 1.5
counts = 41
domain = 0 0 1 1

[phantom]
type = gaussian
center = 0.5, 0.5
width = 0.1
"""


def test_packaged_fixtures_parse():
    assert {"gauss2d.cfg", "variable2d.cfg", "disk2d.cfg", "sine1d.cfg", "trapping.cfg"} <= set(FIXTURES)
    for name in FIXTURES:
        with resources.as_file(resources.files("taterec.fixtures") / name) as path:
            cfg = load_config(path, env={})
        assert len(cfg.phantom) >= 1, name


def test_defaults_and_values():
    cfg = parse_config(BASE, env={})
    assert cfg.solver.cfl == 0.5 and cfg.eigen.trace == "green" and cfg.eigen.K == "auto"
    (g,) = cfg.phantom.primitives
    assert g == Gaussian((0.5, 0.5), 0.1)
    grid, domain = cfg.grid.build()
    assert grid.counts == (41, 41) and domain.sides == (1.0, 1.0)
    assert cfg.grid.n_per_side(grid, domain) == 20


def test_labelled_primitives_and_kind_alias():
    text = BASE + "\n[phantom.extra]\nkind = disk\ncenter = 0.3 0.3\nradius = 0.1\n\n[speed]\nkind = bump\ncenter = 0.5 0.5\nradius = 0.2\namp = 0.3\n"
    cfg = parse_config(text, env={})
    assert isinstance(cfg.phantom.primitives[1], Disk)
    assert cfg.speed.primitives == (SmoothBump((0.5, 0.5), 0.2, 0.3),)


@pytest.mark.parametrize(
    "extra",
    [
        "[solver]\ncfl_number = 0.3\n",
        "[solvers]\ncfl = 0.3\n",
        "[solver]\ncfl = fast\n",
        "[solver]\ncfl = 1.5\n",
        "[solver]\ndata = dalembert\n",
        "[eigen]\ntrace = spectral\n",
        "[phantom.b]\ntype = gaussian\nkind = gaussian\ncenter = 0 0\nwidth = 1\n",
        "[phantom.b]\ntype = blob\n",
        "[phantom.b]\ntype = disk\ncenter = 0.5 0.5\n",
        "[phantom.b]\ntype = disk\ncenter = 0.5 0.5\nradius = 0.1\ncolour = red\n",
        "[run]\nseed = 1\nsalt = 2\n",
        "[inputs]\nbasis = missing.tatb\n",
    ],
)
def test_strict_errors(extra):
    with pytest.raises(ConfigError):
        parse_config(BASE + "\n" + extra, env={})


def test_duplicate_keys_rejected():
    with pytest.raises(ConfigError):
        parse_config(BASE + "\n[solver]\ncfl = 0.3\ncfl = 0.4\n", env={})


def test_environment_overrides():
    env = {"TATEREC_SOLVER_CFL": "0.125", "TATEREC_EIGEN_K": "12", "TATEREC_PHANTOM_WIDTH": "0.2", "HOME": "/x"}
    cfg = parse_config(BASE, env=env)
    assert cfg.solver.cfl == 0.125 and cfg.eigen.K == 12
    assert cfg.phantom.primitives[0].width == 0.2
    with pytest.raises(ConfigError):
        parse_config(BASE, env={"TATEREC_NOWHERE_X": "1"})


def test_inputs_resolve_relative_to_config(tmp_path):
    (tmp_path / "b.tatb").write_bytes(b"")
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(BASE + "\n[inputs]\nbasis = b.tatb\n")
    cfg = load_config(cfg_path, env={})
    assert cfg.inputs.basis == str(tmp_path / "b.tatb")


def test_standalone_primitive_spec(tmp_path):
    spec = "[bump]\nkind = gaussian\ncenter = 0.5,0.5\nwidth = 0.1\n\n[hole]\nkind = disk\ncenter = 0.4 0.4\nradius = 0.05\namp = -0.5\n"
    parsed = parse_primitive_spec(spec)
    assert parsed.primitives == (Gaussian((0.5, 0.5), 0.1), Disk((0.4, 0.4), 0.05, -0.5))
    (tmp_path / "p.ini").write_text(spec)
    text = BASE.split("[phantom]")[0] + "[inputs]\nphantom_spec = p.ini\n"
    (tmp_path / "run.cfg").write_text(text)
    assert load_config(tmp_path / "run.cfg", env={}).phantom == parsed


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.cfg", env={})


def test_as_dict_and_with_output():
    cfg = parse_config(BASE, env={}).with_output("elsewhere")
    d = cfg.as_dict()
    assert d["output"]["dir"] == "elsewhere" and d["solver"]["cfl"] == 0.5 and len(d["phantom"]) == 1
