from __future__ import annotations

import numpy as np
import pytest

from taterec.errors import NumericalError
from taterec.fields import DomainSpec, ScalarField, Sinogram, build_observation_surface, make_grid
from taterec.plotting import pgm_bytes, plot_energy, plot_field, plot_sinogram, render_pgm, save_figure


def _parse(blob: bytes):
    head, _, rest = blob.partition(b"\n")
    assert head == b"P5"
    lines = rest.split(b"\n", 3)
    assert lines[0].startswith(b"# scaling")
    w, h = map(int, lines[1].split())
    assert lines[2] == b"255"
    return w, h, np.frombuffer(lines[3], dtype=np.uint8).reshape(h, w), lines[0].decode()


def test_minmax_layout_and_orientation():
    v = np.zeros((4, 3))
    v[3, 0] = 1.0  # last index along x, first along y
    w, h, img, note = _parse(pgm_bytes(v))
    assert (w, h) == (4, 3)
    assert img[0, 3] == 255 and img.sum() == 255
    assert "lo=0 hi=1" in note


def test_symmetric_zero_scaling():
    v = np.array([[-2.0, 0.0, 1.0]])
    *_, img, note = _parse(pgm_bytes(v.reshape(3, 1), "symmetric-zero"))
    assert list(img[0]) == [1, 128, 192] and "absmax=2" in note


@pytest.mark.parametrize("scaling", ["minmax", "symmetric-zero"])
def test_constant_field_is_mid_grey(scaling):
    *_, img, _ = _parse(pgm_bytes(np.full((5, 5), 3.0), scaling))
    assert np.all(img == 128)


def test_non_finite_raises_before_writing(tmp_path):
    v = np.ones((3, 3))
    v[1, 1] = np.nan
    with pytest.raises(NumericalError):
        render_pgm(v, tmp_path / "x.pgm")
    assert not (tmp_path / "x.pgm").exists()
    with pytest.raises(ValueError):
        pgm_bytes(np.ones(4))
    with pytest.raises(ValueError):
        pgm_bytes(np.ones((2, 2)), "log")


def test_render_field_object(tmp_path):
    g = make_grid(((0, 0), (1, 1)), (6, 4))
    render_pgm(ScalarField(g, np.arange(24.0).reshape(6, 4)), tmp_path / "f.pgm")
    w, h, img, _ = _parse((tmp_path / "f.pgm").read_bytes())
    assert (w, h) == (6, 4) and img[0, 0] == 0 and img[-1, -1] == 255


def test_figures_written_and_reproducible(tmp_path):
    g = make_grid(((0, 0), (1, 1)), 21)
    X, Y = g.mesh()
    f = ScalarField(g, np.sin(3 * X) * Y)
    dom = DomainSpec((0, 0), (1, 1))
    for name in ("a.png", "b.png"):
        save_figure(plot_field(f, "f", dom), tmp_path / name)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    surf = build_observation_surface(dom, 4)
    save_figure(plot_sinogram(Sinogram(surf, 0.1, np.random.default_rng(0).standard_normal((16, 9)))), tmp_path / "s.png")
    t = np.linspace(0, 1, 20)
    save_figure(plot_energy(t, np.exp(-5 * t), [(0.5, "decay")]), tmp_path / "e.png")
    assert all((tmp_path / n).stat().st_size > 0 for n in ("s.png", "e.png"))
