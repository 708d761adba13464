from __future__ import annotations

import numpy as np
import pytest

from taterec.errors import ConfigError, GeometryError
from taterec.fields import (
    Disk,
    DomainSpec,
    Gaussian,
    Grid,
    PhantomSpec,
    Ring,
    ScalarField,
    SineBox,
    SmoothBump,
    Sinogram,
    SoundSpeedField,
    build_observation_surface,
    make_grid,
    sample_phantom,
    sample_sound_speed,
)


def test_make_grid_nodes_are_exact_multiples():
    g = make_grid(((-0.5, -0.5), (1.5, 1.5)), 201)
    assert g.spacing == (0.01, 0.01)
    assert g.axis(0)[150] == -0.5 + 150 * 0.01
    assert g.upper == pytest.approx((1.5, 1.5), abs=1e-14)


@pytest.mark.parametrize("counts", [2, (5, 1)])
def test_grid_rejects_too_few_nodes(counts):
    with pytest.raises(GeometryError):
        make_grid(((0, 0), (1, 1)), counts)


def test_grid_rejects_bad_spacing():
    with pytest.raises(GeometryError):
        Grid((0.0,), (0.0,), (5,))


def test_domain_node_grid_and_alignment():
    g = make_grid(((-0.5, -0.5), (1.5, 1.5)), 201)
    dom = DomainSpec((0, 0), (1, 1))
    sub = dom.node_grid(g)
    assert sub.counts == (101, 101)
    assert sub.origin == pytest.approx((0.0, 0.0), abs=1e-15)
    with pytest.raises(GeometryError):
        DomainSpec((0.003, 0), (1, 1)).node_slices(g)


def test_degenerate_domain():
    with pytest.raises(GeometryError):
        DomainSpec((0, 0), (0, 1))


def test_gaussian_is_continuous_and_compact():
    g = Gaussian((0.0,), 0.1, cutoff=3.0)
    r = np.array([0.0, 0.2999999, 0.3, 0.31])
    v = g.evaluate((r,))
    assert v[0] == pytest.approx(1.0 - np.exp(-4.5))
    assert v[1] == pytest.approx(0.0, abs=1e-6)
    assert v[2] == pytest.approx(0.0, abs=1e-15) and v[3] == 0.0


def test_primitive_evaluations():
    x = np.array([0.0, 0.5, 0.99, 1.01])
    assert list(Disk((0.0,), 1.0, 2.0).evaluate((x,))) == [2.0, 2.0, 2.0, 0.0]
    b = SmoothBump((0.0,), 1.0).evaluate((x,))
    assert b[0] == 1.0 and b[-1] == 0.0 and 0 < b[2] < 1e-10
    ring = Ring((0.0,), 0.5, 0.1).evaluate((np.array([0.5, 0.0]),))
    assert ring[0] == 1.0 and ring[1] == 0.0
    s = SineBox((0.0,), (1.0,), (2,)).evaluate((np.array([0.25, 1.5]),))
    assert s[0] == pytest.approx(1.0) and s[1] == 0.0


def test_phantom_sum_and_mirror_symmetry():
    g = make_grid(((0, 0), (1, 1)), 41)
    spec = PhantomSpec((Gaussian((0.5, 0.5), 0.1),)) + PhantomSpec((Disk((0.5, 0.5), 0.21, 0.5),))
    assert len(spec) == 2
    v = sample_phantom(spec, g).values
    assert v.max() == pytest.approx(1.5 - np.exp(-12.5))
    # node coordinates are rounded, so mirror images agree to rounding only
    np.testing.assert_allclose(v, v[::-1, :], atol=1e-14)
    np.testing.assert_allclose(v, v.T, atol=0)


def test_sound_speed_checks():
    g = make_grid(((0, 0), (1, 1)), 41)
    c = sample_sound_speed(PhantomSpec((SmoothBump((0.5, 0.5), 0.2, 0.3),)), g, center=(0.5, 0.5))
    assert c.c_max == pytest.approx(1.3) and c.c_min == 1.0
    assert c.radius == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        sample_sound_speed(PhantomSpec((SmoothBump((0.5, 0.5), 0.2, -1.0),)), g)
    bad = np.ones(g.shape)
    bad[0, 0] = 2.0
    with pytest.raises(ConfigError):
        SoundSpeedField(g, bad, 0.1, (0.5, 0.5))
    assert SoundSpeedField.constant(g).is_constant


def test_scalar_field_shape_check():
    g = make_grid(((0,), (1,)), 11)
    with pytest.raises(GeometryError):
        ScalarField(g, np.zeros(10))


def test_observation_surface_midpoints():
    dom = DomainSpec((0, 0), (2, 1))
    s = build_observation_surface(dom, 4)
    assert s.count == 16
    assert s.weights.sum() == pytest.approx(dom.perimeter)
    arc = s.arc_parameter()
    assert np.all(np.diff(arc) > 0) and arc[-1] < dom.perimeter
    s1 = build_observation_surface(DomainSpec((0,), (1,)))
    assert s1.count == 2 and list(s1.arc_parameter()) == [0.0, 1.0]


def test_sinogram_validation():
    s = build_observation_surface(DomainSpec((0, 0), (1, 1)), 3)
    with pytest.raises(GeometryError):
        Sinogram(s, 0.1, np.zeros((5, 4)))
    with pytest.raises(ConfigError):
        Sinogram(s, 0.1, np.full((12, 4), np.nan))
    sino = Sinogram(s, 0.1, np.zeros((12, 4)))
    assert sino.t_max == pytest.approx(0.3) and sino.values.flags.writeable is False
