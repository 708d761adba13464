from __future__ import annotations

import numpy as np
import pytest

from taterec.errors import ConfigError, GeometryError
from taterec.elliptic import HarmonicExtender, build_source_series, extension_coefficient_identity_check, harmonic_extend
from taterec.fields import DomainSpec, Sinogram, build_observation_surface, make_grid
from taterec.spectral import analytic_rectangle_basis

UNIT = DomainSpec((0.0, 0.0), (1.0, 1.0))


def _setup(n):
    return make_grid(((0.0, 0.0), (1.0, 1.0)), n + 1), build_observation_surface(UNIT, n)


def _core(grid):
    # nodes a quarter side away from the corners, where linear interpolation
    # around the corner contributes only O(h^2)
    X, Y = grid.mesh()
    return (np.abs(X - 0.5) <= 0.25) & (np.abs(Y - 0.5) <= 0.25)


def test_constants_and_zero():
    grid, surf = _setup(16)
    assert np.all(harmonic_extend(np.zeros(surf.count), surf, grid).values == 0.0)
    np.testing.assert_allclose(harmonic_extend(np.ones(surf.count), surf, grid).values, 1.0, atol=1e-10)


def test_linear_and_bilinear_data():
    grid, surf = _setup(32)
    x, y = surf.positions.T
    X, Y = grid.mesh()
    ext = harmonic_extend(1 + x + 2 * y + 3 * x * y, surf, grid)
    assert ext.residual <= 1e-10
    exact = 1 + X + 2 * Y + 3 * X * Y
    np.testing.assert_allclose(ext.values[_core(grid)], exact[_core(grid)], atol=1e-4)
    # boundary values are linear interpolants of the samples, so they match
    # the data exactly away from corners
    side = harmonic_extend(x, surf, grid).values[1:-1, 0]
    np.testing.assert_allclose(side, grid.axis(0)[1:-1], atol=1e-14)


def test_maximum_principle():
    grid, surf = _setup(24)
    data = np.random.default_rng(3).standard_normal(surf.count)
    v = harmonic_extend(data, surf, grid).values
    assert v.max() <= data.max() + 1e-8 and v.min() >= data.min() - 1e-8


def test_smooth_harmonic_converges_at_second_order():
    errs = []
    for n in (16, 32, 64):
        grid, surf = _setup(n)
        x, y = surf.positions.T
        ext = harmonic_extend(np.exp(x) * np.cos(y), surf, grid)
        X, Y = grid.mesh()
        errs.append(np.max(np.abs(ext.values - np.exp(X) * np.cos(Y))[_core(grid)]))
    assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8


def test_cg_and_direct_agree():
    grid, surf = _setup(24)
    data = np.random.default_rng(0).standard_normal(surf.count)
    ext = HarmonicExtender(grid, surf)
    a, b = ext.extend(data, "cg"), ext.extend(data, "direct")
    np.testing.assert_allclose(a.values, b.values, atol=1e-8)
    many, res = ext.extend_many(np.column_stack([data, 2 * data]))
    np.testing.assert_allclose(many[1], 2 * b.values, atol=1e-12)
    assert res < 1e-12


def test_extension_input_validation():
    grid, surf = _setup(8)
    ext = HarmonicExtender(grid, surf)
    with pytest.raises(GeometryError):
        ext.extend(np.zeros(5))
    with pytest.raises(ConfigError):
        ext.extend(np.full(surf.count, np.nan))
    with pytest.raises(ConfigError):
        ext.extend(np.ones(surf.count), method="jacobi")
    assert np.all(ext.extend(np.zeros(surf.count)).values == 0.0)


def test_source_series_vanishes_for_linear_in_time_data():
    grid, surf = _setup(8)
    t = 0.1 * np.arange(6)
    g = Sinogram(surf, 0.1, np.outer(np.ones(surf.count), 1 + 2 * t))
    s = build_source_series(g, grid)
    assert np.allclose(s.second_difference, 0.0, atol=1e-10)
    assert np.allclose(s.project(analytic_rectangle_basis(UNIT, 3, grid, surf, trace_scheme="green")), 0.0, atol=1e-10)
    with pytest.raises(ConfigError):
        build_source_series(Sinogram(surf, 0.1, np.zeros((surf.count, 2))), grid)


def test_source_series_of_quadratic_in_time():
    grid, surf = _setup(8)
    t = 0.1 * np.arange(7)
    q = np.cos(surf.positions[:, 0]) + surf.positions[:, 1]
    s = build_source_series(Sinogram(surf, 0.1, np.outer(q, t ** 2)), grid)
    assert len(s) == 5
    ref = harmonic_extend(2 * q, surf, grid, method="direct").values
    for j in range(len(s)):
        np.testing.assert_allclose(s.field(j).values, ref, atol=1e-9)


def test_identity_in_1d_converges():
    dom = DomainSpec((0.0,), (1.0,))
    surf = build_observation_surface(dom)
    errs = []
    for n in (32, 64, 128):
        grid = make_grid(((0.0,), (1.0,)), n + 1)
        b = analytic_rectangle_basis(dom, 6, grid, surf, discrete=False, trace_scheme="exact")
        errs.append(extension_coefficient_identity_check(np.array([0.3, -1.2]), b).max())
    assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8


def test_identity_holds_exactly_for_green_traces():
    grid, surf = _setup(32)
    b = analytic_rectangle_basis(UNIT, 8, grid, surf, discrete=True, trace_scheme="green")
    x, y = surf.positions.T
    d = extension_coefficient_identity_check(np.sin(3 * x) + y ** 2, b)
    assert d.max() < 1e-12
