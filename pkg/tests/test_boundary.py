from __future__ import annotations

import numpy as np
import pytest

from taterec.boundary import bilinear_matrix, boundary_loop, check_on_grid_lines
from taterec.errors import GeometryError
from taterec.fields import DomainSpec, build_observation_surface, make_grid

UNIT = DomainSpec((0.0, 0.0), (1.0, 1.0))


def test_bilinear_reproduces_bilinear_functions():
    g = make_grid(((0, 0), (1, 1)), 11)
    X, Y = g.mesh()
    v = (1 + 2 * X - Y + 3 * X * Y).ravel()
    pts = np.random.default_rng(0).uniform(0, 1, (20, 2))
    got = bilinear_matrix(g, pts) @ v
    np.testing.assert_allclose(got, 1 + 2 * pts[:, 0] - pts[:, 1] + 3 * pts[:, 0] * pts[:, 1], atol=1e-13)
    with pytest.raises(GeometryError):
        bilinear_matrix(g, [[1.5, 0.5]])


def test_loop_orders_boundary_nodes_counter_clockwise():
    g = make_grid(((0, 0), (1, 1)), 9)
    loop = boundary_loop(g, build_observation_surface(UNIT, 8))
    assert loop.count == 32 and loop.corner.sum() == 4
    assert np.all(np.diff(loop.arc) > 0) and loop.arc[0] == 0.0
    # interpolation matrices preserve constants
    np.testing.assert_allclose(loop.to_nodes @ np.ones(32), 1.0)
    np.testing.assert_allclose(loop.to_detectors @ np.ones(32), 1.0)


def test_detectors_must_sit_on_grid_lines():
    surf = build_observation_surface(UNIT, 10)
    check_on_grid_lines(make_grid(((-0.5, -0.5), (1.5, 1.5)), 201), surf)
    with pytest.raises(GeometryError):
        check_on_grid_lines(make_grid(((-0.5, -0.5), (1.5, 1.5)), 200), surf)
