from __future__ import annotations

import numpy as np
import pytest

from taterec.errors import ConfigError
from taterec.fields import (
    DomainSpec,
    PhantomSpec,
    SmoothBump,
    SoundSpeedField,
    build_observation_surface,
    make_grid,
    sample_sound_speed,
)
from taterec.spectral import (
    analytic_rectangle_basis,
    apply_cosine_propagator,
    apply_sine_propagator,
    assemble_operator,
    compute_eigenpairs,
    resolvable_bound,
)

UNIT = DomainSpec((0.0, 0.0), (1.0, 1.0))
RECT = DomainSpec((0.0, 0.0), (1.0, 0.5))


@pytest.fixture(scope="module")
def grid33():
    return make_grid(((0.0, 0.0), (1.0, 1.0)), 33)


def test_numerical_matches_discrete_analytic(grid33):
    surf = build_observation_surface(UNIT, 32)
    # K = 11 ends on a complete eigenspace, (3, 3)
    num = compute_eigenpairs(assemble_operator(SoundSpeedField.constant(grid33), UNIT), 11, surface=surf)
    ana = analytic_rectangle_basis(UNIT, 11, grid33, surf, discrete=True, trace_scheme="green")
    np.testing.assert_allclose(num.lam, ana.lam, rtol=1e-10)
    # eigenspaces agree: projecting analytic modes onto the numerical span loses nothing
    P = num.project_many(ana.modes)
    np.testing.assert_allclose(np.linalg.norm(P, axis=0), 1.0, atol=1e-8)


def test_rectangle_continuum_eigenvalues():
    g = make_grid(((0.0, 0.0), (1.0, 0.5)), (65, 33))
    b = analytic_rectangle_basis(RECT, 4, g, trace_scheme="exact")
    expect = sorted(np.pi * np.hypot(n, 2 * m) for n in range(1, 5) for m in range(1, 3))[:4]
    np.testing.assert_allclose(b.lam, expect, rtol=1e-14)
    assert b.labels[0] == (1, 1)


def test_weighted_gram_is_identity_for_variable_speed():
    grid = make_grid(((0.0, 0.0), (1.0, 1.0)), 65)
    c = sample_sound_speed(PhantomSpec((SmoothBump((0.5, 0.5), 0.3, 0.3),)), grid, center=(0.5, 0.5))
    b = compute_eigenpairs(assemble_operator(c, UNIT), 15)
    np.testing.assert_allclose(b.gram(), np.eye(15), atol=1e-9)
    assert b.residuals.max() <= 1e-10
    # faster medium -> higher frequencies than the c = 1 basis
    ref = compute_eigenpairs(assemble_operator(SoundSpeedField.constant(grid), UNIT), 15)
    assert np.all(b.lam > ref.lam)


def test_sign_convention_is_deterministic(grid33):
    op = assemble_operator(SoundSpeedField.constant(grid33), UNIT)
    a, b = compute_eigenpairs(op, 5), compute_eigenpairs(op, 5)
    assert np.array_equal(a.modes, b.modes)
    flat = a.modes[0].ravel()
    assert flat[np.argmax(np.abs(flat))] > 0


def test_resolvability_bound_enforced(grid33):
    assert resolvable_bound(grid33, 1.0) == pytest.approx(16.0)
    op = assemble_operator(SoundSpeedField.constant(grid33), UNIT)
    auto = compute_eigenpairs(op, None)
    assert auto.lam[-1] <= auto.bound
    with pytest.raises(ConfigError):
        compute_eigenpairs(op, auto.K + 5)
    with pytest.raises(ConfigError):
        compute_eigenpairs(op, 3, trace_scheme="exact")


def test_degenerate_clusters_found(grid33):
    b = analytic_rectangle_basis(UNIT, 6, grid33, discrete=True, trace_scheme="green")
    sizes = [len(c) for c in b.clusters()]
    assert sizes[:3] == [1, 2, 1]


@pytest.mark.parametrize("scheme", ["green", "second_order"])
def test_discrete_traces_converge_to_exact(scheme):
    errs = []
    for n in (32, 64, 128):
        g = make_grid(((0.0, 0.0), (1.0, 1.0)), n + 1)
        surf = build_observation_surface(UNIT, n)
        b = analytic_rectangle_basis(UNIT, 3, g, surf, discrete=False, trace_scheme=scheme)
        exact = b.with_traces("exact").traces
        errs.append(np.max(np.abs(b.traces - exact)) / np.max(np.abs(exact)))
    assert errs[-1] < 2e-3
    assert np.log2(errs[-2] / errs[-1]) > 1.8


def test_propagators_act_per_mode(grid33):
    b = analytic_rectangle_basis(UNIT, 4, grid33, discrete=True, trace_scheme="green")
    psi = b.modes[2]
    t = 0.37
    np.testing.assert_allclose(apply_cosine_propagator(b, psi, t).values, np.cos(t * b.lam[2]) * psi, atol=1e-12)
    np.testing.assert_allclose(
        apply_sine_propagator(b, psi, t).values, np.sin(t * b.lam[2]) / b.lam[2] * psi, atol=1e-12
    )


def test_truncate_and_summary(grid33):
    b = analytic_rectangle_basis(UNIT, 8, grid33, discrete=True, trace_scheme="green")
    t = b.truncate(3)
    assert t.K == 3 and t.labels == b.labels[:3]
    assert b.summary()["K"] == 8
    with pytest.raises(ConfigError):
        b.truncate(9)
