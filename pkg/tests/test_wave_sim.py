from __future__ import annotations

import numpy as np
import pytest

from taterec.errors import CFLError, ConfigError, GeometryError
from taterec.fields import (
    DomainSpec,
    Gaussian,
    PhantomSpec,
    SoundSpeedField,
    build_observation_surface,
    make_grid,
    sample_phantom,
)
from taterec.wave_sim import (
    SpongeLayer,
    WaveState,
    dalembert_sinogram,
    interior_energy,
    simulate_forward,
    step_states,
)

D1 = DomainSpec((0.0,), (1.0,))
D2 = DomainSpec((0.0, 0.0), (1.0, 1.0))


def _gauss_1d(x, x0=0.5, w=0.05):
    # same profile as Gaussian((x0,), w) with the default cutoff of 5 widths
    return np.maximum(np.exp(-0.5 * ((x - x0) / w) ** 2) - np.exp(-12.5), 0.0)


def _run_1d(n, cfl=0.5, t_max=0.8):
    grid = make_grid(((-1.0,), (2.0,)), n)
    f = sample_phantom(PhantomSpec((Gaussian((0.5,), 0.05),)), grid)
    return simulate_forward(f, SoundSpeedField.constant(grid), SpongeLayer(), build_observation_surface(D1), t_max=t_max, cfl=cfl)


def test_1d_matches_dalembert_at_second_order():
    errs = []
    for n in (601, 1201, 2401):
        run = _run_1d(n)
        g = run.sinogram
        exact = dalembert_sinogram(_gauss_1d, g.surface, g.dt, g.t_max)
        errs.append(np.max(np.abs(g.values - exact.values)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] < 1e-3
    assert np.all(orders > 1.8)


def test_cfl_violation_raises():
    grid = make_grid(((-1.0,), (2.0,)), 301)
    f = sample_phantom(PhantomSpec((Gaussian((0.5,), 0.05),)), grid)
    c = SoundSpeedField.constant(grid)
    with pytest.raises(CFLError):
        simulate_forward(f, c, SpongeLayer(), build_observation_surface(D1), dt=0.6 * grid.spacing[0], cfl=0.5)
    with pytest.raises(ConfigError):
        simulate_forward(f, c, SpongeLayer(), build_observation_surface(D1), t_max="soon")


def test_phantom_in_edge_band_rejected():
    grid = make_grid(((-1.0,), (2.0,)), 301)
    f = sample_phantom(PhantomSpec((Gaussian((-0.95,), 0.01),)), grid)
    with pytest.raises(GeometryError):
        simulate_forward(f, SoundSpeedField.constant(grid), SpongeLayer(), build_observation_surface(D1))


def test_sponge_profile_and_band():
    grid = make_grid(((0.0, 0.0), (1.0, 1.0)), 41)
    sp = SpongeLayer(thickness=5, sigma_max=2.0)
    prof = sp.profile(grid)
    assert prof[0, 20] == 2.0 and prof[20, 20] == 0.0 and prof[5, 20] == 0.0
    assert sp.band(grid).sum() == 41 * 41 - 31 * 31
    with pytest.raises(ConfigError):
        SpongeLayer(boundary="periodic")


@pytest.fixture(scope="module")
def small_2d():
    grid = make_grid(((-0.5, -0.5), (1.5, 1.5)), 81)
    f = sample_phantom(PhantomSpec((Gaussian((0.5, 0.5), 0.1),)), grid)
    return grid, f, build_observation_surface(D2, 40)


def test_adaptive_stop_and_energy_decay(small_2d):
    grid, f, surf = small_2d
    run = simulate_forward(f, SoundSpeedField.constant(grid), SpongeLayer(), surf, cfl=0.5)
    assert run.stop_reason == "decayed" and run.sinogram.t_max < run.t_cap
    e = run.energy
    assert e.first_below(1e-4) is not None and e.values[-1] < 1e-4 * e.values.max()
    s = run.summary()
    assert s["steps"] == run.sinogram.steps and s["stop_reason"] == "decayed"


def test_centred_source_gives_equal_sides(small_2d):
    grid, f, surf = small_2d
    g = simulate_forward(f, SoundSpeedField.constant(grid), SpongeLayer(), surf, t_max=1.0).sinogram.values
    sides = g.reshape(4, 40, -1)
    scale = np.abs(g).max()
    for k in range(1, 4):
        np.testing.assert_allclose(sides[k], sides[0], atol=1e-12 * scale)


def test_absorbing_edge_beats_reflecting_wall(small_2d):
    grid, f, surf = small_2d
    c = SoundSpeedField.constant(grid)
    late = {}
    for b in ("absorbing", "dirichlet"):
        g = simulate_forward(f, c, SpongeLayer(boundary=b), surf, t_max=2.5).sinogram
        late[b] = np.abs(g.values[:, g.times > 1.8]).max()
    assert late["absorbing"] < 0.1 * late["dirichlet"]


def test_interior_energy_conserved_while_wave_is_inside():
    grid = make_grid(((-0.5, -0.5), (1.5, 1.5)), 161)
    f = sample_phantom(PhantomSpec((Gaussian((0.5, 0.5), 0.05),)), grid)
    c = SoundSpeedField.constant(grid)
    dt = 0.25 * grid.spacing[0]
    s0 = WaveState(f, f, 0, dt)
    e0 = interior_energy(step_states(s0, c, 1), c, D2)
    e1 = interior_energy(step_states(s0, c, 40), c, D2)
    assert e1 == pytest.approx(e0, rel=2e-2)


def test_dalembert_rejects_2d():
    with pytest.raises(ConfigError):
        dalembert_sinogram(lambda y: y, build_observation_surface(D2, 4), 0.1, 1.0)
