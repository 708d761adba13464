"""Leapfrog finite-difference solver for p_tt = c^2 Lap p with p(0) = f, p_t(0) = 0.

The outer edge of the simulation grid either absorbs outgoing waves with a
first-order Mur condition (default) or reflects them as a Dirichlet wall (the
test-harness mode). An optional damping sponge can be layered on top.
Boundary data are sampled each step at the detectors of an
:class:`ObservationSurface`, whose sides lie on grid lines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .boundary import bilinear_matrix, check_on_grid_lines
from .errors import CFLError, ConfigError, GeometryError, NonFiniteError
from .fields import DomainSpec, Grid, ObservationSurface, ScalarField, Sinogram, SoundSpeedField

__all__ = [
    "SpongeLayer",
    "WaveState",
    "EnergyTrace",
    "ForwardRun",
    "laplacian",
    "simulate_forward",
    "interior_energy",
    "step_states",
    "dalembert_sinogram",
]

log = logging.getLogger(__name__)

BOUNDARIES = ("absorbing", "dirichlet")


@dataclass(frozen=True)
class SpongeLayer:
    """Edge treatment of the simulation grid.

    ``thickness`` cells at each edge form a band that the initial pressure must
    avoid; with ``sigma_max > 0`` the band also damps, ramping as a cubic from 0
    at its inner edge to ``sigma_max`` at the grid edge. ``boundary`` selects
    the condition on the outermost nodes.
    """

    thickness: int = 10
    sigma_max: float = 0.0
    boundary: str = "absorbing"
    power: int = 3

    def __post_init__(self) -> None:
        if int(self.thickness) < 1:
            raise ConfigError("sponge thickness must be at least one cell")
        if not (self.sigma_max >= 0 and np.isfinite(self.sigma_max)):
            raise ConfigError("sponge sigma_max must be finite and non-negative")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    def _ramps(self, grid: Grid) -> list[np.ndarray]:
        T = int(self.thickness)
        out = []
        for n in grid.counts:
            i = np.arange(n)
            depth = np.minimum(i, n - 1 - i)
            out.append(np.clip((T - depth) / T, 0.0, 1.0))
        return out

    def profile(self, grid: Grid) -> np.ndarray:
        """Damping sigma(x) on every node of ``grid``."""
        ramps = self._ramps(grid)
        if grid.dim == 1:
            r = ramps[0]
        else:
            r = np.maximum(ramps[0][:, None], ramps[1][None, :])
        return self.sigma_max * r ** self.power

    def band(self, grid: Grid) -> np.ndarray:
        """Boolean mask of the keep-out band."""
        ramps = self._ramps(grid)
        if grid.dim == 1:
            return ramps[0] > 0
        return (ramps[0][:, None] > 0) | (ramps[1][None, :] > 0)


@dataclass(frozen=True, eq=False)
class WaveState:
    """Two consecutive time slices, ``prev`` at step-1 and ``current`` at step."""

    prev: ScalarField
    current: ScalarField
    step: int
    dt: float

    def __post_init__(self) -> None:
        if self.prev.grid != self.current.grid:
            raise GeometryError("state slices live on different grids")


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    """Interior energy E_B sampled at ``times``."""

    times: np.ndarray
    values: np.ndarray

    @property
    def initial(self) -> float:
        return float(self.values[0]) if len(self.values) else 0.0

    def first_below(self, fraction: float) -> float | None:
        """First time E_B drops below ``fraction`` times its running maximum."""
        ref = np.maximum.accumulate(self.values)
        hit = np.nonzero((self.values < fraction * ref) & (ref > 0))[0]
        return float(self.times[hit[0]]) if len(hit) else None


@dataclass(frozen=True, eq=False)
class ForwardRun:
    """Everything a forward simulation produced.

    Unpacks as ``sinogram, energy = simulate_forward(...)``.
    """

    sinogram: Sinogram
    energy: EnergyTrace
    stop_reason: str
    t_cap: float
    snapshots: dict = field(default_factory=dict)
    chunks: int = 1

    def __iter__(self) -> Iterator:
        return iter((self.sinogram, self.energy))

    def summary(self) -> dict:
        return {
            "steps": self.sinogram.steps,
            "dt": self.sinogram.dt,
            "t_max": self.sinogram.t_max,
            "t_cap": self.t_cap,
            "stop_reason": self.stop_reason,
            "energy_initial": self.energy.initial,
            "energy_final": float(self.energy.values[-1]) if len(self.energy.values) else 0.0,
            "chunks": self.chunks,
        }


def laplacian(p: np.ndarray, spacing: tuple[float, ...]) -> np.ndarray:
    """3-point / 5-point Laplacian on interior nodes, zero on the outermost nodes."""
    out = np.zeros_like(p)
    if p.ndim == 1:
        (h,) = spacing
        out[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / (h * h)
        return out
    hx, hy = spacing
    c = p[1:-1, 1:-1]
    out[1:-1, 1:-1] = (p[2:, 1:-1] - 2.0 * c + p[:-2, 1:-1]) / (hx * hx) + (
        p[1:-1, 2:] - 2.0 * c + p[1:-1, :-2]
    ) / (hy * hy)
    return out


def _mur_coefficients(c: np.ndarray, dt: float, spacing: tuple[float, ...]) -> list[np.ndarray]:
    """(c dt - h)/(c dt + h) on the low and high edge of every axis."""
    out = []
    for a, h in enumerate(spacing):
        for edge in (0, -1):
            ce = np.take(c, edge, axis=a)
            out.append((ce * dt - h) / (ce * dt + h))
    return out


def _mur(p2: np.ndarray, p1: np.ndarray, k: list[np.ndarray]) -> None:
    """First-order Engquist-Majda absorbing update on every grid edge."""
    if p2.ndim == 1:
        p2[0] = p1[1] + k[0] * (p2[1] - p1[0])
        p2[-1] = p1[-2] + k[1] * (p2[-2] - p1[-1])
        return
    p2[0, :] = p1[1, :] + k[0] * (p2[1, :] - p1[0, :])
    p2[-1, :] = p1[-2, :] + k[1] * (p2[-2, :] - p1[-1, :])
    p2[:, 0] = p1[:, 1] + k[2] * (p2[:, 1] - p1[:, 0])
    p2[:, -1] = p1[:, -2] + k[3] * (p2[:, -2] - p1[:, -1])


def _trapezoid_weights(grid: Grid) -> np.ndarray:
    ws = []
    for n, h in zip(grid.counts, grid.spacing):
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
        ws.append(w)
    return ws[0] if grid.dim == 1 else np.outer(ws[0], ws[1])


class _EnergyProbe:
    """Precomputed pieces of the trapezoid-rule interior energy."""

    def __init__(self, grid: Grid, c: np.ndarray, domain: DomainSpec) -> None:
        sl = domain.node_slices(grid)
        # one extra node each side (when available) so gradients are centred on B's boundary
        self.pad = tuple(slice(max(s.start - 1, 0), min(s.stop + 1, n)) for s, n in zip(sl, grid.counts))
        self.inner = tuple(slice(s.start - p.start, s.start - p.start + (s.stop - s.start)) for s, p in zip(sl, self.pad))
        bgrid = domain.node_grid(grid)
        self.spacing = grid.spacing
        self.w = _trapezoid_weights(bgrid)
        self.inv_c2 = 1.0 / c[sl] ** 2

    def __call__(self, p_t: np.ndarray | None, p_mid: np.ndarray) -> float:
        local = p_mid[self.pad]
        grad2 = np.zeros(local.shape)
        for a in range(local.ndim):
            grad2 += np.gradient(local, self.spacing[a], axis=a) ** 2
        e = grad2[self.inner]
        if p_t is not None:
            e = e + p_t[self.pad][self.inner] ** 2 * self.inv_c2
        return float(np.sum(e * self.w))


def interior_energy(state: WaveState, c: SoundSpeedField, domain: DomainSpec) -> float:
    """Trapezoid discretization of the integral over B of p_t^2/c^2 + |grad p|^2.

    p_t is the difference of the two slices divided by dt and the gradient is
    taken of their average, both centred at the half step.
    """
    probe = _EnergyProbe(state.current.grid, c.values, domain)
    p1, p0 = state.current.values, state.prev.values
    return probe((p1 - p0) / state.dt, 0.5 * (p1 + p0))


def _check_inputs(f: ScalarField, c: SoundSpeedField, sponge: SpongeLayer, surface: ObservationSurface):
    grid = f.grid
    if c.grid != grid:
        raise GeometryError("phantom and sound speed are sampled on different grids")
    domain = surface.domain
    for a in range(grid.dim):
        if domain.lower[a] < grid.origin[a] or domain.upper[a] > grid.upper[a]:
            raise GeometryError("domain B does not fit inside the simulation grid")
    domain.node_slices(grid)
    check_on_grid_lines(grid, surface)
    if np.any(f.values[sponge.band(grid)] != 0.0):
        raise GeometryError(
            f"initial pressure is nonzero inside the {sponge.thickness}-cell edge band of the grid"
        )


def simulate_forward(
    f: ScalarField,
    c: SoundSpeedField,
    sponge: SpongeLayer,
    surface: ObservationSurface,
    dt: float | None = None,
    t_max: float | str = "adaptive",
    *,
    cfl: float = 0.5,
    decay_tol: float = 1e-4,
    quiet_tol: float = 1e-3,
    snapshot_steps: Iterable[int] = (),
    progress: Callable[[int, int], None] | None = None,
) -> ForwardRun:
    """March the wave equation and record g on ``surface`` at every step.

    ``t_max="adaptive"`` stops once E_B has fallen below ``decay_tol`` times its
    running maximum and the boundary data have stayed below ``quiet_tol`` times
    their peak for a trailing window of diam(B)/c_min, capped at
    10 diam(B)/c_min. A numeric ``t_max`` is rounded to a whole number of steps.
    """
    _check_inputs(f, c, sponge, surface)
    grid = f.grid
    domain = surface.domain
    h_min = min(grid.spacing)
    dt_limit = cfl * h_min / c.c_max
    if dt is None:
        dt = dt_limit
    dt = float(dt)
    if not dt > 0:
        raise CFLError("dt must be positive")
    if dt > dt_limit * (1 + 1e-12):
        raise CFLError(
            f"dt={dt:.6g} violates the CFL limit {dt_limit:.6g} = {cfl} * h_min / c_max"
        )
    horizon = domain.diameter / c.c_min
    t_cap = 10.0 * horizon
    adaptive = isinstance(t_max, str)
    if adaptive and t_max != "adaptive":
        raise ConfigError(f"t_max must be a number or 'adaptive', got {t_max!r}")
    if adaptive:
        n_steps = int(np.ceil(t_cap / dt)) + 1
    else:
        if not float(t_max) > 0:
            raise ConfigError("t_max must be positive")
        n_steps = int(round(float(t_max) / dt)) + 1
        n_steps = max(n_steps, 3)
    window = max(int(np.ceil(horizon / dt)), 2)

    c2dt2 = (c.values * dt) ** 2
    sigma = sponge.profile(grid)
    damped = sponge.sigma_max > 0
    if damped:
        a_coef = 1.0 + sigma * dt
        b_coef = 1.0 - sigma * dt
    k_edge = _mur_coefficients(c.values, dt, grid.spacing)
    absorbing = sponge.boundary == "absorbing"
    R = bilinear_matrix(grid, surface.positions)
    probe = _EnergyProbe(grid, c.values, domain)
    b_slices = domain.node_slices(grid)
    snap_at = set(int(s) for s in snapshot_steps)
    snapshots: dict[int, np.ndarray] = {}

    g = np.empty((surface.count, n_steps))
    energy: list[float] = []
    p0 = np.array(f.values, dtype=np.float64)
    g[:, 0] = R @ p0.ravel()
    energy.append(probe(None, p0))
    if 0 in snap_at:
        snapshots[0] = p0[b_slices].copy()
    p1 = p0 + 0.5 * c2dt2 * laplacian(p0, grid.spacing)
    if p1.ndim == 1:
        p1[0] = p1[-1] = 0.0
    else:
        p1[0, :] = p1[-1, :] = p1[:, 0] = p1[:, -1] = 0.0
    g[:, 1] = R @ p1.ravel()
    if 1 in snap_at:
        snapshots[1] = p1[b_slices].copy()
    peak = float(np.max(np.abs(g[:, :2])))
    gmax = [float(np.max(np.abs(g[:, 0]))), float(np.max(np.abs(g[:, 1])))]
    e_ref = energy[0]
    stop_reason = "t_max" if not adaptive else "cap"
    last = n_steps - 1
    for n in range(2, n_steps):
        lap = laplacian(p1, grid.spacing)
        if damped:
            p2 = (2.0 * p1 - b_coef * p0 + c2dt2 * lap) / a_coef
        else:
            p2 = 2.0 * p1 - p0 + c2dt2 * lap
        if absorbing:
            _mur(p2, p1, k_edge)
        if not np.all(np.isfinite(p2)):
            raise NonFiniteError(f"non-finite pressure at step {n}", step=n)
        # energy at step n-1 with the centred time difference
        energy.append(probe((p2 - p0) / (2.0 * dt), p1))
        e_ref = max(e_ref, energy[-1])
        g[:, n] = R @ p2.ravel()
        gm = float(np.max(np.abs(g[:, n])))
        gmax.append(gm)
        peak = max(peak, gm)
        if n in snap_at:
            snapshots[n] = p2[b_slices].copy()
        p0, p1 = p1, p2
        if progress is not None and n % 500 == 0:
            progress(n, n_steps)
        if adaptive and n >= window:
            decayed = e_ref == 0.0 or energy[-1] < decay_tol * e_ref
            quiet = peak == 0.0 or max(gmax[n - window + 1 : n + 1]) < quiet_tol * peak
            if decayed and quiet and n >= max(snap_at, default=0):
                last = n
                stop_reason = "decayed"
                break
    # energy for the final slice from a one-sided difference
    energy.append(probe((p1 - p0) / dt, p1))
    g = g[:, : last + 1]
    times = dt * np.arange(len(energy))
    log.info("forward: %d steps, dt=%.4g, t_max=%.4g (%s)", last + 1, dt, dt * last, stop_reason)
    return ForwardRun(
        Sinogram(surface, dt, g),
        EnergyTrace(times, np.asarray(energy)),
        stop_reason,
        t_cap,
        snapshots,
    )


def step_states(
    state: WaveState, c: SoundSpeedField, n: int, boundary: str = "dirichlet"
) -> WaveState:
    """Advance a raw leapfrog state by ``n`` steps (no sponge, no recording)."""
    grid = state.current.grid
    c2dt2 = (c.values * state.dt) ** 2
    k = _mur_coefficients(c.values, state.dt, grid.spacing)
    p0 = np.array(state.prev.values)
    p1 = np.array(state.current.values)
    for _ in range(n):
        p2 = 2.0 * p1 - p0 + c2dt2 * laplacian(p1, grid.spacing)
        if boundary == "absorbing":
            _mur(p2, p1, k)
        p0, p1 = p1, p2
    return WaveState(ScalarField(grid, p0), ScalarField(grid, p1), state.step + n, state.dt)


def dalembert_sinogram(
    f: Callable[[np.ndarray], np.ndarray], surface: ObservationSurface, dt: float, t_max: float
) -> Sinogram:
    """Exact 1D free-space data for c = 1: g(y, t) = (f(y - t) + f(y + t)) / 2.

    ``f`` maps an array of positions to initial pressure and must vanish
    outside its support (it is evaluated on the whole line).
    """
    if surface.domain.dim != 1:
        raise ConfigError("d'Alembert data exists only in one dimension")
    if not (dt > 0 and t_max > 0):
        raise ConfigError("dt and t_max must be positive")
    t = dt * np.arange(int(round(t_max / dt)) + 1)
    y = surface.positions[:, 0][:, None]
    values = 0.5 * (np.asarray(f(y - t), dtype=float) + np.asarray(f(y + t), dtype=float))
    return Sinogram(surface, dt, values)
