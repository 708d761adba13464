"""Bicharacteristics of H = c(x)^2 |xi|^2 / 2 and an empirical non-trapping check.

Rays obey x' = c^2 xi, xi' = -grad(c^2) |xi|^2 / 2 and are integrated with
classical RK4. c^2 is represented by its cubic B-spline interpolant so the
integrated system is exactly Hamiltonian for the interpolated speed and H
drifts only at the integrator's order. Outside the grid the speed is 1 and a
ray is a straight line, so escape there is resolved analytically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ConvergenceError
from .fields import DomainSpec, SoundSpeedField

__all__ = [
    "RayState",
    "Trajectory",
    "SeedLattice",
    "TrappingReport",
    "SpeedModel",
    "seed_lattice",
    "integrate_ray",
    "integrate_rays",
    "check_nontrapping",
    "default_dt",
    "default_escape_radius",
]

log = logging.getLogger(__name__)

DRIFT_TOL = 1e-6
MAX_HALVINGS = 10


@dataclass(frozen=True)
class RayState:
    """Phase-space point with its cached Hamiltonian."""

    x: np.ndarray
    xi: np.ndarray
    t: float
    H: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled ray; ``escape_time`` is None when the ray had not escaped by ``t_end``."""

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    H: np.ndarray
    dt: float
    halvings: int
    exit_time: float | None
    escape_time: float | None

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> RayState:
        return RayState(self.x[i], self.xi[i], float(self.t[i]), float(self.H[i]))

    @property
    def escaped(self) -> bool:
        return self.escape_time is not None

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.H - self.H[0])) / self.H[0])


class SpeedModel:
    """c^2 and its exact gradient from the cubic B-spline interpolant; 1 and 0 off the grid.

    Coefficients come from ``scipy.ndimage.spline_filter`` (mirror boundary);
    value and gradient share one 4 x 4 coefficient gather per point.
    """

    def __init__(self, c: SoundSpeedField) -> None:
        g = c.grid
        if g.dim != 2:
            raise ConfigError("ray tracing is implemented for two dimensions")
        self.grid = g
        self.c = c
        self.lower = np.array(g.origin)
        self.upper = np.array(g.upper)
        self.h = np.array(g.spacing)
        coef = np.pad(ndimage.spline_filter(c.values ** 2, order=3, mode="mirror"), 2, mode="reflect")
        self._coef = coef.ravel()
        self._stride = coef.shape[1]
        self._n = np.array(g.counts)
        taps = np.arange(4)
        self._taps = (taps[:, None] * self._stride + taps[None, :]).ravel()

    def inside(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    # cubic B-spline weights of taps i-1 .. i+2 as polynomials in t (rows: 1, t, t^2, t^3)
    _W = np.array([[1.0, 4.0, 1.0, 0.0], [-3.0, 0.0, 3.0, 0.0], [3.0, -6.0, 3.0, 0.0], [-1.0, 3.0, -3.0, 1.0]]) / 6.0
    _DW = np.array([[-3.0, 0.0, 3.0, 0.0], [6.0, -12.0, 6.0, 0.0], [-3.0, 9.0, -9.0, 3.0]]) / 6.0

    def _inside_values(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = (x - self.lower) / self.h
        i = np.clip(np.floor(u).astype(np.intp), 0, self._n - 2)
        t = u - i
        T = t[:, :, None] ** np.arange(4)
        w = T @ self._W
        dw = T[:, :, :3] @ self._DW
        # +1: the 2-cell pad shifts tap i-1 to padded index i+1
        base = (i[:, 0] + 1) * self._stride + i[:, 1] + 1
        C = self._coef[base[:, None] + self._taps].reshape(-1, 4, 4)
        cy = (C @ w[:, 1, :, None])[:, :, 0]
        cx = (w[:, 0, None, :] @ C)[:, 0, :]
        val = np.sum(cy * w[:, 0], axis=1)
        grad = np.column_stack([np.sum(cy * dw[:, 0], axis=1) / self.h[0], np.sum(cx * dw[:, 1], axis=1) / self.h[1]])
        return val, grad

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(c^2, grad c^2) at points ``x`` of shape (n, 2)."""
        m = self.inside(x)
        if m.all():
            return self._inside_values(x)
        val = np.ones(len(x))
        grad = np.zeros_like(x)
        if np.any(m):
            val[m], grad[m] = self._inside_values(x[m])
        return val, grad

    def c2(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[0]

    def grad_c2(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[1]

    def hamiltonian(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return 0.5 * self.c2(x) * np.sum(xi * xi, axis=-1)

    def rhs(self, x: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c2, grad = self.evaluate(x)
        return c2[:, None] * xi, -0.5 * grad * np.sum(xi * xi, axis=-1)[:, None]

    def rk4(self, x: np.ndarray, xi: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
        k1x, k1p = self.rhs(x, xi)
        k2x, k2p = self.rhs(x + 0.5 * dt * k1x, xi + 0.5 * dt * k1p)
        k3x, k3p = self.rhs(x + 0.5 * dt * k2x, xi + 0.5 * dt * k2p)
        k4x, k4p = self.rhs(x + dt * k3x, xi + dt * k3p)
        return (
            x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            xi + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p),
        )


def default_dt(c: SoundSpeedField) -> float:
    return min(c.grid.spacing) / (4.0 * c.c_max)


def _line_exit(x: np.ndarray, v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Time s >= 0 at which x + s v leaves the ball (inf when v = 0)."""
    d = x - center
    a = np.sum(v * v, axis=-1)
    b = np.sum(d * v, axis=-1)
    cc = np.sum(d * d, axis=-1) - radius ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (-b + np.sqrt(np.maximum(b * b - a * cc, 0.0))) / a
    return np.where(a > 0, np.maximum(s, 0.0), np.inf)


def _check_seeds(model: SpeedModel, x0: np.ndarray, xi0: np.ndarray) -> None:
    if np.any(np.linalg.norm(xi0, axis=-1) == 0):
        raise ConfigError("initial momentum must be nonzero")
    if not np.all(model.inside(x0)):
        raise ConfigError("ray starting points must lie inside the grid")


def _advance(
    model: SpeedModel,
    x0: np.ndarray,
    xi0: np.ndarray,
    dt: float,
    t_end: float,
    center: np.ndarray,
    r_escape: float,
    record: bool = False,
):
    """March a batch of rays; returns escape/exit times, drift and (optionally) history.

    A ray stops when it leaves the ball ``r_escape`` (escape time interpolated
    linearly within the step) or the grid (straight continuation from there).
    The history holds x, xi and H per step; ``last`` is each ray's final step.
    """
    n = len(x0)
    x, xi = x0.copy(), xi0.copy()
    H0 = model.hamiltonian(x, xi)
    drift = np.zeros(n)
    escape = np.full(n, np.inf)
    exit_ = np.full(n, np.inf)
    active = np.arange(n)
    steps = int(np.ceil(t_end / dt - 1e-9))
    times = np.minimum(dt * np.arange(steps + 1), t_end)
    last = np.full(n, steps)
    hist = None
    if record:
        hist = (np.empty((steps + 1, n, 2)), np.empty((steps + 1, n, 2)), np.empty((steps + 1, n)))
        hist[0][0], hist[1][0], hist[2][0] = x, xi, H0
    for step in range(steps):
        if len(active) == 0:
            break
        t, h = times[step], times[step + 1] - times[step]
        xa, pa = x[active], xi[active]
        xn, pn = model.rk4(xa, pa, h)
        Hn = model.hamiltonian(xn, pn)
        drift[active] = np.maximum(drift[active], np.abs(Hn - H0[active]) / H0[active])
        r_old = np.linalg.norm(xa - center, axis=-1)
        r_new = np.linalg.norm(xn - center, axis=-1)
        out_ball = r_new >= r_escape
        out_grid = ~model.inside(xn) & ~out_ball
        frac = np.clip((r_escape - r_old) / np.where(r_new > r_old, r_new - r_old, 1.0), 0.0, 1.0)
        escape[active[out_ball]] = t + frac[out_ball] * h
        if np.any(out_grid):
            idx = active[out_grid]
            # off the grid c = 1, so the ray is a straight line with velocity xi
            exit_[idx] = t + h
            escape[idx] = t + h + _line_exit(xn[out_grid], pn[out_grid], center, r_escape)
        x[active], xi[active] = xn, pn
        if record:
            hist[0][step + 1, active], hist[1][step + 1, active], hist[2][step + 1, active] = xn, pn, Hn
        stopped = out_ball | out_grid
        last[active[stopped]] = step + 1
        active = active[~stopped]
    return escape, exit_, drift, (times, last, hist)


def integrate_rays(
    x0: np.ndarray,
    xi0: np.ndarray,
    c: SoundSpeedField,
    dt: float | None = None,
    t_end: float = 10.0,
    *,
    center: Sequence[float] | None = None,
    r_escape: float = np.inf,
    drift_tol: float = DRIFT_TOL,
    max_halvings: int = MAX_HALVINGS,
    model: SpeedModel | None = None,
) -> list[Trajectory]:
    """Batched :func:`integrate_ray`; rays over the drift bound are re-run with halved steps."""
    model = model or SpeedModel(c)
    x0 = np.asarray(x0, dtype=float).reshape(-1, 2)
    xi0 = np.asarray(xi0, dtype=float).reshape(-1, 2)
    _check_seeds(model, x0, xi0)
    dt = float(dt or default_dt(c))
    if not (dt > 0 and t_end > 0):
        raise ConfigError("ray dt and t_end must be positive")
    ctr = np.asarray(center if center is not None else c.center, dtype=float)
    out: list[Trajectory | None] = [None] * len(x0)
    todo = np.arange(len(x0))
    for halvings in range(max_halvings + 1):
        step = dt * 0.5 ** halvings
        escape, exit_, drift, (times, last, (X, P, H)) = _advance(
            model, x0[todo], xi0[todo], step, t_end, ctr, r_escape, record=True
        )
        ok = drift <= drift_tol
        for j in np.flatnonzero(ok):
            n = last[j] + 1
            esc = float(escape[j]) if escape[j] <= t_end else None
            ext = float(exit_[j]) if np.isfinite(exit_[j]) else None
            out[todo[j]] = Trajectory(times[:n].copy(), X[:n, j].copy(), P[:n, j].copy(), H[:n, j].copy(),
                                      step, halvings, ext, esc)
        if ok.all():
            break
        if halvings == max_halvings:
            raise ConvergenceError(
                f"H drift {drift[~ok].max():.2e} exceeds {drift_tol:.0e} after {max_halvings} step halvings",
                achieved=float(drift[~ok].max()),
            )
        todo = todo[~ok]
    return out


def integrate_ray(
    x0: Sequence[float],
    xi0: Sequence[float],
    c: SoundSpeedField,
    dt: float | None = None,
    t_end: float = 10.0,
    *,
    center: Sequence[float] | None = None,
    r_escape: float = np.inf,
    drift_tol: float = DRIFT_TOL,
    max_halvings: int = MAX_HALVINGS,
    model: SpeedModel | None = None,
) -> Trajectory:
    """RK4 trajectory from (x0, xi0) up to ``t_end`` or until it leaves the grid.

    The step is halved (at most ``max_halvings`` times) while the relative H
    drift exceeds ``drift_tol``; afterwards :class:`ConvergenceError` is raised.
    """
    return integrate_rays(
        np.asarray(x0, dtype=float).reshape(1, 2), np.asarray(xi0, dtype=float).reshape(1, 2), c, dt, t_end,
        center=center, r_escape=r_escape, drift_tol=drift_tol, max_halvings=max_halvings, model=model,
    )[0]


@dataclass(frozen=True, eq=False)
class SeedLattice:
    """Launch points times unit directions; seed i is (positions[i // D], directions[i % D])."""

    positions: np.ndarray
    directions: np.ndarray

    def __len__(self) -> int:
        return len(self.positions) * len(self.directions)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.repeat(self.positions, len(self.directions), axis=0)
        xi = np.tile(self.directions, (len(self.positions), 1))
        return x, xi


def seed_lattice(domain: DomainSpec, n_positions: int = 16, n_directions: int = 16) -> SeedLattice:
    """Cell-centred n x n launch points in B and equally spaced unit directions."""
    if domain.dim != 2:
        raise ConfigError("seed lattice is two-dimensional")
    if n_positions < 1 or n_directions < 1:
        raise ConfigError("seed lattice must be nonempty")
    u = (np.arange(n_positions) + 0.5) / n_positions
    xs = domain.lower[0] + u * domain.sides[0]
    ys = domain.lower[1] + u * domain.sides[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    theta = 2 * np.pi * np.arange(n_directions) / n_directions
    return SeedLattice(np.column_stack([X.ravel(), Y.ravel()]), np.column_stack([np.cos(theta), np.sin(theta)]))


@dataclass(frozen=True, eq=False)
class TrappingReport:
    """Outcome of launching every lattice seed; ``trapped`` lists non-escaped seed indices."""

    launched: int
    escaped: int
    worst_escape_time: float
    trapped: tuple[int, ...]
    r_escape: float
    t_escape: float
    dt: float
    max_drift: float
    halvings: int
    escape_times: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not 0 <= self.escaped <= self.launched:
            raise ValueError("escaped must lie in [0, launched]")

    @property
    def nontrapping(self) -> bool:
        return self.escaped == self.launched

    @property
    def verdict(self) -> str:
        return "non-trapping (empirical)" if self.nontrapping else "trapping suspected"

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "launched": self.launched,
            "escaped": self.escaped,
            "worst_escape_time": self.worst_escape_time,
            "r_escape": self.r_escape,
            "t_escape": self.t_escape,
            "dt": self.dt,
            "max_h_drift": self.max_drift,
            "dt_halvings": self.halvings,
            "trapped_seeds": list(self.trapped),
        }

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.summary().items() if k != "trapped_seeds"]
        shown = ", ".join(str(i) for i in self.trapped[:32])
        more = f" (+{len(self.trapped) - 32} more)" if len(self.trapped) > 32 else ""
        lines.append(f"trapped_seeds: [{shown}]{more}")
        return "\n".join(lines)


def check_nontrapping(
    c: SoundSpeedField,
    seeds: SeedLattice,
    r_escape: float,
    t_escape: float = 50.0,
    *,
    dt: float | None = None,
    center: Sequence[float] | None = None,
    drift_tol: float = DRIFT_TOL,
    max_halvings: int = MAX_HALVINGS,
) -> TrappingReport:
    """Launch every seed and count rays leaving the ball ``r_escape`` by ``t_escape``.

    Rays whose H drift exceeds ``drift_tol`` are re-run with a halved step.
    """
    if len(seeds) == 0:
        raise ConfigError("seed lattice is empty")
    radius = c.radius if np.isfinite(c.radius) else 0.0
    if not r_escape > radius:
        raise ConfigError(f"escape radius {r_escape:g} must exceed the homogenization radius {radius:g}")
    if not t_escape > 0:
        raise ConfigError("t_escape must be positive")
    model = SpeedModel(c)
    x0, xi0 = seeds.arrays()
    _check_seeds(model, x0, xi0)
    ctr = np.asarray(center if center is not None else c.center, dtype=float)
    step = float(dt or default_dt(c))
    escape = np.full(len(x0), np.inf)
    drift = np.zeros(len(x0))
    todo = np.arange(len(x0))
    used = step
    for halvings in range(max_halvings + 1):
        used = step * 0.5 ** halvings
        esc, _, dr, _ = _advance(model, x0[todo], xi0[todo], used, t_escape, ctr, r_escape)
        escape[todo], drift[todo] = esc, dr
        bad = dr > drift_tol
        if not np.any(bad):
            break
        if halvings == max_halvings:
            raise ConvergenceError(
                f"H drift {dr.max():.2e} exceeds {drift_tol:.0e} after {max_halvings} step halvings",
                achieved=float(dr.max()),
            )
        todo = todo[bad]
        log.info("rays: %d seeds exceed the H drift bound, halving dt", len(todo))
    ok = escape <= t_escape
    trapped = tuple(int(i) for i in np.flatnonzero(~ok))
    worst = float(escape[ok].max()) if np.any(ok) else float("inf")
    log.info("rays: %d/%d escaped, worst escape time %.4g", int(ok.sum()), len(ok), worst)
    return TrappingReport(
        launched=len(x0),
        escaped=int(ok.sum()),
        worst_escape_time=worst,
        trapped=trapped,
        r_escape=float(r_escape),
        t_escape=float(t_escape),
        dt=used,
        max_drift=float(drift.max()),
        halvings=halvings,
        escape_times=escape,
    )


def default_escape_radius(c: SoundSpeedField, domain: DomainSpec) -> float:
    """R + diam(B) with R the homogenization radius."""
    radius = c.radius if np.isfinite(c.radius) else 0.0
    return radius + domain.diameter
