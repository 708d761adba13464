"""Recover f inside B from boundary data through the eigenfunction expansion.

With g_k(t) = sum over detectors of g trace_k w, the coefficients
f_k = <f, psi_k>_w follow from any of three equivalent time integrals

    sin:    f_k = -lambda^-1 int sin(lambda t) g_k dt
    cos:    f_k = -lambda^-2 g_k(0) - lambda^-2 int cos(lambda t) g_k' dt
    second: f_k = -lambda^-2 g_k(0) + lambda^-3 int sin(lambda t) g_k'' dt

which are related by integration by parts. On a finite window [0, T] the sin
and cos routes pick up boundary terms at T that involve the full pressure,
while the second-derivative route only involves u = p - Eg, which is close to
zero once the field inside B has become quasi-static. The optional closure
adds to the sin and cos routes the terms that make all three consistent under
u(T) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary import bilinear_matrix
from .elliptic import HarmonicExtender, build_source_series
from .errors import ConfigError, GeometryError
from .fields import DomainSpec, ObservationSurface, ScalarField, Sinogram, SoundSpeedField
from .spectral import SpectralBasis
from .wave_sim import SpongeLayer, simulate_forward

__all__ = [
    "BoundaryCoefficientSeries",
    "CoefficientVector",
    "KernelSlice",
    "ShiftedSolution",
    "RepresentationReport",
    "ErrorReport",
    "ROUTES",
    "boundary_coefficients",
    "coefficients_sin",
    "coefficients_cos",
    "coefficients_second_derivative",
    "coefficients",
    "synthesize",
    "reconstruct",
    "reconstruct_operator_formula",
    "kernel_slice",
    "kernel_backprojection",
    "validate_representation",
    "error_metrics",
    "tail_mass",
]

ROUTES = ("sin", "cos", "second_derivative")
TAIL_FRACTION = 0.1
# modes whose |g_k| mass is below this fraction of the largest carry no signal
SIGNAL_FLOOR = 1e-10


def _trapezoid(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    if n > 1:
        w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(frozen=True, eq=False)
class BoundaryCoefficientSeries:
    """g_k(t_j) for every basis mode (rows) and time step (columns)."""

    values: np.ndarray
    dt: float
    basis: SpectralBasis = field(repr=False)

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps)

    @property
    def t_max(self) -> float:
        return self.dt * (self.steps - 1)

    @property
    def at_zero(self) -> np.ndarray:
        return self.values[:, 0]


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    values: np.ndarray
    route: str
    t_used: float
    tail_mass: np.ndarray | None = None
    closure: bool = False

    def __len__(self) -> int:
        return len(self.values)


def boundary_coefficients(g: Sinogram, basis: SpectralBasis) -> BoundaryCoefficientSeries:
    """Midpoint quadrature of g against each mode's normal-derivative trace."""
    if not g.surface.same_layout(basis.surface):
        raise GeometryError("sinogram detectors do not match the basis surface")
    v = (basis.traces * basis.surface.weights) @ g.values
    return BoundaryCoefficientSeries(v, g.dt, basis)


def tail_mass(series: BoundaryCoefficientSeries, fraction: float = TAIL_FRACTION) -> np.ndarray:
    """Share of each mode's |g_k| mass in the last ``fraction`` of the window.

    Modes whose total mass is below SIGNAL_FLOOR times the largest one (for
    example modes that vanish by symmetry) are measured against that floor, so
    rounding noise does not show up as a large tail.
    """
    a = np.abs(series.values)
    n = a.shape[1]
    start = int(np.floor((1.0 - fraction) * (n - 1)))
    total = a.sum(axis=1)
    tail = a[:, start:].sum(axis=1)
    ref = np.maximum(total, SIGNAL_FLOOR * total.max(initial=0.0))
    return np.where(ref > 0, tail / np.where(ref > 0, ref, 1.0), 0.0)


def _derivative_end(g: np.ndarray, dt: float) -> np.ndarray:
    """g' at the last sample, second-order one-sided when possible."""
    if g.shape[1] >= 3:
        return (3.0 * g[:, -1] - 4.0 * g[:, -2] + g[:, -3]) / (2.0 * dt)
    return (g[:, -1] - g[:, -2]) / dt


def coefficients_sin(series: BoundaryCoefficientSeries, closure: bool = True) -> CoefficientVector:
    """f_k = -lambda^-1 int_0^T sin(lambda t) g_k dt by the trapezoid rule."""
    lam = series.basis.lam
    t = series.times
    g = series.values
    w = _trapezoid(series.steps, series.dt)
    f = -(np.sin(np.outer(lam, t)) * g) @ w / lam
    if closure and series.steps >= 2:
        T = series.t_max
        f = f - np.cos(lam * T) * g[:, -1] / lam ** 2 + np.sin(lam * T) * _derivative_end(g, series.dt) / lam ** 3
    return CoefficientVector(f, "sin", series.t_max, tail_mass(series), closure)


def coefficients_cos(
    series: BoundaryCoefficientSeries, g_at_zero: np.ndarray | None = None, closure: bool = True
) -> CoefficientVector:
    """f_k = -lambda^-2 g_k(0) - lambda^-2 int cos(lambda t) g_k' dt."""
    if series.steps < 2:
        raise ConfigError("cos route needs at least 2 time steps")
    lam = series.basis.lam
    g = series.values
    g0 = series.at_zero if g_at_zero is None else np.asarray(g_at_zero, dtype=float)
    gp = np.gradient(g, series.dt, axis=1, edge_order=2 if series.steps >= 3 else 1)
    w = _trapezoid(series.steps, series.dt)
    f = -g0 / lam ** 2 - (np.cos(np.outer(lam, series.times)) * gp) @ w / lam ** 2
    if closure:
        f = f + np.sin(lam * series.t_max) * gp[:, -1] / lam ** 3
    return CoefficientVector(f, "cos", series.t_max, tail_mass(series), closure)


def _second_difference_weights(n_inner: int, dt: float) -> np.ndarray:
    # trapezoid on [0, T]: the t=0 integrand vanishes (sin 0) and the end term
    # outside the second-difference range is dropped
    return np.full(n_inner, dt)


def coefficients_second_derivative(
    series: BoundaryCoefficientSeries, g_at_zero: np.ndarray | None = None
) -> CoefficientVector:
    """f_k = -lambda^-2 g_k(0) + lambda^-3 int sin(lambda t) g_k'' dt."""
    if series.steps < 3:
        raise ConfigError("second-derivative route needs at least 3 time steps")
    lam = series.basis.lam
    g = series.values
    g0 = series.at_zero if g_at_zero is None else np.asarray(g_at_zero, dtype=float)
    d2 = (g[:, 2:] - 2.0 * g[:, 1:-1] + g[:, :-2]) / series.dt ** 2
    t = series.times[1:-1]
    w = _second_difference_weights(len(t), series.dt)
    f = -g0 / lam ** 2 + (np.sin(np.outer(lam, t)) * d2) @ w / lam ** 3
    return CoefficientVector(f, "second_derivative", series.t_max, tail_mass(series), False)


def coefficients(series: BoundaryCoefficientSeries, route: str = "sin", closure: bool = True) -> CoefficientVector:
    if route == "sin":
        return coefficients_sin(series, closure)
    if route == "cos":
        return coefficients_cos(series, closure=closure)
    if route in ("second_derivative", "d2"):
        return coefficients_second_derivative(series)
    raise ConfigError(f"unknown route {route!r}; choose from {ROUTES}")


def synthesize(coeffs: CoefficientVector, basis: SpectralBasis) -> ScalarField:
    """sum_k f_k psi_k on B's node grid."""
    if len(coeffs) != basis.K:
        raise ConfigError(f"{len(coeffs)} coefficients for a basis of {basis.K} modes")
    return basis.synthesize(coeffs.values)


def reconstruct(g: Sinogram, basis: SpectralBasis, route: str = "sin", closure: bool = True) -> ScalarField:
    return synthesize(coefficients(boundary_coefficients(g, basis), route, closure), basis)


def reconstruct_operator_formula(g: Sinogram, basis: SpectralBasis, domain: DomainSpec | None = None) -> ScalarField:
    """f = Eg(0) - int_0^T A^{-1/2} sin(tau A^{1/2}) E(g_tt)(tau) dtau.

    The sine propagator acts on each alpha(tau_j) through the basis; the sum
    over tau_j is accumulated in coefficient space, which is the same finite
    sum in another order. The E g(0) term is kept in full, so the result
    also carries the part of Eg(0) outside the span of the basis.
    """
    if domain is not None and domain != basis.domain:
        raise GeometryError("domain differs from the basis domain")
    if not g.surface.same_layout(basis.surface):
        raise GeometryError("sinogram detectors do not match the basis surface")
    series = build_source_series(g, basis.grid)
    alpha = series.project(basis)
    w = _second_difference_weights(len(series), g.dt)
    s = (np.sin(np.outer(basis.lam, series.times)) * alpha) @ w / basis.lam
    e0 = series.extender.extend(g.values[:, 0], method="direct").values
    return ScalarField(basis.grid, e0 - basis.synthesize(s).values)


@dataclass(frozen=True, eq=False)
class KernelSlice:
    """d/dnu_y K(x, y, t) for one point x: rows = detectors, columns = times."""

    point: np.ndarray
    values: np.ndarray
    dt: float


def _mode_values_at(basis: SpectralBasis, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(basis.domain.contains(pts, strict=True)):
        raise GeometryError("kernel evaluation points must lie strictly inside B")
    P = bilinear_matrix(basis.grid, pts)
    return np.asarray(P @ basis.modes.reshape(basis.K, -1).T)


def kernel_slice(basis: SpectralBasis, point, times: np.ndarray) -> KernelSlice:
    psi_x = _mode_values_at(basis, point)[0]
    coef = np.sin(np.outer(basis.lam, times)) / basis.lam[:, None] * psi_x[:, None]
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return KernelSlice(np.asarray(point, dtype=float), basis.traces.T @ coef, dt)


def kernel_backprojection(g: Sinogram, basis: SpectralBasis, points) -> np.ndarray:
    """f(x) = -int int dK/dnu_y(x, y, t) g(y, t) dA(y) dt at each point.

    Trapezoid in time and midpoint in space, with no finite-window closure,
    so it reproduces the sin route with ``closure=False``.
    """
    if not g.surface.same_layout(basis.surface):
        raise GeometryError("sinogram detectors do not match the basis surface")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    wt = _trapezoid(g.steps, g.dt)
    gw = g.values * basis.surface.weights[:, None] * wt[None, :]
    out = np.empty(len(pts))
    for i, x in enumerate(pts):
        ks = kernel_slice(basis, x, g.times)
        out[i] = -np.sum(ks.values * gw)
    return out


@dataclass(frozen=True, eq=False)
class ShiftedSolution:
    """u = p - Eg on B at selected time steps."""

    times: np.ndarray
    fields: np.ndarray


@dataclass(frozen=True, eq=False)
class RepresentationReport:
    times: np.ndarray
    discrepancy: np.ndarray
    lhs_norm: np.ndarray
    rhs_norm: np.ndarray
    reference_norm: float

    @property
    def max_relative(self) -> float:
        if self.reference_norm == 0:
            return float(np.max(self.discrepancy, initial=0.0))
        return float(np.max(self.discrepancy, initial=0.0) / self.reference_norm)


def validate_representation(
    f: ScalarField,
    c: SoundSpeedField,
    basis: SpectralBasis,
    domain: DomainSpec | None = None,
    *,
    sponge: SpongeLayer | None = None,
    dt: float | None = None,
    t_max: float | str = "adaptive",
    sample_times=(0.0, 0.25, 0.5),
    cfl: float = 0.5,
) -> RepresentationReport:
    """Compare u(t) = p - Eg with int_t^T A^{-1/2} sin((t - tau) A^{1/2}) alpha(tau) dtau.

    Both sides are compared as coefficient vectors on the truncated basis;
    discrepancies are absolute weighted norms, and ``reference_norm`` is the
    norm of the projected u(0).
    """
    sponge = sponge or SpongeLayer()
    if domain is not None and domain != basis.domain:
        raise GeometryError("domain differs from the basis domain")
    dt_eff = dt if dt is not None else cfl * min(f.grid.spacing) / c.c_max
    steps = [int(round(t / dt_eff)) for t in sample_times]
    run = simulate_forward(f, c, sponge, basis.surface, dt=dt_eff, t_max=t_max, cfl=cfl, snapshot_steps=steps)
    g = run.sinogram
    series = build_source_series(g, basis.grid)
    alpha = series.project(basis)
    tau = series.times
    ext = HarmonicExtender(basis.grid, basis.surface)
    lam = basis.lam
    disc, ln, rn = [], [], []
    u_fields = []
    for s in steps:
        if s >= g.steps:
            raise ConfigError(f"sample time {s * dt_eff:.4g} lies beyond the simulated window")
        u = run.snapshots[s] - ext.extend(g.values[:, s], method="direct").values
        u_fields.append(u)
        lhs = basis.project(u)
        t = s * dt_eff
        sel = tau >= t - 1e-12 * dt_eff
        w = np.full(sel.sum(), dt_eff)
        if len(w):
            w[0] *= 0.5
        rhs = (np.sin(np.outer(lam, t - tau[sel])) * alpha[:, sel]) @ w / lam
        disc.append(np.linalg.norm(lhs - rhs))
        ln.append(np.linalg.norm(lhs))
        rn.append(np.linalg.norm(rhs))
    ref = ln[steps.index(0)] if 0 in steps else max(ln, default=0.0)
    return RepresentationReport(np.asarray(sample_times, dtype=float), np.asarray(disc), np.asarray(ln),
                                np.asarray(rn), float(ref))


@dataclass(frozen=True, eq=False)
class ErrorReport:
    rel_l2: float
    max_abs: float
    truth_norm: float
    mode_errors: np.ndarray | None = None
    eigenspace_errors: np.ndarray | None = None
    tail_mass: np.ndarray | None = None

    def summary(self) -> dict:
        out = {"rel_l2": self.rel_l2, "max_abs": self.max_abs, "truth_norm": self.truth_norm}
        if self.mode_errors is not None:
            out["max_mode_error"] = float(np.max(self.mode_errors, initial=0.0))
        if self.tail_mass is not None:
            out["max_tail_mass"] = float(np.max(self.tail_mass, initial=0.0))
        return out


def error_metrics(
    estimate: ScalarField,
    truth: ScalarField,
    domain: DomainSpec,
    *,
    basis: SpectralBasis | None = None,
    speed: SoundSpeedField | None = None,
    tail: np.ndarray | None = None,
) -> ErrorReport:
    """Relative weighted L2 and max-abs error over the interior nodes of B."""
    def on_b(fld: ScalarField) -> ScalarField:
        if fld.grid.origin == domain.lower and fld.grid.upper == domain.upper:
            return fld
        return fld.restrict(domain)

    est, tru = on_b(estimate), on_b(truth)
    if est.grid != tru.grid:
        raise GeometryError("estimate and truth are on different grids")
    grid = est.grid
    interior = np.zeros(grid.shape, dtype=bool)
    interior[(slice(1, -1),) * grid.dim] = True
    if basis is not None:
        if basis.grid != grid:
            raise GeometryError("basis grid differs from the estimate grid")
        w = basis.weights
    else:
        c2 = 1.0 if speed is None else speed.restrict(domain).values ** 2
        w = np.where(interior, grid.cell_volume / c2, 0.0)
    diff = est.values - tru.values
    tn = float(np.sqrt(np.sum(tru.values ** 2 * w)))
    dn = float(np.sqrt(np.sum(diff ** 2 * w)))
    rel = dn / tn if tn > 0 else dn
    max_abs = float(np.max(np.abs(diff[interior]), initial=0.0))
    modes = spaces = None
    if basis is not None:
        de = basis.project(diff)
        modes = np.abs(de)
        spaces = np.array([np.sqrt(np.sum(de[cl] ** 2)) for cl in basis.clusters()])
    return ErrorReport(rel, max_abs, tn, modes, spaces, tail)
