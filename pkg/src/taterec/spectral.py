"""Dirichlet eigenpairs of A = -c^2 Lap on B, their boundary traces, and operator functions.

For constant speed on a rectangle the eigenpairs are separable sines, either
with the continuum eigenvalues or with the exact eigenvalues of the 5-point
stencil. For variable speed the generalized problem L psi = lambda^2 M psi
(M = diag(c^-2)) is solved by shift-invert Lanczos.

Inner products are weighted: <u, v> = sum over interior nodes of u v c^-2 h^d.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import BoundaryLoop, boundary_loop
from .errors import ConfigError, ConvergenceError, GeometryError
from .fields import (
    DomainSpec,
    Grid,
    ObservationSurface,
    ScalarField,
    SoundSpeedField,
    build_observation_surface,
)
from .fileio import crc32, read_basis_file, write_basis_file

__all__ = [
    "EigenPair",
    "SpectralBasis",
    "DiscreteOperator",
    "TRACE_SCHEMES",
    "resolvable_bound",
    "analytic_rectangle_basis",
    "assemble_operator",
    "compute_eigenpairs",
    "normal_derivative_trace",
    "apply_sine_propagator",
    "apply_cosine_propagator",
    "write_basis",
    "read_basis",
    "speed_checksum",
]

log = logging.getLogger(__name__)

TRACE_SCHEMES = ("exact", "green", "second_order")
# resolvable modes satisfy lambda * h / c_min <= RESOLUTION
RESOLUTION = 0.5
DENSE_LIMIT = 1500


def resolvable_bound(grid: Grid, c_min: float) -> float:
    """Largest lambda the grid resolves: lambda h / c_min <= 0.5."""
    return RESOLUTION * c_min / max(grid.spacing)


def _interior_mask(grid: Grid) -> np.ndarray:
    m = np.zeros(grid.shape, dtype=bool)
    m[(slice(1, -1),) * grid.dim] = True
    return m


def _restrict_speed(c: SoundSpeedField, domain: DomainSpec) -> SoundSpeedField:
    if c.grid.origin == domain.lower and c.grid.upper == domain.upper:
        return c
    sub = c.restrict(domain)
    return SoundSpeedField(sub.grid, sub.values, c.radius, c.center)


def speed_checksum(speed_values: np.ndarray) -> int:
    return crc32(np.ascontiguousarray(speed_values, dtype="<f8").tobytes())


@dataclass(frozen=True, eq=False)
class EigenPair:
    lam: float
    psi: ScalarField
    trace: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Ascending eigenpairs on B's node grid with detector traces.

    ``modes`` has shape (K, *grid.shape) and is zero on the boundary nodes;
    ``traces`` has shape (K, detectors).
    """

    domain: DomainSpec
    grid: Grid
    surface: ObservationSurface
    speed: SoundSpeedField
    lam: np.ndarray
    modes: np.ndarray
    traces: np.ndarray
    scheme: str
    bound: float
    method: str = "numerical"
    labels: tuple = ()
    residuals: np.ndarray | None = None
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or np.any(lam <= 0) or np.any(np.diff(lam) < 0):
            raise ConfigError("basis eigenvalues must be positive and nondecreasing")
        modes = np.asarray(self.modes, dtype=float).reshape(len(lam), *self.grid.shape)
        traces = np.asarray(self.traces, dtype=float).reshape(len(lam), self.surface.count)
        for name, a in (("lam", lam), ("modes", modes), ("traces", traces)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        w = np.where(_interior_mask(self.grid), self.grid.cell_volume / self.speed.values ** 2, 0.0)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return len(self.lam)

    def __len__(self) -> int:
        return self.K

    def pairs(self) -> list[EigenPair]:
        return [EigenPair(float(l), ScalarField(self.grid, m), t) for l, m, t in zip(self.lam, self.modes, self.traces)]

    def _values(self, v) -> np.ndarray:
        if isinstance(v, ScalarField):
            if v.grid != self.grid:
                try:
                    v = v.restrict(self.domain)
                except GeometryError as exc:
                    raise GeometryError(f"field is not sampled on the basis grid: {exc}") from exc
                if v.grid.counts != self.grid.counts:
                    raise GeometryError("field is not sampled on the basis grid")
            return v.values
        a = np.asarray(v, dtype=float)
        if a.shape != self.grid.shape:
            raise GeometryError(f"array of shape {a.shape} does not match basis grid {self.grid.shape}")
        return a

    def project(self, v) -> np.ndarray:
        """Weighted coefficients <v, psi_k> of a field on B."""
        return self.modes.reshape(self.K, -1) @ (self._values(v) * self.weights).ravel()

    def project_many(self, stack: np.ndarray) -> np.ndarray:
        """Coefficients of a stack of fields (T, *grid.shape) -> (K, T)."""
        flat = (np.asarray(stack) * self.weights).reshape(len(stack), -1)
        return self.modes.reshape(self.K, -1) @ flat.T

    def synthesize(self, coeffs: np.ndarray) -> ScalarField:
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (self.K,):
            raise ConfigError(f"{c.size} coefficients for a basis of {self.K} modes")
        return ScalarField(self.grid, np.tensordot(c, self.modes, axes=1))

    def inner(self, u, v) -> float:
        return float(np.sum(self._values(u) * self._values(v) * self.weights))

    def norm(self, u) -> float:
        return float(np.sqrt(self.inner(u, u)))

    def gram(self) -> np.ndarray:
        flat = self.modes.reshape(self.K, -1)
        return flat @ (flat * self.weights.ravel()).T

    def clusters(self, rtol: float = 1e-8) -> list[np.ndarray]:
        """Index groups of (numerically) degenerate eigenvalues."""
        return _clusters(self.lam, rtol)

    def truncate(self, K: int) -> "SpectralBasis":
        K = int(K)
        if not 0 < K <= self.K:
            raise ConfigError(f"cannot truncate a {self.K}-mode basis to {K}")
        res = None if self.residuals is None else self.residuals[:K]
        return replace(self, lam=self.lam[:K], modes=self.modes[:K], traces=self.traces[:K],
                       labels=self.labels[:K], residuals=res)

    def with_traces(self, scheme: str) -> "SpectralBasis":
        """Same modes, traces recomputed with another scheme."""
        if scheme == "exact":
            if self.method != "analytic":
                raise ConfigError("exact traces exist only for the analytic rectangle basis")
            traces = _analytic_traces(self.domain, self.labels, self.surface)
        else:
            traces = _discrete_traces(self.modes, boundary_loop(self.grid, self.surface), scheme)
        return replace(self, traces=traces, scheme=scheme)

    def summary(self) -> dict:
        return {
            "K": self.K,
            "method": self.method,
            "trace_scheme": self.scheme,
            "lambda_min": float(self.lam[0]) if self.K else None,
            "lambda_max": float(self.lam[-1]) if self.K else None,
            "resolvable_bound": self.bound,
            "bound_rule": f"lambda*h/c_min <= {RESOLUTION}",
        }


def _clusters(lam: np.ndarray, rtol: float) -> list[np.ndarray]:
    if len(lam) == 0:
        return []
    out, start = [], 0
    for k in range(1, len(lam) + 1):
        if k == len(lam) or lam[k] - lam[k - 1] > rtol * lam[k]:
            out.append(np.arange(start, k))
            start = k
    return out


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


def _nodal_traces(modes: np.ndarray, loop: BoundaryLoop, scheme: str) -> np.ndarray:
    flat = modes.reshape(len(modes), -1)
    ok = ~loop.corner
    t = np.zeros((len(modes), loop.count))
    psi1 = flat[:, loop.inner1[ok]]
    if scheme == "green":
        t[:, ok] = -psi1 / loop.step[ok]
    elif scheme == "second_order":
        psi2 = flat[:, loop.inner2[ok]]
        t[:, ok] = -(4.0 * psi1 - psi2) / (2.0 * loop.step[ok])
    else:
        raise ConfigError(f"unknown trace scheme {scheme!r}; choose from {TRACE_SCHEMES}")
    return t


def _discrete_traces(modes: np.ndarray, loop: BoundaryLoop, scheme: str) -> np.ndarray:
    """Per-detector normal derivatives of every mode.

    ``second_order`` interpolates one-sided nodal differences to the detectors.
    ``green`` maps -psi_1/h through the adjoint of the detector-to-node
    interpolation used by the harmonic extension, which makes the discrete
    Green identity (and hence the extension-coefficient identity) exact.
    """
    t = _nodal_traces(modes, loop, scheme)
    if scheme == "second_order":
        return (loop.to_detectors @ t.T).T
    return (loop.to_nodes.T @ (t * loop.length).T).T / loop.weights


def _traces_for(modes: np.ndarray, grid: Grid, surface: ObservationSurface, scheme: str) -> np.ndarray:
    return _discrete_traces(modes, boundary_loop(grid, surface), scheme)


def normal_derivative_trace(
    psi: ScalarField, surface: ObservationSurface, scheme: str = "second_order"
) -> np.ndarray:
    """Outward normal derivative of a field vanishing on the boundary, at each detector.

    The default is the one-sided second-order difference -(4 psi_1 - psi_2)/(2h)
    at boundary nodes, linearly interpolated along the boundary to the detectors.
    """
    grid = psi.grid
    if grid.origin != surface.domain.lower or grid.upper != surface.domain.upper:
        psi = psi.restrict(surface.domain)
        grid = psi.grid
    return _traces_for(psi.values[None], grid, surface, scheme)[0]


def _analytic_traces(domain: DomainSpec, labels: Sequence, surface: ObservationSurface) -> np.ndarray:
    pos, nrm = surface.positions, surface.normals
    out = np.empty((len(labels), surface.count))
    if domain.dim == 1:
        (a,), (x0,) = domain.sides, domain.lower
        for k, (n,) in enumerate(labels):
            d = np.sqrt(2.0 / a) * (n * np.pi / a) * np.cos(n * np.pi * (pos[:, 0] - x0) / a)
            out[k] = d * nrm[:, 0]
        return out
    (a, b), (x0, y0) = domain.sides, domain.lower
    C = 2.0 / np.sqrt(a * b)
    X, Y = (pos[:, 0] - x0) / a, (pos[:, 1] - y0) / b
    for k, (n, m) in enumerate(labels):
        dx = C * (n * np.pi / a) * np.cos(n * np.pi * X) * np.sin(m * np.pi * Y)
        dy = C * np.sin(n * np.pi * X) * (m * np.pi / b) * np.cos(m * np.pi * Y)
        out[k] = dx * nrm[:, 0] + dy * nrm[:, 1]
    return out


# ---------------------------------------------------------------------------
# closed-form rectangle basis
# ---------------------------------------------------------------------------


def _default_surface(domain: DomainSpec, grid: Grid) -> ObservationSurface:
    return build_observation_surface(domain, max(grid.counts[0] - 1, 2))


def analytic_rectangle_basis(
    domain: DomainSpec,
    K: int | None,
    grid: Grid | None = None,
    surface: ObservationSurface | None = None,
    *,
    discrete: bool = False,
    trace_scheme: str = "exact",
    max_index: int | None = None,
) -> SpectralBasis:
    """Separable sine modes for c = 1, sorted by lambda then (n, m).

    ``grid`` is B's node grid (or a grid containing it). ``discrete=True`` uses
    the exact eigenvalues of the 3/5-point stencil instead of the continuum
    ones; the sampled sines are exact discrete eigenvectors either way.
    ``K=None`` keeps every mode under the resolvability bound.
    """
    if grid is None:
        raise ConfigError("analytic basis needs the grid it is sampled on")
    if grid.origin != domain.lower or grid.upper != domain.upper:
        grid = domain.node_grid(grid)
    if surface is None:
        surface = _default_surface(domain, grid)
    d = domain.dim
    sides = domain.sides
    hs = grid.spacing
    limits = [grid.counts[a] - 1 if max_index is None else int(max_index) for a in range(d)]
    axes = [np.arange(1, L) if max_index is None else np.arange(1, L + 1) for L in limits]
    idx = np.array(np.meshgrid(*axes, indexing="ij")).reshape(d, -1).T
    if discrete:
        lam2 = sum((4.0 / hs[a] ** 2) * np.sin(idx[:, a] * np.pi * hs[a] / (2 * sides[a])) ** 2 for a in range(d))
    else:
        lam2 = sum((idx[:, a] * np.pi / sides[a]) ** 2 for a in range(d))
    lam = np.sqrt(lam2)
    order = np.lexsort(tuple(idx[:, a] for a in reversed(range(d))) + (lam,))
    lam, idx = lam[order], idx[order]
    bound = resolvable_bound(grid, 1.0)
    if K is None:
        K = int(np.searchsorted(lam, bound, side="right"))
    K = int(K)
    if K < 1 or K > len(lam):
        raise ConfigError(f"K={K} exceeds the mode table of {len(lam)} modes")
    lam, idx = lam[:K], idx[:K]
    mesh = grid.mesh()
    interior = _interior_mask(grid)
    modes = np.empty((K, *grid.shape))
    C = np.sqrt(2.0 ** d / np.prod(sides))
    for k, nm in enumerate(idx):
        v = np.full(grid.shape, C)
        for a in range(d):
            v = v * np.sin(nm[a] * np.pi * (mesh[a] - domain.lower[a]) / sides[a])
        modes[k] = np.where(interior, v, 0.0)
    labels = tuple(tuple(int(x) for x in nm) for nm in idx)
    if trace_scheme == "exact":
        traces = _analytic_traces(domain, labels, surface)
    else:
        traces = _traces_for(modes, grid, surface, trace_scheme)
    speed = SoundSpeedField(grid, np.ones(grid.shape), 0.0, domain.center)
    return SpectralBasis(
        domain, grid, surface, speed, lam, modes, traces, trace_scheme, bound,
        method="analytic", labels=labels,
    )


# ---------------------------------------------------------------------------
# numerical basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Negated 3/5-point Dirichlet Laplacian ``stiffness`` and ``mass`` = c^-2 on interior nodes."""

    domain: DomainSpec
    grid: Grid
    speed: SoundSpeedField
    stiffness: sp.csr_matrix
    mass: np.ndarray

    @property
    def size(self) -> int:
        return self.stiffness.shape[0]

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(n - 2 for n in self.grid.counts)


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr") / (h * h)


def assemble_operator(c: SoundSpeedField, domain: DomainSpec) -> DiscreteOperator:
    """Stiffness and mass matrices of the weighted Dirichlet problem on B's nodes."""
    speed = _restrict_speed(c, domain)
    grid = speed.grid
    n = [m - 2 for m in grid.counts]
    if grid.dim == 1:
        L = _second_difference(n[0], grid.spacing[0])
    else:
        Tx = _second_difference(n[0], grid.spacing[0])
        Ty = _second_difference(n[1], grid.spacing[1])
        L = (sp.kron(Tx, sp.identity(n[1])) + sp.kron(sp.identity(n[0]), Ty)).tocsr()
    inner = speed.values[(slice(1, -1),) * grid.dim]
    return DiscreteOperator(domain, grid, speed, L, (1.0 / inner ** 2).ravel())


def _weyl_count(op: DiscreteOperator, lam: float) -> float:
    vol = op.grid.cell_volume
    if op.grid.dim == 1:
        return lam * np.sum(np.sqrt(op.mass)) * vol / np.pi
    return lam ** 2 * np.sum(op.mass) * vol / (4.0 * np.pi)


def _solve(op: DiscreteOperator, k: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    n = op.size
    if n <= DENSE_LIMIT:
        vals, vecs = sla.eigh(op.stiffness.toarray(), np.diag(op.mass), subset_by_index=[0, min(k, n) - 1])
        return vals, vecs
    M = sp.diags(op.mass, format="csc")
    try:
        vals, vecs = spla.eigsh(
            op.stiffness.tocsc(), k=min(k, n - 2), M=M, sigma=0.0, which="LM", tol=min(tol * 1e-3, 1e-12)
        )
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"eigensolver did not converge ({len(exc.eigenvalues)} of {k} pairs)", achieved=np.inf
        ) from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def compute_eigenpairs(
    op: DiscreteOperator,
    K: int | None = None,
    tol: float = 1e-10,
    *,
    surface: ObservationSurface | None = None,
    trace_scheme: str = "green",
    cluster_rtol: float = 1e-8,
) -> SpectralBasis:
    """Lowest eigenpairs of L psi = lambda^2 M psi, weighted-orthonormal.

    ``K=None`` returns every mode under the resolvability bound. Raises
    :class:`ConfigError` when a requested K exceeds the bound and
    :class:`ConvergenceError` when a residual exceeds ``tol``.
    """
    if not tol > 0:
        raise ConfigError("eigen tolerance must be positive")
    if trace_scheme == "exact":
        raise ConfigError("exact traces exist only for the analytic rectangle basis")
    grid = op.grid
    bound = resolvable_bound(grid, op.speed.c_min)
    n = op.size
    if K is None:
        k = min(int(np.ceil(1.15 * _weyl_count(op, bound))) + 10, n)
        while True:
            vals, vecs = _solve(op, k, tol)
            if np.sqrt(vals[-1]) > bound or len(vals) >= n - 2 or k >= n:
                break
            k = min(int(1.4 * k) + 10, n)
        keep = np.sqrt(vals) <= bound
        vals, vecs = vals[keep], vecs[:, keep]
        if len(vals) == 0:
            raise ConfigError("no eigenmode is resolvable on this grid")
    else:
        K = int(K)
        if K < 1:
            raise ConfigError("K must be positive")
        vals, vecs = _solve(op, K, tol)
        if len(vals) < K:
            raise ConfigError(f"only {len(vals)} modes exist on this grid, K={K} requested")
        if np.sqrt(vals[K - 1]) > bound * (1 + 1e-12):
            raise ConfigError(
                f"K={K} exceeds the resolvability bound: lambda_K={np.sqrt(vals[K - 1]):.4g} > {bound:.4g}"
            )
    lam2 = vals
    Mv = vecs * op.mass[:, None]
    # weighted normalization and re-orthogonalization of degenerate clusters
    G = vecs.T @ Mv
    for cl in _clusters(np.sqrt(np.abs(lam2)), cluster_rtol):
        if len(cl) == 1:
            vecs[:, cl] /= np.sqrt(G[cl[0], cl[0]])
        else:
            w, U = np.linalg.eigh(G[np.ix_(cl, cl)])
            vecs[:, cl] = vecs[:, cl] @ (U @ np.diag(w ** -0.5) @ U.T)
    Mv = vecs * op.mass[:, None]
    resid = np.linalg.norm(op.stiffness @ vecs - Mv * lam2, axis=0) / (lam2 * np.linalg.norm(Mv, axis=0))
    if np.any(resid > tol):
        raise ConvergenceError(
            f"eigen residual {resid.max():.3e} exceeds tol {tol:.1e}", achieved=float(resid.max())
        )
    gram_dev = np.max(np.abs(vecs.T @ Mv - np.eye(vecs.shape[1])))
    if gram_dev > 1e-8:
        raise ConvergenceError(f"weighted Gram deviation {gram_dev:.3e} exceeds 1e-8", achieved=float(gram_dev))
    # deterministic sign: largest-magnitude entry positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    K = vecs.shape[1]
    modes = np.zeros((K, *grid.shape))
    modes[(slice(None),) + (slice(1, -1),) * grid.dim] = (vecs.T / np.sqrt(grid.cell_volume)).reshape(
        K, *op.interior_shape
    )
    if surface is None:
        surface = _default_surface(op.domain, grid)
    traces = _traces_for(modes, grid, surface, trace_scheme)
    log.info("eigen: %d modes, lambda in [%.4g, %.4g], bound %.4g", K, np.sqrt(lam2[0]), np.sqrt(lam2[-1]), bound)
    return SpectralBasis(
        op.domain, grid, surface, op.speed, np.sqrt(lam2), modes, traces, trace_scheme, bound,
        method="numerical", residuals=resid,
    )


# ---------------------------------------------------------------------------
# operator functions
# ---------------------------------------------------------------------------


def apply_sine_propagator(basis: SpectralBasis, v, t: float) -> ScalarField:
    """A^{-1/2} sin(t A^{1/2}) v on the truncated basis."""
    if basis.K == 0:
        raise ConfigError("empty basis")
    coeffs = basis.project(v)
    return basis.synthesize(np.sin(t * basis.lam) / basis.lam * coeffs)


def apply_cosine_propagator(basis: SpectralBasis, v, t: float) -> ScalarField:
    """cos(t A^{1/2}) v on the truncated basis."""
    if basis.K == 0:
        raise ConfigError("empty basis")
    return basis.synthesize(np.cos(t * basis.lam) * basis.project(v))


# ---------------------------------------------------------------------------
# cache files
# ---------------------------------------------------------------------------


def write_basis(path, basis: SpectralBasis) -> None:
    write_basis_file(
        path,
        domain=basis.domain,
        grid=basis.grid,
        surface=basis.surface,
        speed_crc=speed_checksum(basis.speed.values),
        scheme=basis.scheme,
        speed_values=basis.speed.values,
        lam=basis.lam,
        modes=basis.modes,
        traces=basis.traces,
    )


def read_basis(path, speed: SoundSpeedField | None = None) -> SpectralBasis:
    """Load a cached basis; when ``speed`` is given its checksum must match."""
    raw = read_basis_file(path)
    domain, grid = raw["domain"], raw["grid"]
    sv = raw["speed_values"]
    if speed is not None:
        sub = _restrict_speed(speed, domain)
        if speed_checksum(sub.values) != raw["speed_crc"]:
            raise ConfigError(f"basis cache {path} was built for a different sound speed")
        c = sub
    else:
        c = SoundSpeedField(grid, sv, np.inf, domain.center)
    bound = resolvable_bound(grid, float(c.c_min))
    method = "analytic" if raw["scheme"] == "exact" else "numerical"
    return SpectralBasis(domain, grid, raw["surface"], c, raw["lam"], raw["modes"], raw["traces"],
                         raw["scheme"], bound, method=method)
