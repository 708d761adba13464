"""Grids, domains, phantoms, sound-speed fields and observation surfaces.

Everything here is an immutable value type. Arrays held by the dataclasses
are copied on construction and flagged read-only, so instances can be shared
freely between stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, GeometryError

__all__ = [
    "Grid",
    "DomainSpec",
    "ScalarField",
    "SoundSpeedField",
    "ObservationSurface",
    "Sinogram",
    "Gaussian",
    "SmoothBump",
    "Disk",
    "Ring",
    "SineBox",
    "PhantomSpec",
    "make_grid",
    "sample_phantom",
    "sample_sound_speed",
    "build_observation_surface",
]

# relative tolerance for "this coordinate lies on a grid line"
_ALIGN_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.flags.writeable = False
    return a


def _as_tuple(v, n: int | None = None, kind=float) -> tuple:
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64 if kind is float else np.int64))
    if n is not None and arr.size == 1 and n > 1:
        arr = np.repeat(arr, n)
    return tuple(kind(x) for x in arr)


# ---------------------------------------------------------------------------
# grids and domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform axis-aligned grid in one or two dimensions.

    Node ``i`` on axis ``a`` sits at ``origin[a] + i * spacing[a]``; coordinates
    are always formed that way, never by accumulation.
    """

    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", _as_tuple(self.origin))
        object.__setattr__(self, "spacing", _as_tuple(self.spacing, len(self.origin)))
        object.__setattr__(self, "counts", _as_tuple(self.counts, len(self.origin), int))
        d = len(self.origin)
        if d not in (1, 2) or len(self.spacing) != d or len(self.counts) != d:
            raise GeometryError(f"grid must be 1D or 2D with matching axes, got origin={self.origin}")
        if any(not np.isfinite(h) or h <= 0 for h in self.spacing):
            raise GeometryError(f"grid spacing must be positive, got {self.spacing}")
        if any(n < 3 for n in self.counts):
            raise GeometryError(f"grid needs at least 3 nodes per axis, got {self.counts}")

    @property
    def dim(self) -> int:
        return len(self.origin)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + (n - 1) * h for o, n, h in zip(self.origin, self.counts, self.spacing))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + np.arange(self.counts[a]) * self.spacing[a]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.axis(a) for a in range(self.dim)], indexing="ij"))

    def locate(self, value: float, a: int) -> int | None:
        """Index of the grid line through ``value`` on axis ``a``, or None."""
        h = self.spacing[a]
        i = int(round((value - self.origin[a]) / h))
        if 0 <= i < self.counts[a] and abs(self.origin[a] + i * h - value) <= _ALIGN_TOL * h:
            return i
        return None

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.asarray(self.origin)
        hi = np.asarray(self.upper)
        return np.all((pts >= lo) & (pts <= hi), axis=1)


def make_grid(extent: Sequence, counts: Sequence[int] | int) -> Grid:
    """Uniform grid covering ``extent = (lower, upper)`` inclusively."""
    lower, upper = extent
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
    if counts.size == 1 and lower.size > 1:
        counts = np.repeat(counts, lower.size)
    if lower.shape != upper.shape or counts.shape != lower.shape:
        raise GeometryError("extent corners and counts must have the same dimension")
    if np.any(counts < 3):
        raise GeometryError(f"grid needs at least 3 nodes per axis, got {tuple(counts)}")
    if np.any(upper <= lower):
        raise GeometryError(f"extent must have positive volume, got {lower} .. {upper}")
    spacing = (upper - lower) / (counts - 1)
    return Grid(tuple(lower), tuple(spacing), tuple(int(n) for n in counts))


@dataclass(frozen=True)
class DomainSpec:
    """The rectangle (or interval) B whose boundary carries the detectors."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", _as_tuple(self.lower))
        object.__setattr__(self, "upper", _as_tuple(self.upper))
        if len(self.lower) not in (1, 2) or len(self.lower) != len(self.upper):
            raise GeometryError("domain corners must both be 1D or both 2D")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise GeometryError(f"degenerate domain {self.lower} .. {self.upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> tuple[float, ...]:
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    @property
    def center(self) -> tuple[float, ...]:
        return tuple(0.5 * (l + u) for l, u in zip(self.lower, self.upper))

    @property
    def diameter(self) -> float:
        return float(np.hypot.reduce(self.sides)) if self.dim == 2 else self.sides[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def perimeter(self) -> float:
        # counting measure of the two endpoints in 1D
        return 2.0 * sum(self.sides) if self.dim == 2 else 2.0

    def strictly_inside(self, grid: Grid) -> bool:
        return all(
            o < l and u < g for o, l, u, g in zip(grid.origin, self.lower, self.upper, grid.upper)
        )

    def node_slices(self, grid: Grid) -> tuple[slice, ...]:
        """Index slices of ``grid`` covering closed B; B's corners must be nodes."""
        if grid.dim != self.dim:
            raise GeometryError("domain and grid dimension differ")
        out = []
        for a in range(self.dim):
            i0 = grid.locate(self.lower[a], a)
            i1 = grid.locate(self.upper[a], a)
            if i0 is None or i1 is None:
                raise GeometryError(f"domain boundary is not aligned with grid lines on axis {a}")
            if i1 - i0 < 2:
                raise GeometryError("domain must span at least two grid cells per axis")
            out.append(slice(i0, i1 + 1))
        return tuple(out)

    def node_grid(self, grid: Grid) -> Grid:
        """The sub-grid of ``grid`` on closed B."""
        sl = self.node_slices(grid)
        origin = tuple(grid.origin[a] + s.start * grid.spacing[a] for a, s in enumerate(sl))
        return Grid(origin, grid.spacing, tuple(s.stop - s.start for s in sl))

    def contains(self, points: np.ndarray, strict: bool = True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if strict:
            return np.all((pts > lo) & (pts < hi), axis=1)
        return np.all((pts >= lo) & (pts <= hi), axis=1)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples of a function on every node of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.grid.size:
            raise GeometryError(f"{v.size} values for a grid of {self.grid.size} nodes")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ConfigError("field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    def restrict(self, domain: DomainSpec) -> "ScalarField":
        return ScalarField(domain.node_grid(self.grid), self.values[domain.node_slices(self.grid)])

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True, eq=False)
class SoundSpeedField:
    """Positive sound speed equal to 1 outside the ball ``|x - center| <= radius``."""

    grid: Grid
    values: np.ndarray
    radius: float
    center: tuple[float, ...]
    c_min: float = field(init=False)
    c_max: float = field(init=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ConfigError("sound speed contains non-finite values")
        if v.min() <= 0:
            raise ConfigError(f"sound speed must be positive, minimum is {v.min():.6g}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "center", _as_tuple(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "c_min", float(v.min()))
        object.__setattr__(self, "c_max", float(v.max()))
        if np.isfinite(self.radius):
            r = _distance(self.grid.mesh(), self.center)
            if np.any(v[r > self.radius] != 1.0):
                raise ConfigError("sound speed differs from 1 outside its homogenization radius")

    @classmethod
    def constant(cls, grid: Grid, value: float = 1.0) -> "SoundSpeedField":
        center = tuple(0.5 * (o + u) for o, u in zip(grid.origin, grid.upper))
        radius = 0.0 if value == 1.0 else np.inf
        return cls(grid, np.full(grid.shape, float(value)), radius, center)

    @property
    def is_constant(self) -> bool:
        return self.c_min == self.c_max

    def restrict(self, domain: DomainSpec) -> ScalarField:
        return ScalarField(domain.node_grid(self.grid), self.values[domain.node_slices(self.grid)])

    def scaled(self, s: float) -> "SoundSpeedField":
        """Speed multiplied by ``s`` (test helper; breaks c=1 far away unless s=1)."""
        return SoundSpeedField(self.grid, self.values * s, np.inf if s != 1 else self.radius, self.center)


# ---------------------------------------------------------------------------
# phantom primitives
# ---------------------------------------------------------------------------


def _distance(mesh: tuple[np.ndarray, ...], center: Sequence[float]) -> np.ndarray:
    r2 = np.zeros_like(mesh[0])
    for x, c in zip(mesh, center):
        r2 += (x - c) ** 2
    return np.sqrt(r2)


def _cutoff(s: np.ndarray) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1 - s^2)) on |s| < 1, scaled to 1 at s = 0."""
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _far_corner(center, lower, upper) -> float:
    return float(np.sqrt(sum(max(abs(c - l), abs(u - c)) ** 2 for c, l, u in zip(center, lower, upper))))


@dataclass(frozen=True)
class Gaussian:
    """amp * (exp(-r^2 / (2 width^2)) - floor), clipped at zero beyond ``cutoff`` widths.

    ``floor`` is the Gaussian's value at the cutoff radius, so the profile is
    continuous there and mirrored nodes never straddle a jump.
    """

    center: tuple[float, ...]
    width: float
    amp: float = 1.0
    cutoff: float = 5.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _as_tuple(self.center))
        if self.width <= 0 or self.cutoff <= 0:
            raise ConfigError("gaussian width and cutoff must be positive")

    def evaluate(self, mesh) -> np.ndarray:
        r = _distance(mesh, self.center)
        floor = np.exp(-0.5 * self.cutoff ** 2)
        return self.amp * np.maximum(np.exp(-0.5 * (r / self.width) ** 2) - floor, 0.0)

    def support_radius(self, ref) -> float:
        return float(np.linalg.norm(np.subtract(self.center, ref))) + self.cutoff * self.width


@dataclass(frozen=True)
class SmoothBump:
    """amp * exp(1 - 1/(1 - (r/radius)^2)) inside the ball, zero outside."""

    center: tuple[float, ...]
    radius: float
    amp: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _as_tuple(self.center))
        if self.radius <= 0:
            raise ConfigError("bump radius must be positive")

    def evaluate(self, mesh) -> np.ndarray:
        return self.amp * _cutoff(_distance(mesh, self.center) / self.radius)

    def support_radius(self, ref) -> float:
        return float(np.linalg.norm(np.subtract(self.center, ref))) + self.radius


@dataclass(frozen=True)
class Disk:
    """Characteristic function of the closed ball, times amp."""

    center: tuple[float, ...]
    radius: float
    amp: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _as_tuple(self.center))
        if self.radius <= 0:
            raise ConfigError("disk radius must be positive")

    def evaluate(self, mesh) -> np.ndarray:
        return np.where(_distance(mesh, self.center) <= self.radius, float(self.amp), 0.0)

    def support_radius(self, ref) -> float:
        return float(np.linalg.norm(np.subtract(self.center, ref))) + self.radius


@dataclass(frozen=True)
class Ring:
    """Smooth annulus: the bump profile applied to (r - radius)/width."""

    center: tuple[float, ...]
    radius: float
    width: float
    amp: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _as_tuple(self.center))
        if self.radius <= 0 or self.width <= 0:
            raise ConfigError("ring radius and width must be positive")

    def evaluate(self, mesh) -> np.ndarray:
        return self.amp * _cutoff((_distance(mesh, self.center) - self.radius) / self.width)

    def support_radius(self, ref) -> float:
        return float(np.linalg.norm(np.subtract(self.center, ref))) + self.radius + self.width


@dataclass(frozen=True)
class SineBox:
    """amp * prod_a sin(m_a pi (x_a - lower_a)/(upper_a - lower_a)) on the closed box."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    modes: tuple[int, ...]
    amp: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", _as_tuple(self.lower))
        object.__setattr__(self, "upper", _as_tuple(self.upper))
        object.__setattr__(self, "modes", _as_tuple(self.modes, len(self.lower), int))
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ConfigError("sine box must have positive extent")

    def evaluate(self, mesh) -> np.ndarray:
        out = np.full(mesh[0].shape, float(self.amp))
        inside = np.ones(mesh[0].shape, dtype=bool)
        for x, l, u, m in zip(mesh, self.lower, self.upper, self.modes):
            out *= np.sin(m * np.pi * (x - l) / (u - l))
            inside &= (x >= l) & (x <= u)
        return np.where(inside, out, 0.0)

    def support_radius(self, ref) -> float:
        return _far_corner(ref, self.lower, self.upper)


Primitive = Union[Gaussian, SmoothBump, Disk, Ring, SineBox]


@dataclass(frozen=True)
class PhantomSpec:
    """A finite sum of primitives. Also used for sound-speed perturbations."""

    primitives: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def __add__(self, other: "PhantomSpec") -> "PhantomSpec":
        return PhantomSpec(self.primitives + other.primitives)

    def __len__(self) -> int:
        return len(self.primitives)


def sample_phantom(spec: PhantomSpec, grid: Grid) -> ScalarField:
    """Evaluate the sum of primitives at every node of ``grid``."""
    mesh = grid.mesh()
    values = np.zeros(grid.shape)
    for p in spec.primitives:
        values = values + p.evaluate(mesh)
    return ScalarField(grid, values)


def sample_sound_speed(
    spec: PhantomSpec, grid: Grid, center: Sequence[float] | None = None
) -> SoundSpeedField:
    """Speed ``1 + sum(primitives)``; R is the smallest ball about ``center`` holding all supports."""
    if center is None:
        center = tuple(0.5 * (o + u) for o, u in zip(grid.origin, grid.upper))
    center = _as_tuple(center)
    values = 1.0 + sample_phantom(spec, grid).values
    if values.min() <= 0:
        raise ConfigError(f"sound speed spec is not positive (minimum {values.min():.6g})")
    radius = max((p.support_radius(center) for p in spec.primitives), default=0.0)
    return SoundSpeedField(grid, values, radius, center)


# ---------------------------------------------------------------------------
# observation surface and data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationSurface:
    """Detector samples on the boundary of B, traversed counter-clockwise once."""

    domain: DomainSpec
    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        d = self.domain.dim
        pos = np.asarray(self.positions, dtype=float).reshape(-1, d)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, d)
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (len(pos) == len(nrm) == len(w)) or len(w) < 2:
            raise GeometryError("surface arrays must have one row per detector")
        if np.any(w <= 0):
            raise GeometryError("detector weights must be positive")
        if abs(w.sum() - self.domain.perimeter) > 1e-12 * self.domain.perimeter:
            raise GeometryError(f"weights sum to {w.sum():.15g}, perimeter is {self.domain.perimeter:.15g}")
        if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-12):
            raise GeometryError("normals must be unit length")
        if not np.all(self.domain.contains(pos, strict=False)):
            raise GeometryError("detector outside the closed domain")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "normals", _frozen(nrm))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def count(self) -> int:
        return len(self.weights)

    def arc_parameter(self) -> np.ndarray:
        """Counter-clockwise arc length from the lower-left corner (1D: 0 and 1)."""
        return boundary_arc_parameter(self.domain, self.positions, self.normals)

    def same_layout(self, other: "ObservationSurface") -> bool:
        return (
            self.domain == other.domain
            and self.count == other.count
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.normals, other.normals)
            and np.array_equal(self.weights, other.weights)
        )


def boundary_arc_parameter(domain: DomainSpec, positions: np.ndarray, normals: np.ndarray) -> np.ndarray:
    pos = np.atleast_2d(positions)
    if domain.dim == 1:
        return (normals[:, 0] > 0).astype(float)
    (x0, y0), (x1, y1) = domain.lower, domain.upper
    a, b = x1 - x0, y1 - y0
    nx, ny = normals[:, 0], normals[:, 1]
    x, y = pos[:, 0], pos[:, 1]
    s = np.empty(len(pos))
    bottom, right, top, left = ny < -0.5, nx > 0.5, ny > 0.5, nx < -0.5
    s[bottom] = x[bottom] - x0
    s[right] = a + (y[right] - y0)
    s[top] = a + b + (x1 - x[top])
    s[left] = 2 * a + b + (y1 - y[left])
    return s


def build_observation_surface(domain: DomainSpec, n_per_side: int = 100) -> ObservationSurface:
    """Midpoint-rule detectors, ``n_per_side`` per side (1D: the two endpoints)."""
    if int(n_per_side) < 2:
        raise ConfigError("n_per_side must be at least 2")
    n = int(n_per_side)
    if domain.dim == 1:
        (x0,), (x1,) = domain.lower, domain.upper
        return ObservationSurface(domain, [[x0], [x1]], [[-1.0], [1.0]], [1.0, 1.0])
    (x0, y0), (x1, y1) = domain.lower, domain.upper
    a, b = x1 - x0, y1 - y0
    u = (np.arange(n) + 0.5) / n
    sides = [
        (np.column_stack([x0 + a * u, np.full(n, y0)]), (0.0, -1.0), a / n),
        (np.column_stack([np.full(n, x1), y0 + b * u]), (1.0, 0.0), b / n),
        (np.column_stack([x1 - a * u, np.full(n, y1)]), (0.0, 1.0), a / n),
        (np.column_stack([np.full(n, x0), y1 - b * u]), (-1.0, 0.0), b / n),
    ]
    pos = np.vstack([s[0] for s in sides])
    nrm = np.vstack([np.tile(s[1], (n, 1)) for s in sides])
    w = np.concatenate([np.full(n, s[2]) for s in sides])
    return ObservationSurface(domain, pos, nrm, w)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Boundary pressure, one row per detector and one column per time step."""

    surface: ObservationSurface
    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.surface.count or v.shape[1] < 1:
            raise GeometryError(f"sinogram shape {v.shape} does not match {self.surface.count} detectors")
        if not np.all(np.isfinite(v)):
            raise ConfigError("sinogram contains non-finite values")
        if not self.dt > 0:
            raise ConfigError("sinogram dt must be positive")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    @property
    def t_max(self) -> float:
        return self.dt * (self.steps - 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps)

    def with_values(self, values: np.ndarray) -> "Sinogram":
        return Sinogram(self.surface, self.dt, values)
